#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = voxfuse::kitti_io::parse_tensor(data, 8.0) {
        assert_eq!(map.data.len(), map.channels * map.height * map.width);
    }
});
