#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cloud) = voxfuse::kitti_io::parse_point_cloud(data) {
        assert_eq!(cloud.len(), data.len() / 16);
    }
});
