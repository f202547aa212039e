#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(image) = voxfuse::kitti_io::parse_image(data) {
        assert_eq!(image.width * image.height * 3, image.data.len());
    }
});
