#![no_main]

use libfuzzer_sys::fuzz_target;
use msbench_core::io::decode_image;
use msbench_core::Raster;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_image(data) {
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
