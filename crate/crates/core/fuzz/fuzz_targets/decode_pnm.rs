#![no_main]

use libfuzzer_sys::fuzz_target;
use msbench_core::io::{decode_pnm, encode_pnm};
use msbench_core::Raster;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pnm(data) {
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let again = decode_pnm(&encode_pnm(&img)).expect("re-encoded image decodes");
        assert_eq!((again.height(), again.width(), again.channels()), (img.height(), img.width(), img.channels()));
    }
});
