#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use msbench_core::dataset::parse_manifest_str;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_manifest_str(text, Path::new("/data"));
    }
});
