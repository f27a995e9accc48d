#![no_main]

use libfuzzer_sys::fuzz_target;
use msbench_core::DetectionSet;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = DetectionSet::from_json(text) {
        let s = serde_json::to_string(&set).unwrap();
        assert_eq!(DetectionSet::from_json(&s).unwrap(), set);
    }
});
