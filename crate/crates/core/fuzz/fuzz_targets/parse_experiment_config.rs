#![no_main]

use libfuzzer_sys::fuzz_target;
use msbench_core::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_str_any(text) {
        let _ = cfg.to_json_value();
    }
});
