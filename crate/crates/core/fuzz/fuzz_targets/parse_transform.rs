#![no_main]

use libfuzzer_sys::fuzz_target;
use msbench_core::PlanarTransform;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = serde_json::from_slice::<PlanarTransform>(data) {
        let (x, y) = t.apply(3.0, -2.0);
        let _ = t.inverse().map(|inv| inv.apply(x, y));
    }
});
