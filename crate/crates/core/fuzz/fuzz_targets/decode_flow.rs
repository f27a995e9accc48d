#![no_main]

use libfuzzer_sys::fuzz_target;
use msbench_core::io::{decode_flow, encode_flow};

fuzz_target!(|data: &[u8]| {
    if let Ok(flow) = decode_flow(data) {
        let again = decode_flow(&encode_flow(&flow)).expect("round trip");
        assert_eq!((again.height(), again.width()), (flow.height(), flow.width()));
        for (a, b) in again.data().iter().zip(flow.data()) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }
});
