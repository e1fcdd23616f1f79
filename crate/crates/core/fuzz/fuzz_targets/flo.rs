#![no_main]
//! Middlebury `.flo` decoding.

use libfuzzer_sys::fuzz_target;
use stylepass::imaging::parse_flo;

fuzz_target!(|data: &[u8]| {
    if let Ok(flow) = parse_flo(data) {
        let again = parse_flo(&flow.to_flo_bytes()).expect("re-encoded flow parses");
        assert_eq!(again.dx().len(), flow.dx().len());
    }
});
