#![no_main]
//! Metric report JSON.

use libfuzzer_sys::fuzz_target;
use stylepass::metrics::SequenceMetricsReport;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = SequenceMetricsReport::from_json(text);
    }
});
