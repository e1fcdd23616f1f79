#![no_main]
//! Checkpoint decoding must reject malformed input without panicking, and
//! anything it accepts must re-encode to the same bytes.

use libfuzzer_sys::fuzz_target;
use stylepass::trainer::parse_checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = parse_checkpoint(data) {
        assert_eq!(ckpt.to_bytes(), data);
    }
});
