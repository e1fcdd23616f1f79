#![no_main]
//! Protobuf decoding of exported graphs.

use libfuzzer_sys::fuzz_target;
use stylepass::network::inspect_onnx;

fuzz_target!(|data: &[u8]| {
    let _ = inspect_onnx(data);
});
