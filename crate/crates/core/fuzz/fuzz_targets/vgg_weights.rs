#![no_main]
//! Encoder weight files in safetensors format.

use libfuzzer_sys::fuzz_target;
use stylepass::backbones::Vgg16;

fuzz_target!(|data: &[u8]| {
    let _ = Vgg16::from_safetensors(data);
});
