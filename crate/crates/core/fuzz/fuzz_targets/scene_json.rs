#![no_main]
//! Scene files: parsing and validation only, no rendering.

use libfuzzer_sys::fuzz_target;
use stylepass::render_sim::SceneSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(scene) = SceneSpec::from_json(text) {
            let back = SceneSpec::from_json(&scene.to_json().unwrap()).unwrap();
            assert_eq!(back, scene);
        }
    }
});
