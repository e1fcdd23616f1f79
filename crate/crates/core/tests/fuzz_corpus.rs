//! Replays the checked-in fuzz seeds through every parser so regressions
//! show up without the fuzzing toolchain.

use std::path::PathBuf;

use stylepass::backbones::Vgg16;
use stylepass::config::RunConfig;
use stylepass::imaging::parse_flo;
use stylepass::metrics::SequenceMetricsReport;
use stylepass::network::inspect_onnx;
use stylepass::render_sim::SceneSpec;
use stylepass::trainer::parse_checkpoint;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .flatten()
        .map(|e| {
            let p = e.path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn text(bytes: &[u8]) -> Option<&str> {
    std::str::from_utf8(bytes).ok()
}

#[test]
fn checkpoint_seeds() {
    let mut accepted = 0;
    for (_, b) in seeds("checkpoint") {
        if let Ok(c) = parse_checkpoint(&b) {
            assert_eq!(c.to_bytes(), b);
            accepted += 1;
        }
    }
    assert!(accepted >= 1);
}

#[test]
fn flo_seeds() {
    for (p, b) in seeds("flo") {
        if let Ok(f) = parse_flo(&b) {
            let again = parse_flo(&f.to_flo_bytes()).unwrap();
            assert_eq!(again.dx(), f.dx(), "{}", p.display());
        }
    }
}

#[test]
fn scene_seeds() {
    for (_, b) in seeds("scene_json") {
        if let Some(Ok(s)) = text(&b).map(SceneSpec::from_json) {
            assert_eq!(SceneSpec::from_json(&s.to_json().unwrap()).unwrap(), s);
        }
    }
}

#[test]
fn run_config_seeds() {
    for (_, b) in seeds("run_config") {
        if let Some(t) = text(&b) {
            let _ = RunConfig::from_json(t);
        }
    }
}

#[test]
fn report_seeds() {
    for (_, b) in seeds("metrics_report") {
        if let Some(t) = text(&b) {
            let _ = SequenceMetricsReport::from_json(t);
        }
    }
}

#[test]
fn onnx_seeds() {
    for (_, b) in seeds("onnx_inspect") {
        let _ = inspect_onnx(&b);
    }
}

#[test]
fn weight_seeds() {
    for (_, b) in seeds("vgg_weights") {
        let _ = Vgg16::from_safetensors(&b);
    }
}
