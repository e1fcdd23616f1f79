//! Corpus ingestion from disk.

use std::path::Path;

use stylepass::datasets::{build_mixed_dataset, write_procedural_corpus, CorpusSpec, LoadMode};
use stylepass::Error;

/// Ten photo files, one of them garbage, and four synthetic frames.
fn corpus_with_one_corrupt_file(dir: &Path) -> (CorpusSpec, std::path::PathBuf) {
    let (photos, synth) = write_procedural_corpus(dir, 9, 4, 16, 0).unwrap();
    let bad = photos.join("corrupt.png");
    std::fs::write(&bad, b"\x89PNG\r\n\x1a\nnot really a png").unwrap();
    let spec = CorpusSpec {
        photo_dir: photos,
        synthetic_dir: Some(synth),
        resize_to: (16, 16),
        ..Default::default()
    };
    (spec, bad)
}

#[test]
fn strict_mode_names_the_corrupt_file() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, bad) = corpus_with_one_corrupt_file(dir.path());
    match build_mixed_dataset(&spec) {
        Err(Error::Ingestion { bad: list }) => {
            assert_eq!(list.len(), 1);
            assert_eq!(list[0].0, bad);
        }
        other => panic!("expected an ingestion error, got {other:?}"),
    }
}

#[test]
fn lenient_mode_skips_and_records_the_corrupt_file() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, bad) = corpus_with_one_corrupt_file(dir.path());
    let ds = build_mixed_dataset(&CorpusSpec {
        mode: LoadMode::Lenient,
        ..spec
    })
    .unwrap();
    let m = ds.manifest();
    assert_eq!(m.photo_count, 9);
    assert_eq!(m.synthetic_count, 4);
    assert_eq!(ds.len(), 13);
    assert_eq!(m.skipped.len(), 1);
    assert_eq!(m.skipped[0].0, bad);
}

#[test]
fn manifest_hashes_are_stable_across_loads() {
    let dir = tempfile::tempdir().unwrap();
    let (photos, synth) = write_procedural_corpus(dir.path(), 3, 3, 16, 0).unwrap();
    let spec = CorpusSpec {
        photo_dir: photos,
        synthetic_dir: Some(synth),
        resize_to: (16, 16),
        ..Default::default()
    };
    let a = build_mixed_dataset(&spec).unwrap();
    let b = build_mixed_dataset(&spec).unwrap();
    assert_eq!(a.manifest(), b.manifest());
    assert_eq!(a.epoch_order(1), b.epoch_order(1));
}
