//! Frozen outputs of the fixed-seed tiny encoder, so weight initialisation or
//! layer changes show up as a test failure.

use stylepass::backbones::Encoder;
use stylepass::imaging::{ColourSpace, ImageTensor};

fn input() -> ImageTensor {
    ImageTensor::from_fn(3, 32, 32, ColourSpace::Rgb, |c, y, x| {
        0.5 + 0.4 * (0.37 * x as f64 - 0.21 * y as f64 + 1.3 * c as f64).sin()
    })
    .unwrap()
}

const SNAPSHOT: [(&str, (usize, usize, usize), f64, f64); 4] = [
    ("relu1_2", (8, 32, 32), 3721.666651474903, 5615.81165040399),
    (
        "relu2_2",
        (12, 16, 16),
        1208.5589069215491,
        1477.7104720966643,
    ),
    ("relu3_3", (16, 8, 8), 326.7808607508153, 249.41388948521552),
    ("relu4_3", (16, 4, 4), 58.60506001810368, 47.13209208291053),
];

const CHECKSUM: &str = "62940be3a86028e468314287d4e4d4c4c62a3954477341e56d52a46b0215a4c0";

#[test]
fn tiny_encoder_weights_are_stable() {
    assert_eq!(Encoder::tiny(0).checksum(), CHECKSUM);
    assert_ne!(Encoder::tiny(1).checksum(), CHECKSUM);
}

#[test]
fn tiny_encoder_features_match_snapshot() {
    let f = Encoder::tiny(0).encode_features(&input()).unwrap();
    assert_eq!(f.len(), SNAPSHOT.len());
    for (name, dims, sum, sum_sq) in SNAPSHOT {
        let t = &f[name];
        assert_eq!(t.dims(), dims, "{name}");
        let s: f64 = t.data().iter().sum();
        let s2: f64 = t.data().iter().map(|v| v * v).sum();
        assert!(
            (s - sum).abs() <= 1e-9 * sum.abs(),
            "{name}: sum {s} vs {sum}"
        );
        assert!(
            (s2 - sum_sq).abs() <= 1e-9 * sum_sq.abs(),
            "{name}: sum of squares {s2} vs {sum_sq}"
        );
    }
}
