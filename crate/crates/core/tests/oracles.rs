//! Values checked against independent implementations (scikit-image, SciPy,
//! OpenCV, NumPy) or against closed forms. The reference numbers were
//! computed once offline and are frozen here.

use stylepass::backbones::{DepthPredictor, Encoder, LinearEncoder, STYLE_LAYERS};
use stylepass::imaging::{
    dog_response, gram_matrix, ColourSpace, FlowField, GaussianKernel, ImageTensor,
};
use stylepass::metrics::{
    perceptual_distance, sifid, ssim, warping_error, SequenceMetrics, SequenceMetricsReport,
    SequenceResult,
};
use stylepass::objective::{content_loss, depth_loss, style_loss};

fn lum(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> ImageTensor {
    ImageTensor::from_fn(1, h, w, ColourSpace::Luminance, |_, y, x| f(y, x)).unwrap()
}

fn rgb(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> ImageTensor {
    ImageTensor::from_fn(3, h, w, ColourSpace::Rgb, f).unwrap()
}

fn grey(h: usize, w: usize, v: [f64; 3]) -> ImageTensor {
    rgb(h, w, |c, _, _| v[c])
}

fn close(got: f64, want: f64, tol: f64) {
    assert!(
        (got - want).abs() <= tol,
        "got {got}, want {want} (tolerance {tol})"
    );
}

#[test]
fn ssim_of_binary_image_and_its_inverse() {
    let b = |y: usize, x: usize| if (x * 7 + y * 3) % 5 < 2 { 1.0 } else { 0.0 };
    let a = lum(24, 20, b);
    let inv = lum(24, 20, |y, x| 1.0 - b(y, x));
    close(ssim(&a, &inv).unwrap(), -0.9194801395656311, 1e-10);
}

#[test]
fn ssim_of_smooth_luminance_pair() {
    let a = lum(32, 32, |y, x| {
        0.5 + 0.4 * (0.7 * x as f64 + 1.1 * y as f64).sin()
    });
    let b = lum(32, 32, |y, x| {
        let (x, y) = (x as f64, y as f64);
        0.5 + 0.3 * (0.5 * x - 0.8 * y + 1.0).sin() + 0.1 * (1.7 * x).cos()
    });
    close(ssim(&a, &b).unwrap(), 0.007347447811369683, 1e-10);
}

#[test]
fn ssim_of_rgb_pair_uses_rec709_luminance() {
    let a = rgb(28, 36, |c, y, x| {
        0.5 + 0.4 * (0.3 * x as f64 + 0.2 * y as f64 + c as f64).sin()
    });
    let b = rgb(28, 36, |c, y, x| {
        0.5 + 0.4 * (0.25 * x as f64 - 0.35 * y as f64 + 2.0 * c as f64).cos()
    });
    close(ssim(&a, &b).unwrap(), 0.030399736783056262, 1e-10);
}

#[test]
fn dog_impulse_response_matches_explicit_convolution() {
    let imp = lum(15, 15, |y, x| if (y, x) == (7, 7) { 1.0 } else { 0.0 });
    let d = dog_response(&imp).unwrap();
    let want = [
        (7, 7, 0.09701181567406936),
        (7, 8, 0.045396190875331276),
        (6, 6, 0.01647507895006195),
        (7, 10, -0.008960669572811837),
        (0, 0, 0.0),
        (3, 12, -2.071315260143482e-05),
    ];
    for (y, x, v) in want {
        close(d.get(0, y, x), v, 1e-12);
    }
}

#[test]
fn gaussian_kernel_length_and_centre_tap() {
    let k = GaussianKernel::new(1.6).unwrap();
    assert_eq!(k.len(), 11);
    close(k.taps()[5], 0.24945803257588858, 1e-14);
    let raw: f64 = (-5..=5i32)
        .map(|d| (-(d * d) as f64 / (2.0 * 1.6 * 1.6)).exp())
        .sum();
    close(k.taps()[5], 1.0 / raw, 1e-14);
}

#[test]
fn resize_matches_opencv_bilinear_on_a_checkerboard() {
    let cb = lum(480, 640, |y, x| ((x / 7 + y / 7) % 2) as f64);
    let out = cb.resize_bilinear(360, 360).unwrap();
    // OpenCV INTER_LINEAR on the uint8 board; every 37th row, 29th column.
    let rows: [[u8; 13]; 10] = [
        [0, 255, 0, 0, 255, 42, 0, 255, 212, 0, 255, 255, 0],
        [255, 0, 255, 255, 0, 213, 255, 0, 42, 255, 0, 0, 255],
        [0, 255, 0, 0, 255, 42, 0, 255, 212, 0, 255, 255, 0],
        [255, 0, 255, 255, 0, 212, 255, 0, 42, 255, 0, 0, 255],
        [0, 255, 0, 0, 255, 42, 0, 255, 213, 0, 255, 255, 0],
        [255, 0, 255, 255, 0, 212, 255, 0, 42, 255, 0, 0, 255],
        [0, 255, 0, 0, 255, 42, 0, 255, 212, 0, 255, 255, 0],
        [255, 0, 255, 255, 0, 213, 255, 0, 42, 255, 0, 0, 255],
        [0, 255, 0, 0, 255, 42, 0, 255, 212, 0, 255, 255, 0],
        [255, 0, 255, 255, 0, 212, 255, 0, 42, 255, 0, 0, 255],
    ];
    for (i, row) in rows.iter().enumerate() {
        for (j, &want) in row.iter().enumerate() {
            let got = out.get(0, i * 37, j * 29) * 255.0;
            assert!(
                (got - want as f64).abs() <= 1.0,
                "pixel ({}, {}): {got} vs {want}",
                i * 37,
                j * 29
            );
        }
    }
}

#[test]
fn sifid_matches_closed_form_for_pixel_statistics() {
    // The identity linear encoder makes the features the pixel colours, so
    // the reference is the Fréchet distance between colour Gaussians.
    let enc = Encoder::Linear(LinearEncoder::identity());
    let a = rgb(8, 8, |c, y, x| {
        let (x, y, c) = (x as f64, y as f64, c as f64);
        0.5 + 0.3 * (0.9 * x + 0.4 * y * (c + 1.0)).sin() + 0.05 * c
    });
    let b = rgb(8, 8, |c, y, x| {
        let (x, y, c) = (x as f64, y as f64, c as f64);
        0.4 + 0.2 * (0.6 * x * (c + 1.0) - 0.5 * y).cos() + 0.1 * (x * y * 0.1).sin()
    });
    close(sifid(&enc, &a, &b).unwrap(), 0.054749027723875326, 1e-9);
    close(sifid(&enc, &b, &a).unwrap(), 0.054749027723875326, 1e-9);
}

#[test]
fn warping_error_matches_hand_computation() {
    // frame t is a horizontal ramp x/10; the flow samples one pixel to the
    // right; the last column is outside the mask and clamps to 0.7.
    let (h, w) = (3, 8);
    let f0 = rgb(h, w, |_, _, x| x as f64 / 10.0);
    let f1 = grey(h, w, [0.3; 3]);
    let mask: Vec<bool> = (0..h * w).map(|p| p % w < w - 1).collect();
    let flow = FlowField::uniform(h, w, 1.0, 0.0)
        .with_mask(Some(mask))
        .unwrap();
    let e = warping_error(&[f0, f1], &[flow]).unwrap();
    close(e.masked, 0.35 / 7.0, 1e-12);
    close(e.unmasked, (0.35 + 0.16) / 8.0, 1e-12);
}

#[test]
fn perceptual_distance_grows_with_noise_amplitude() {
    use rand::{Rng, SeedableRng};
    let enc = Encoder::tiny(0);
    let base = rgb(32, 32, |c, y, x| {
        0.5 + 0.3 * (0.4 * x as f64 + 0.3 * y as f64 + c as f64).sin()
    });
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let noise: Vec<f64> = (0..base.data().len())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let d: Vec<f64> = [0.01, 0.05, 0.1]
        .iter()
        .map(|amp| {
            let data = base
                .data()
                .iter()
                .zip(&noise)
                .map(|(v, n)| v + amp * n)
                .collect();
            let noisy = ImageTensor::new_clamped(3, 32, 32, data, ColourSpace::Rgb).unwrap();
            perceptual_distance(&enc, &base, &noisy).unwrap()
        })
        .collect();
    assert!(d[0] > 0.0 && d[0] < d[1] && d[1] < d[2], "{d:?}");
}

fn metrics(v: f64) -> SequenceMetrics {
    SequenceMetrics {
        warping_error: v,
        warping_error_unmasked: 2.0 * v,
        lpips_error: 3.0 * v,
        ssim: 1.0 - v,
        sifid: 4.0 * v,
        content_err: 5.0 * v,
        style_err: 6.0 * v,
    }
}

fn result(name: &str, style: &str, v: f64) -> SequenceResult {
    SequenceResult {
        sequence: name.into(),
        style: style.into(),
        frames: 3,
        flow_source: "analytic".into(),
        metrics: metrics(v),
        traces: Default::default(),
    }
}

#[test]
fn aggregate_of_two_sequences_is_their_mean() {
    let enc = Encoder::tiny(0);
    let r = SequenceMetricsReport::aggregate(
        "x",
        &enc,
        vec![result("a", "s", 0.1), result("b", "s", 0.3)],
    )
    .unwrap();
    let m = r.overall;
    close(m.warping_error, 0.2, 1e-15);
    close(m.warping_error_unmasked, 0.4, 1e-15);
    close(m.lpips_error, 0.6, 1e-15);
    close(m.ssim, 0.8, 1e-15);
    close(m.sifid, 0.8, 1e-15);
    close(m.content_err, 1.0, 1e-15);
    close(m.style_err, 1.2, 1e-15);
    assert_eq!(r.per_style["s"], m);
}

#[test]
fn depth_loss_under_channel_mean_stub() {
    let p = DepthPredictor::ChannelMean { normalise: false };
    let x = grey(6, 6, [0.2; 3]);
    let yhat = grey(6, 6, [0.5, 0.2, 0.8]);
    close(depth_loss(&p, &x, &yhat).unwrap(), 0.09, 1e-12);
}

#[test]
fn style_loss_reduces_to_a_scalar_for_one_channel() {
    // One feature channel equal to red: each Gram is mean(r^2), and every one
    // of the four taps contributes the same squared difference.
    let enc = Encoder::Linear(LinearEncoder::new(1, vec![1.0, 0.0, 0.0]));
    let yhat = grey(5, 7, [0.5, 0.9, 0.1]);
    let y = grey(9, 4, [0.2, 0.3, 0.6]);
    let per_tap: f64 = (0.25f64 - 0.04).powi(2);
    close(
        style_loss(&enc, &yhat, &y).unwrap(),
        STYLE_LAYERS.len() as f64 * per_tap,
        1e-12,
    );
}

#[test]
fn content_loss_under_identity_encoder_is_pixel_mse() {
    let enc = Encoder::Linear(LinearEncoder::identity());
    let x = rgb(4, 5, |c, y, x| 0.1 * c as f64 + 0.05 * (y + x) as f64);
    let yhat = grey(4, 5, [0.4, 0.4, 0.4]);
    let want = x.data().iter().map(|v| (v - 0.4) * (v - 0.4)).sum::<f64>() / x.data().len() as f64;
    close(content_loss(&enc, &x, &yhat).unwrap(), want, 1e-12);
}

#[test]
fn gram_matches_triple_loop() {
    let (c, h, w) = (4, 5, 6);
    let f = ImageTensor::from_fn(c, h, w, ColourSpace::Feature, |c, y, x| {
        ((c * 31 + y * 7 + x * 3) % 11) as f64 - 5.0
    })
    .unwrap();
    let g = gram_matrix(&f);
    for i in 0..c {
        for j in 0..c {
            let mut s = 0.0;
            for y in 0..h {
                for x in 0..w {
                    s += f.get(i, y, x) * f.get(j, y, x);
                }
            }
            close(g.get(i, j), s / (c * h * w) as f64, 1e-12);
        }
    }
}
