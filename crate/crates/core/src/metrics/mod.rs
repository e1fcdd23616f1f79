//! Temporal-consistency and stylisation-quality metrics, aggregated into
//! sequence reports.

mod plot;
mod report;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use plot::{plot_series, Series};
pub use report::{
    evaluate_sequence, table, FrameTraces, SequenceInput, SequenceMetrics, SequenceMetricsReport,
    SequenceResult,
};

use crate::backbones::Encoder;
use crate::imaging::{warp_with_flow, ColourSpace, FlowField, ImageTensor};
use crate::tensor::Graph;
use crate::{Error, Result};

/// Tap used by [`sifid`] unless another is requested.
pub const SIFID_LAYER: &str = "relu1_2";
/// Diagonal loading added to both covariances in [`sifid`].
pub const SIFID_EPS: f64 = 1e-6;

/// Mean per-pixel squared difference between each warped frame and its
/// successor, with and without the flow validity mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpingError {
    pub masked: f64,
    pub unmasked: f64,
}

/// Warping error of one frame pair; `masked` is `None` when the flow has no
/// valid pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairWarpingError {
    pub masked: Option<f64>,
    pub unmasked: f64,
}

pub fn warping_error_pairs(
    frames: &[ImageTensor],
    flows: &[FlowField],
) -> Result<Vec<PairWarpingError>> {
    if frames.len() < 2 || flows.len() != frames.len() - 1 {
        return Err(Error::domain(format!(
            "{} frames need {} flows, got {}",
            frames.len(),
            frames.len().saturating_sub(1),
            flows.len()
        )));
    }
    flows
        .iter()
        .enumerate()
        .map(|(t, flow)| {
            let (cur, next) = (&frames[t], &frames[t + 1]);
            cur.require_same_shape(next, "successor frame")?;
            let warped = warp_with_flow(cur, flow)?;
            let (c, h, w) = cur.dims();
            let (mut sum_all, mut sum_valid, mut n_valid) = (0.0, 0.0, 0usize);
            for p in 0..h * w {
                let d2: f64 = (0..c)
                    .map(|ch| {
                        let d = warped.plane(ch)[p] - next.plane(ch)[p];
                        d * d
                    })
                    .sum();
                sum_all += d2;
                if flow.mask().is_none_or(|m| m[p]) {
                    sum_valid += d2;
                    n_valid += 1;
                }
            }
            Ok(PairWarpingError {
                masked: (n_valid > 0).then(|| sum_valid / (c * n_valid) as f64),
                unmasked: sum_all / (c * h * w) as f64,
            })
        })
        .collect()
}

/// Mean over frame pairs of [`warping_error_pairs`]; pairs without valid
/// pixels are left out of the masked mean.
pub fn warping_error(frames: &[ImageTensor], flows: &[FlowField]) -> Result<WarpingError> {
    let pairs = warping_error_pairs(frames, flows)?;
    let masked: Vec<f64> = pairs.iter().filter_map(|p| p.masked).collect();
    if masked.is_empty() {
        return Err(Error::domain("no valid flow pixels in any frame pair"));
    }
    Ok(WarpingError {
        masked: masked.iter().sum::<f64>() / masked.len() as f64,
        unmasked: pairs.iter().map(|p| p.unmasked).sum::<f64>() / pairs.len() as f64,
    })
}

/// LPIPS-style distance: channel-unit-normalised features at every encoder
/// tap, squared differences summed over channels, averaged over space and
/// summed over taps with uniform weights.
pub fn perceptual_distance(encoder: &Encoder, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.require_same_shape(b, "perceptual distance")?;
    if a.colour_space() != ColourSpace::Rgb || b.colour_space() != ColourSpace::Rgb {
        return Err(Error::domain("perceptual distance expects rgb images"));
    }
    let fa = encoder.encode_features(a)?;
    let fb = encoder.encode_features(b)?;
    let mut total = 0.0;
    for (name, x) in &fa {
        let y = &fb[name];
        let (c, h, w) = x.dims();
        let mut acc = 0.0;
        for p in 0..h * w {
            let nx = (0..c).map(|ch| x.plane(ch)[p].powi(2)).sum::<f64>().sqrt() + 1e-10;
            let ny = (0..c).map(|ch| y.plane(ch)[p].powi(2)).sum::<f64>().sqrt() + 1e-10;
            acc += (0..c)
                .map(|ch| (x.plane(ch)[p] / nx - y.plane(ch)[p] / ny).powi(2))
                .sum::<f64>();
        }
        total += acc / (h * w) as f64;
    }
    Ok(total)
}

const SSIM_SIGMA: f64 = 1.5;
const SSIM_TRUNCATE: f64 = 3.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Index into `[0, n)` mirroring with the edge sample repeated.
fn symmetric_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn ssim_filter(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * data[y * w + symmetric_index(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[symmetric_index(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity of the luminance of two images, with an
/// 11-tap Gaussian window (sigma 1.5), population statistics, unit data
/// range, and a 5-pixel border excluded from the mean.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.require_same_shape(b, "ssim")?;
    let la = a.to_luminance()?;
    let lb = b.to_luminance()?;
    let (_, h, w) = la.dims();
    let radius = (SSIM_TRUNCATE * SSIM_SIGMA + 0.5) as usize;
    let win = 2 * radius + 1;
    if h < win || w < win {
        return Err(Error::domain(format!(
            "ssim needs images of at least {win}x{win}"
        )));
    }
    let taps: Vec<f64> = {
        let raw: Vec<f64> = (-(radius as isize)..=radius as isize)
            .map(|i| (-0.5 * (i * i) as f64 / (SSIM_SIGMA * SSIM_SIGMA)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    };
    let (x, y) = (la.data(), lb.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<f64>>();
    let ux = ssim_filter(x, h, w, &taps);
    let uy = ssim_filter(y, h, w, &taps);
    let uxx = ssim_filter(&prod(&|p| x[p] * x[p]), h, w, &taps);
    let uyy = ssim_filter(&prod(&|p| y[p] * y[p]), h, w, &taps);
    let uxy = ssim_filter(&prod(&|p| x[p] * y[p]), h, w, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (mut sum, mut n) = (0.0, 0usize);
    for yy in radius..h - radius {
        for xx in radius..w - radius {
            let p = yy * w + xx;
            let vx = uxx[p] - ux[p] * ux[p];
            let vy = uyy[p] - uy[p] * uy[p];
            let vxy = uxy[p] - ux[p] * uy[p];
            let s = ((2.0 * ux[p] * uy[p] + c1) * (2.0 * vxy + c2))
                / ((ux[p] * ux[p] + uy[p] * uy[p] + c1) * (vx + vy + c2));
            sum += s;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Mean and sample covariance of the spatial feature vectors of one tap.
fn feature_stats(
    encoder: &Encoder,
    image: &ImageTensor,
    layer: &str,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if image.colour_space() != ColourSpace::Rgb {
        return Err(Error::domain("sifid expects rgb images"));
    }
    let g = Graph::<f64>::new();
    let f = encoder.encode_var(g.constant(image.to_tensor()), &[layer])?[0].to_tensor();
    let (_, c, h, w) = f.dims4();
    let n = h * w;
    if n < 2 {
        return Err(Error::domain(format!(
            "sifid needs at least two feature positions at {layer}"
        )));
    }
    let x = DMatrix::from_row_slice(c, n, f.data());
    let mean: Vec<f64> = (0..c).map(|i| x.row(i).sum() / n as f64).collect();
    let mut centred = x;
    for i in 0..c {
        for j in 0..n {
            centred[(i, j)] -= mean[i];
        }
    }
    let cov = (&centred * centred.transpose()) / (n - 1) as f64;
    Ok((mean, cov))
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// `tr sqrt(A B)` for symmetric PSD `A`, `B`, via `sqrt(A) B sqrt(A)`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let sa = sqrt_psd(a);
    let inner = &sa * b * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum()
}

/// Fréchet distance between Gaussians fitted to two covariance/mean pairs.
pub fn frechet_distance(
    mu_a: &[f64],
    cov_a: &DMatrix<f64>,
    mu_b: &[f64],
    cov_b: &DMatrix<f64>,
    eps: f64,
) -> f64 {
    let c = mu_a.len();
    let reg = DMatrix::<f64>::identity(c, c) * eps;
    let (a, b) = (cov_a + &reg, cov_b + &reg);
    let mean_term: f64 = mu_a.iter().zip(mu_b).map(|(x, y)| (x - y) * (x - y)).sum();
    // Both evaluation orders agree mathematically; averaging makes the result
    // exactly symmetric in floating point.
    let cross = 0.5 * (trace_sqrt_product(&a, &b) + trace_sqrt_product(&b, &a));
    (mean_term + a.trace() + b.trace() - 2.0 * cross).max(0.0)
}

/// Single-image Fréchet distance at [`SIFID_LAYER`].
pub fn sifid(encoder: &Encoder, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    sifid_at(encoder, a, b, SIFID_LAYER)
}

pub fn sifid_at(encoder: &Encoder, a: &ImageTensor, b: &ImageTensor, layer: &str) -> Result<f64> {
    let (ma, ca) = feature_stats(encoder, a, layer)?;
    let (mb, cb) = feature_stats(encoder, b, layer)?;
    Ok(frechet_distance(&ma, &ca, &mb, &cb, SIFID_EPS))
}
