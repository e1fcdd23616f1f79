use serde::{Deserialize, Serialize};

use crate::imaging::{ColourSpace, FlowField, GaussianKernel, ImageTensor};
use crate::tensor::kernels;
use crate::{Error, Result};

/// One screen-space post effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case", deny_unknown_fields)]
pub enum PostEffect {
    /// Gaussian blur with per-pixel sigma `blur_scale * |depth - focal_depth|`,
    /// capped at `max_sigma`.
    DepthOfField {
        focal_depth: f64,
        blur_scale: f64,
        #[serde(default = "default_max_sigma")]
        max_sigma: f64,
    },
    /// Adds a blurred copy of everything brighter than `threshold`.
    Bloom {
        threshold: f64,
        intensity: f64,
        #[serde(default = "default_bloom_sigma")]
        sigma: f64,
    },
    /// Darkens towards the corners by up to `strength`.
    Vignette { strength: f64 },
    /// Averages `samples` taps along each pixel's screen motion.
    MotionBlur { samples: usize },
}

fn default_max_sigma() -> f64 {
    8.0
}

fn default_bloom_sigma() -> f64 {
    3.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostEffectStack {
    pub effects: Vec<PostEffect>,
}

impl PostEffectStack {
    pub fn new(effects: Vec<PostEffect>) -> Self {
        Self { effects }
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.effects {
            let ok = match *e {
                PostEffect::DepthOfField {
                    focal_depth,
                    blur_scale,
                    max_sigma,
                } => {
                    focal_depth.is_finite()
                        && blur_scale >= 0.0
                        && (0.0..=64.0).contains(&max_sigma)
                }
                PostEffect::Bloom {
                    threshold,
                    intensity,
                    sigma,
                } => threshold.is_finite() && intensity >= 0.0 && sigma > 0.0 && sigma <= 64.0,
                PostEffect::Vignette { strength } => (0.0..=1.0).contains(&strength),
                PostEffect::MotionBlur { samples } => (1..=64).contains(&samples),
            };
            if !ok {
                return Err(Error::config(format!(
                    "invalid post effect parameters: {e:?}"
                )));
            }
        }
        Ok(())
    }

    /// Applies the effects in order to `colour`, reading depth and motion
    /// from the g-buffer.
    pub fn apply(
        &self,
        colour: &ImageTensor,
        depth: &ImageTensor,
        motion: &FlowField,
    ) -> Result<ImageTensor> {
        self.validate()?;
        let mut out = colour.clone();
        for e in &self.effects {
            out = match *e {
                PostEffect::DepthOfField {
                    focal_depth,
                    blur_scale,
                    max_sigma,
                } => depth_of_field(&out, depth, focal_depth, blur_scale, max_sigma)?,
                PostEffect::Bloom {
                    threshold,
                    intensity,
                    sigma,
                } => bloom(&out, threshold, intensity, sigma)?,
                PostEffect::Vignette { strength } => vignette(&out, strength)?,
                PostEffect::MotionBlur { samples } => motion_blur(&out, motion, samples)?,
            };
        }
        Ok(out)
    }
}

fn gaussian_weights(sigma: f64) -> Vec<f64> {
    if sigma < 1e-6 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable gather blur whose sigma varies per output pixel; borders clamp.
pub fn depth_of_field(
    colour: &ImageTensor,
    depth: &ImageTensor,
    focal_depth: f64,
    blur_scale: f64,
    max_sigma: f64,
) -> Result<ImageTensor> {
    let (c, h, w) = colour.dims();
    if (depth.height(), depth.width()) != (h, w) || depth.channels() != 1 {
        return Err(Error::domain("depth buffer must match the colour buffer"));
    }
    // Quantise sigma so kernels can be shared between pixels.
    let sigma_of = |p: usize| {
        ((blur_scale * (depth.data()[p] - focal_depth).abs()).min(max_sigma) * 64.0).round() / 64.0
    };
    let mut cache: std::collections::HashMap<u64, Vec<f64>> = Default::default();
    let kernels: Vec<&Vec<f64>> = {
        for p in 0..h * w {
            let s = sigma_of(p);
            cache
                .entry(s.to_bits())
                .or_insert_with(|| gaussian_weights(s));
        }
        (0..h * w).map(|p| &cache[&sigma_of(p).to_bits()]).collect()
    };
    let mut out = vec![0.0; c * h * w];
    let mut tmp = vec![0.0; h * w];
    for ch in 0..c {
        let src = colour.plane(ch);
        for y in 0..h {
            for x in 0..w {
                let k = kernels[y * w + x];
                let r = (k.len() / 2) as isize;
                tmp[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, wt)| {
                        let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                        wt * src[y * w + xx]
                    })
                    .sum();
            }
        }
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let k = kernels[y * w + x];
                let r = (k.len() / 2) as isize;
                dst[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, wt)| {
                        let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                        wt * tmp[yy * w + x]
                    })
                    .sum();
            }
        }
    }
    ImageTensor::new_clamped(c, h, w, out, colour.colour_space())
}

pub fn bloom(
    colour: &ImageTensor,
    threshold: f64,
    intensity: f64,
    sigma: f64,
) -> Result<ImageTensor> {
    let (c, h, w) = colour.dims();
    let bright = colour.map(|v| (v - threshold).max(0.0))?;
    if bright.data().iter().all(|&v| v == 0.0) {
        return Ok(colour.clone());
    }
    let taps = GaussianKernel::new(sigma)?.taps().to_vec();
    let glow = kernels::blur_forward(bright.tensor(), &taps);
    let data = colour
        .data()
        .iter()
        .zip(glow.data())
        .map(|(v, g)| v + intensity * g)
        .collect();
    ImageTensor::new_clamped(c, h, w, data, colour.colour_space())
}

pub fn vignette(colour: &ImageTensor, strength: f64) -> Result<ImageTensor> {
    let (c, h, w) = colour.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    ImageTensor::from_fn(c, h, w, colour.colour_space(), |ch, y, x| {
        let ny = if cy > 0.0 { (y as f64 - cy) / cy } else { 0.0 };
        let nx = if cx > 0.0 { (x as f64 - cx) / cx } else { 0.0 };
        let r2 = (nx * nx + ny * ny) / 2.0;
        colour.get(ch, y, x) * (1.0 - strength * r2)
    })
}

/// Averages `samples` bilinear taps spread over one frame of motion centred
/// on each pixel.
pub fn motion_blur(
    colour: &ImageTensor,
    motion: &FlowField,
    samples: usize,
) -> Result<ImageTensor> {
    let (c, h, w) = colour.dims();
    if (motion.height(), motion.width()) != (h, w) {
        return Err(Error::domain("motion field must match the colour buffer"));
    }
    if samples <= 1 {
        return Ok(colour.clone());
    }
    let mut acc = vec![0.0; c * h * w];
    for k in 0..samples {
        let s = k as f64 / (samples - 1) as f64 - 0.5;
        let dx: Vec<f64> = motion.dx().iter().map(|v| -v * s).collect();
        let dy: Vec<f64> = motion.dy().iter().map(|v| -v * s).collect();
        let tap = crate::imaging::warp_with_flow(colour, &FlowField::new(h, w, dx, dy, None)?)?;
        for (a, v) in acc.iter_mut().zip(tap.data()) {
            *a += v / samples as f64;
        }
    }
    ImageTensor::new_clamped(c, h, w, acc, colour.colour_space())
}

/// Mean squared 4-neighbour Laplacian of the luminance over the pixels where
/// `region` is true and every neighbour is inside the image.
pub fn laplacian_energy(image: &ImageTensor, region: &[bool]) -> Result<f64> {
    let (_, h, w) = image.dims();
    if region.len() != h * w {
        return Err(Error::domain("region mask does not match the image"));
    }
    let lum = match image.colour_space() {
        ColourSpace::Rgb => image.to_luminance()?,
        _ if image.channels() == 1 => image.clone(),
        _ => {
            return Err(Error::domain(
                "laplacian energy needs an rgb or single-channel image",
            ))
        }
    };
    let l = lum.data();
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if region[y * w + x] {
                let p = y * w + x;
                let lap = l[p - 1] + l[p + 1] + l[p - w] + l[p + w] - 4.0 * l[p];
                sum += lap * lap;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::domain("region is empty"));
    }
    Ok(sum / n as f64)
}

/// Shrinks a mask by `radius` pixels (Chebyshev distance).
pub fn erode(mask: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    (0..h * w)
        .map(|p| {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            (-r..=r).all(|dy| {
                (-r..=r).all(|dx| {
                    let (yy, xx) = (y + dy, x + dx);
                    yy >= 0
                        && xx >= 0
                        && yy < h as isize
                        && xx < w as isize
                        && mask[(yy * w as isize + xx) as usize]
                })
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(3, h, w, ColourSpace::Rgb, |c, y, x| {
            0.5 + 0.4 * ((x as f64 * 1.3 + y as f64 * 0.7 + c as f64).sin())
        })
        .unwrap()
    }

    fn depth(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> ImageTensor {
        ImageTensor::from_fn(1, h, w, ColourSpace::Luminance, |_, y, x| f(y, x)).unwrap()
    }

    #[test]
    fn empty_stack_is_identity() {
        let img = textured(8, 8);
        let out = PostEffectStack::default()
            .apply(&img, &depth(8, 8, |_, _| 1.0), &FlowField::zeros(8, 8))
            .unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn bloom_on_black_is_black() {
        let black = ImageTensor::filled(3, 8, 8, 0.0, ColourSpace::Rgb).unwrap();
        assert_eq!(bloom(&black, 0.8, 1.0, 2.0).unwrap(), black);
    }

    #[test]
    fn in_focus_plane_is_untouched() {
        let img = textured(12, 12);
        let out = depth_of_field(&img, &depth(12, 12, |_, _| 0.4), 0.4, 10.0, 8.0).unwrap();
        assert!(out.tensor().max_abs_diff(img.tensor()) < 1e-6);
    }

    #[test]
    fn defocus_reduces_laplacian_energy() {
        let img = textured(32, 32);
        let d = depth(32, 32, |_, x| if x < 16 { 0.4 } else { 1.0 });
        let out = depth_of_field(&img, &d, 0.4, 6.0, 8.0).unwrap();
        let near: Vec<bool> = (0..32 * 32).map(|p| p % 32 < 16).collect();
        let far: Vec<bool> = near.iter().map(|v| !v).collect();
        let (near, far) = (erode(&near, 32, 32, 1), erode(&far, 32, 32, 4));
        let e_in = laplacian_energy(&img, &near).unwrap();
        assert!((laplacian_energy(&out, &near).unwrap() - e_in).abs() <= 0.01 * e_in);
        assert!(laplacian_energy(&out, &far).unwrap() < laplacian_energy(&img, &far).unwrap());
    }

    #[test]
    fn single_sample_motion_blur_is_identity() {
        let img = textured(8, 8);
        assert_eq!(
            motion_blur(&img, &FlowField::uniform(8, 8, 2.0, 1.0), 1).unwrap(),
            img
        );
    }
}
