use serde::{Deserialize, Serialize};

use super::{ColourSpace, ImageTensor, REC709};
use crate::tensor::{kernels, Scalar, Var};
use crate::{Error, Result};

/// Normalised, symmetric 1-D Gaussian taps.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    taps: Vec<f64>,
}

impl GaussianKernel {
    /// Length is the smallest odd integer `>= 6 * sigma`.
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::domain(format!(
                "gaussian sigma must be positive, got {sigma}"
            )));
        }
        let len = Self::length_for(sigma);
        let r = (len / 2) as f64;
        let raw: Vec<f64> = (0..len)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let mut taps: Vec<f64> = raw.iter().map(|v| v / total).collect();
        // mirror so symmetry is exact, not just up to rounding
        for i in 0..len / 2 {
            taps[len - 1 - i] = taps[i];
        }
        Ok(Self { sigma, taps })
    }

    pub fn length_for(sigma: f64) -> usize {
        let n = (6.0 * sigma).ceil() as usize;
        if n.is_multiple_of(2) {
            n + 1
        } else {
            n.max(1)
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn taps_as<T: Scalar>(&self) -> Vec<T> {
        self.taps.iter().map(|&v| T::from_f64_lossy(v)).collect()
    }
}

/// The two Gaussian widths of the DoG operator (`sigma_narrow < sigma_wide`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DogParams {
    pub sigma_narrow: f64,
    pub sigma_wide: f64,
}

impl Default for DogParams {
    fn default() -> Self {
        Self {
            sigma_narrow: 1.0,
            sigma_wide: 1.6,
        }
    }
}

impl DogParams {
    pub fn kernels(&self) -> Result<(GaussianKernel, GaussianKernel)> {
        if !(self.sigma_narrow < self.sigma_wide) {
            return Err(Error::config(format!(
                "DoG needs sigma_narrow < sigma_wide, got {} and {}",
                self.sigma_narrow, self.sigma_wide
            )));
        }
        Ok((
            GaussianKernel::new(self.sigma_narrow)?,
            GaussianKernel::new(self.sigma_wide)?,
        ))
    }
}

pub fn dog_response(image: &ImageTensor) -> Result<ImageTensor> {
    dog_response_with(image, DogParams::default())
}

/// `(G_narrow * L) - (G_wide * L)` on the luminance `L` of the image.
pub fn dog_response_with(image: &ImageTensor, params: DogParams) -> Result<ImageTensor> {
    if !image.colour_space().is_displayable() {
        return Err(Error::domain("DoG expects an rgb or luminance image"));
    }
    let (k1, k2) = params.kernels()?;
    let lum = image.to_luminance()?;
    let narrow = kernels::blur_forward(lum.tensor(), k1.taps());
    let wide = kernels::blur_forward(lum.tensor(), k2.taps());
    let (_, _, h, w) = narrow.dims4();
    let data = narrow
        .data()
        .iter()
        .zip(wide.data())
        .map(|(a, b)| a - b)
        .collect();
    ImageTensor::new(1, h, w, data, ColourSpace::Feature)
}

/// Differentiable DoG of a `[n, 3 or 1, h, w]` node.
pub fn dog_var<'g, T: Scalar>(x: Var<'g, T>, params: DogParams) -> Result<Var<'g, T>> {
    let (k1, k2) = params.kernels()?;
    let c = x.shape()[1];
    let lum = match c {
        1 => x,
        3 => {
            let m: Vec<T> = REC709.iter().map(|&v| T::from_f64_lossy(v)).collect();
            x.channel_mix(&m, 1)
        }
        _ => return Err(Error::domain(format!("DoG of a {c}-channel tensor"))),
    };
    Ok(lum.blur(&k1.taps_as()).sub(lum.blur(&k2.taps_as())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_lengths_follow_six_sigma_rule() {
        assert_eq!(GaussianKernel::new(1.0).unwrap().len(), 7);
        assert_eq!(GaussianKernel::new(1.6).unwrap().len(), 11);
        assert_eq!(GaussianKernel::new(0.5).unwrap().len(), 3);
        assert_eq!(GaussianKernel::new(2.0).unwrap().len(), 13);
    }

    #[test]
    fn kernel_is_normalised_and_symmetric() {
        for sigma in [0.3, 1.0, 1.6, 2.7, 4.0] {
            let k = GaussianKernel::new(sigma).unwrap();
            let s: f64 = k.taps().iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "sigma {sigma}: sum {s}");
            let n = k.len();
            for i in 0..n {
                assert_eq!(k.taps()[i], k.taps()[n - 1 - i]);
            }
        }
    }

    #[test]
    fn centre_tap_matches_direct_formula() {
        // sigma = 1.6: length 11, offsets -5..=5
        let sigma: f64 = 1.6;
        let norm: f64 = (-5i32..=5)
            .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
            .sum();
        let k = GaussianKernel::new(sigma).unwrap();
        assert_eq!(k.len(), 11);
        assert!((k.taps()[5] - 1.0 / norm).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_sigma() {
        assert!(GaussianKernel::new(0.0).is_err());
        assert!(GaussianKernel::new(-1.0).is_err());
        assert!(GaussianKernel::new(f64::NAN).is_err());
    }

    #[test]
    fn constant_image_has_zero_response() {
        for c in [0.0, 0.37, 1.0] {
            let img = ImageTensor::filled(3, 9, 13, c, ColourSpace::Rgb).unwrap();
            let r = dog_response(&img).unwrap();
            assert_eq!(r.colour_space(), ColourSpace::Feature);
            assert!(r.data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn response_is_linear_in_input() {
        let img = ImageTensor::from_fn(1, 12, 10, ColourSpace::Luminance, |_, y, x| {
            ((y * 13 + x * 7) % 17) as f64 / 20.0
        })
        .unwrap();
        let half = img.map(|v| 0.5 * v).unwrap();
        let a = dog_response(&img).unwrap();
        let b = dog_response(&half).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((0.5 * x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn inverted_sigmas_are_a_config_error() {
        let img = ImageTensor::filled(1, 4, 4, 0.5, ColourSpace::Luminance).unwrap();
        let p = DogParams {
            sigma_narrow: 2.0,
            sigma_wide: 1.0,
        };
        assert!(matches!(dog_response_with(&img, p), Err(Error::Config(_))));
    }
}
