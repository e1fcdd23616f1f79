//! Deterministic image primitives: the image container, colour conversion,
//! resampling, Gaussian/DoG filtering, Gram matrices and flow warping.

mod filter;
mod flow;
mod gram;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use filter::{dog_response, dog_response_with, dog_var, DogParams, GaussianKernel};
pub use flow::{parse_flo, read_flo, warp_with_flow, write_flo, FlowField, UNKNOWN_FLOW};
pub use gram::{gram_matrix, GramMatrix};

use crate::tensor::{kernels, Scalar, Tensor};
use crate::{Error, Result};

/// Rec. 709 luma weights.
pub const REC709: [f64; 3] = [0.2126, 0.7152, 0.0722];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColourSpace {
    Rgb,
    Luminance,
    Feature,
}

impl ColourSpace {
    pub fn is_displayable(self) -> bool {
        !matches!(self, ColourSpace::Feature)
    }
}

/// `C x H x W` image or feature map, stored as a `[1, c, h, w]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Tensor<f64>,
    colour_space: ColourSpace,
}

impl ImageTensor {
    /// Validates dimensions, finiteness and, for displayable images, the
    /// unit range.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        colour_space: ColourSpace,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::domain(format!(
                "empty image {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::domain(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        match colour_space {
            ColourSpace::Rgb if channels != 3 => {
                return Err(Error::domain(format!("rgb image with {channels} channels")))
            }
            ColourSpace::Luminance if channels != 1 => {
                return Err(Error::domain(format!(
                    "luminance image with {channels} channels"
                )))
            }
            _ => {}
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite value at element {i}")));
        }
        if colour_space.is_displayable() {
            if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::domain(format!(
                    "displayable image value {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            data: Tensor::new(vec![1, channels, height, width], data),
            colour_space,
        })
    }

    /// Like [`ImageTensor::new`] but clamps displayable values into `[0, 1]`.
    pub fn new_clamped(
        channels: usize,
        height: usize,
        width: usize,
        mut data: Vec<f64>,
        colour_space: ColourSpace,
    ) -> Result<Self> {
        if colour_space.is_displayable() {
            for v in &mut data {
                if v.is_finite() {
                    *v = v.clamp(0.0, 1.0);
                }
            }
        }
        Self::new(channels, height, width, data, colour_space)
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        colour_space: ColourSpace,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data, colour_space)
    }

    pub fn filled(
        channels: usize,
        height: usize,
        width: usize,
        value: f64,
        colour_space: ColourSpace,
    ) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![value; channels * height * width],
            colour_space,
        )
    }

    /// Wraps a `[1, c, h, w]` tensor of any precision.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, colour_space: ColourSpace) -> Result<Self> {
        let (n, c, h, w) = t.dims4();
        if n != 1 {
            return Err(Error::domain(format!(
                "expected a single image, got batch of {n}"
            )));
        }
        Self::new(c, h, w, t.cast::<f64>().into_data(), colour_space)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        self.data.cast()
    }

    pub fn tensor(&self) -> &Tensor<f64> {
        &self.data
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    /// `(channels, height, width)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels(), self.height(), self.width())
    }

    pub fn colour_space(&self) -> ColourSpace {
        self.colour_space
    }

    pub fn data(&self) -> &[f64] {
        self.data.data()
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let m = self.height() * self.width();
        &self.data.data()[c * m..(c + 1) * m]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data.data()[(c * self.height() + y) * self.width() + x]
    }

    /// Applies `f` elementwise; the result keeps the colour space and is
    /// clamped if displayable.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let (c, h, w) = self.dims();
        Self::new_clamped(
            c,
            h,
            w,
            self.data().iter().map(|&v| f(v)).collect(),
            self.colour_space,
        )
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub fn require_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "{what}: shape {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    /// Rec. 709 luminance for rgb input, identity for luminance input.
    pub fn to_luminance(&self) -> Result<Self> {
        match self.colour_space {
            ColourSpace::Luminance => Ok(self.clone()),
            ColourSpace::Rgb => {
                let out = kernels::channel_mix_forward(&self.data, &REC709, 1);
                let (_, _, h, w) = out.dims4();
                Self::new_clamped(1, h, w, out.into_data(), ColourSpace::Luminance)
            }
            ColourSpace::Feature => Err(Error::domain("luminance of a feature map")),
        }
    }

    /// Bilinear resize with half-pixel centres and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::domain("resize to an empty image"));
        }
        let (c, h, w) = self.dims();
        let sy = h as f64 / height as f64;
        let sx = w as f64 / width as f64;
        let axis = |o: usize, scale: f64, n: usize| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        };
        let rows: Vec<_> = (0..height).map(|y| axis(y, sy, h)).collect();
        let cols: Vec<_> = (0..width).map(|x| axis(x, sx, w)).collect();
        let mut data = Vec::with_capacity(c * height * width);
        for ch in 0..c {
            let p = self.plane(ch);
            for &(y0, y1, fy) in &rows {
                for &(x0, x1, fx) in &cols {
                    let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                    let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                    data.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        Self::new_clamped(c, height, width, data, self.colour_space)
    }

    /// Loads a PNG/JPEG as an rgb image in `[0, 1]`.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = px[c] as f64 / 255.0;
            }
        }
        Self::new(3, h, w, data, ColourSpace::Rgb).expect("8-bit pixels are in range")
    }

    /// 8-bit quantisation of a displayable image (round to nearest).
    pub fn to_rgb8(&self) -> Result<image::RgbImage> {
        let (c, h, w) = self.dims();
        if !self.colour_space.is_displayable() {
            return Err(Error::domain("cannot quantise a feature map"));
        }
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        Ok(image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            if c == 1 {
                let v = q(self.get(0, y, x));
                image::Rgb([v, v, v])
            } else {
                image::Rgb([
                    q(self.get(0, y, x)),
                    q(self.get(1, y, x)),
                    q(self.get(2, y, x)),
                ])
            }
        }))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()?
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_images() {
        assert!(ImageTensor::new(0, 1, 1, vec![], ColourSpace::Feature).is_err());
        assert!(ImageTensor::new(1, 1, 2, vec![0.0, f64::NAN], ColourSpace::Feature).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![1.5], ColourSpace::Luminance).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![1.5], ColourSpace::Feature).is_ok());
        assert!(ImageTensor::new(2, 1, 1, vec![0.0, 0.0], ColourSpace::Rgb).is_err());
    }

    #[test]
    fn luminance_of_grey_is_grey() {
        let img = ImageTensor::filled(3, 2, 2, 0.25, ColourSpace::Rgb).unwrap();
        let l = img.to_luminance().unwrap();
        assert!(l.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn resize_identity_and_upscale() {
        let img = ImageTensor::from_fn(1, 3, 4, ColourSpace::Luminance, |_, y, x| {
            (y * 4 + x) as f64 / 12.0
        })
        .unwrap();
        assert_eq!(img.resize_bilinear(3, 4).unwrap(), img);
        let up = img.resize_bilinear(6, 8).unwrap();
        // interior sample at (y=1.5 src, x between 1 and 2): bilinear of four
        let v = up.get(0, 3, 3);
        let expect = {
            let sx = (3.0 + 0.5) * 0.5 - 0.5;
            let sy = (3.0 + 0.5) * 0.5 - 0.5;
            let f = |y: f64, x: f64| (y * 4.0 + x) / 12.0;
            f(sy, sx)
        };
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn png_round_trip_quantises() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = ImageTensor::from_fn(3, 5, 7, ColourSpace::Rgb, |c, y, x| {
            ((c + y * 7 + x) % 11) as f64 / 10.0
        })
        .unwrap();
        img.save_png(&p).unwrap();
        let back = ImageTensor::load(&p).unwrap();
        assert!(img.tensor().max_abs_diff(back.tensor()) <= 0.5 / 255.0 + 1e-12);
    }
}
