use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{checksum_tensors, random_conv};
use crate::imaging::{ColourSpace, ImageTensor};
use crate::tensor::{kernels, Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Monocular depth: one channel of relative inverse depth per image,
/// min-max normalised to `[0, 1]` (constant maps become 0.5).
#[derive(Clone, Debug)]
pub enum DepthPredictor {
    TinyNet(TinyDepthNet),
    /// Mean of the colour channels. With `normalise: false` the raw mean is
    /// returned, which is already in `[0, 1]` for rgb input.
    ChannelMean {
        normalise: bool,
    },
    GBuffer(GBufferDepth),
}

impl DepthPredictor {
    pub fn tiny(seed: u64) -> Self {
        DepthPredictor::TinyNet(TinyDepthNet::new(seed))
    }

    pub fn id(&self) -> String {
        match self {
            DepthPredictor::TinyNet(t) => format!("tiny-depth:seed={}", t.seed),
            DepthPredictor::ChannelMean { normalise } => {
                format!("channel-mean-depth:normalise={normalise}")
            }
            DepthPredictor::GBuffer(g) => format!("gbuffer-depth:frames={}", g.frames.len()),
        }
    }

    pub fn checksum(&self) -> String {
        match self {
            DepthPredictor::TinyNet(t) => {
                checksum_tensors(t.layers.iter().flat_map(|(w, b)| [w, b]))
            }
            other => hex::encode(Sha256::digest(other.id().as_bytes())),
        }
    }

    /// `[n, 3, h, w]` rgb node to `[n, 1, h, w]` depth node.
    pub fn predict_var<'g, T: Scalar>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::domain(format!(
                "depth prediction expects [n, 3, h, w], got {shape:?}"
            )));
        }
        match self {
            DepthPredictor::TinyNet(t) => Ok(t.forward(x)),
            DepthPredictor::ChannelMean { normalise } => {
                let third = T::from_f64_lossy(1.0 / 3.0);
                let m = x.channel_mix(&[third; 3], 1);
                Ok(if *normalise { m.minmax_normalise() } else { m })
            }
            DepthPredictor::GBuffer(g) => g.lookup(x),
        }
    }

    pub fn predict_depth(&self, image: &ImageTensor) -> Result<ImageTensor> {
        if image.colour_space() != ColourSpace::Rgb {
            return Err(Error::domain("depth prediction expects an rgb image"));
        }
        let g = Graph::<f64>::new();
        let d = self.predict_var(g.constant(image.to_tensor()))?.to_tensor();
        ImageTensor::from_tensor(&d, ColourSpace::Luminance)
    }
}

/// Fixed-seed three-layer convnet standing in for a monocular depth network.
#[derive(Clone, Debug)]
pub struct TinyDepthNet {
    seed: u64,
    layers: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl TinyDepthNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD3E7);
        let layers = vec![
            random_conv(&mut rng, 6, 3, 5),
            random_conv(&mut rng, 6, 6, 3),
            random_conv(&mut rng, 1, 6, 3),
        ];
        Self { seed, layers }
    }

    fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let g = x.graph();
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let k = w.shape()[2];
            h = h
                .reflect_pad(k / 2)
                .conv2d(g.constant(w.cast()), Some(g.constant(b.cast())), 1);
            if i < last {
                h = h.relu();
            }
        }
        h.minmax_normalise()
    }
}

/// Returns the renderer's own depth buffer for frames it has been shown.
///
/// Frames are matched by exact colour content; the output is constant with
/// respect to the input pixels.
#[derive(Clone, Debug, Default)]
pub struct GBufferDepth {
    frames: HashMap<String, Tensor<f64>>,
}

impl GBufferDepth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, colour: &ImageTensor, depth: &ImageTensor) -> Result<()> {
        if depth.channels() != 1
            || (depth.height(), depth.width()) != (colour.height(), colour.width())
        {
            return Err(Error::domain(
                "depth buffer must be single-channel and match the colour buffer",
            ));
        }
        let (normalised, _) = kernels::minmax_forward(depth.tensor());
        self.frames.insert(key(colour.tensor()), normalised);
        Ok(())
    }

    fn lookup<'g, T: Scalar>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = x.to_tensor();
        let (n, ..) = v.dims4();
        let items = (0..n)
            .map(|i| {
                self.frames
                    .get(&key(&v.batch_item(i).cast::<f64>()))
                    .map(|d| d.cast::<T>())
                    .ok_or_else(|| Error::config("gbuffer depth: frame was never registered"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(x.graph().constant(Tensor::stack(&items)))
    }
}

fn key(t: &Tensor<f64>) -> String {
    let mut h = Sha256::new();
    for d in t.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: usize) -> ImageTensor {
        ImageTensor::from_fn(3, 12, 10, ColourSpace::Rgb, |c, y, x| {
            ((c * 5 + y * 3 + x * 7 + seed) % 13) as f64 / 12.0
        })
        .unwrap()
    }

    #[test]
    fn output_spans_unit_range() {
        for p in [
            DepthPredictor::tiny(1),
            DepthPredictor::ChannelMean { normalise: true },
        ] {
            let d = p.predict_depth(&img(0)).unwrap();
            assert_eq!(d.dims(), (1, 12, 10));
            let lo = d.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = d.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (0.0, 1.0), "{}", p.id());
        }
    }

    #[test]
    fn constant_image_maps_to_half() {
        let flat = ImageTensor::filled(3, 8, 8, 0.4, ColourSpace::Rgb).unwrap();
        let d = DepthPredictor::ChannelMean { normalise: true }
            .predict_depth(&flat)
            .unwrap();
        assert!(d.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn deterministic() {
        let p = DepthPredictor::tiny(9);
        assert_eq!(
            p.predict_depth(&img(2)).unwrap(),
            p.predict_depth(&img(2)).unwrap()
        );
    }

    #[test]
    fn gbuffer_returns_registered_depth() {
        let colour = img(1);
        let depth = ImageTensor::from_fn(1, 12, 10, ColourSpace::Luminance, |_, y, x| {
            0.2 + 0.05 * ((x + y) % 9) as f64
        })
        .unwrap();
        let mut g = GBufferDepth::new();
        g.register(&colour, &depth).unwrap();
        let p = DepthPredictor::GBuffer(g);
        let d = p.predict_depth(&colour).unwrap();
        let (expect, _) = kernels::minmax_forward(depth.tensor());
        assert_eq!(d.tensor(), &expect);
        assert!(p.predict_depth(&img(2)).is_err());
    }
}
