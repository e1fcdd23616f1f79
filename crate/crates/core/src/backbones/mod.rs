//! Frozen perceptual encoders and depth predictors.
//!
//! The production encoder is VGG-16 (weights from a safetensors file). The
//! tiny encoder and the analytic depth stubs are fixed-seed substitutes so
//! the whole pipeline runs and tests without downloaded weights. Losses and
//! metrics are only comparable between runs that use the same backbone.

mod depth;
mod encoders;
mod vgg;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use depth::{DepthPredictor, GBufferDepth, TinyDepthNet};
pub use encoders::{LinearEncoder, TinyEncoder};
pub use vgg::{Vgg16, VGG16_WEIGHTS_FILE};

use crate::imaging::{ColourSpace, ImageTensor};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Tap points used by the style loss, shallowest first.
pub const STYLE_LAYERS: [&str; 4] = ["relu1_2", "relu2_2", "relu3_3", "relu4_3"];
/// Tap point used by the content loss.
pub const CONTENT_LAYER: &str = "relu2_2";

/// Channel count and spatial stride of one encoder tap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TapSpec {
    pub name: &'static str,
    pub channels: usize,
    pub stride: usize,
}

/// Per-channel input normalisation applied before the first layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessing {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Preprocessing {
    pub const IDENTITY: Preprocessing = Preprocessing {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    pub const IMAGENET: Preprocessing = Preprocessing {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    fn apply<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        if *self == Self::IDENTITY {
            return x;
        }
        let scale: Vec<T> = self
            .std
            .iter()
            .map(|s| T::from_f64_lossy(1.0 / s))
            .collect();
        let shift: Vec<T> = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| T::from_f64_lossy(-m / s))
            .collect();
        x.channel_affine(&scale, &shift)
    }
}

/// A frozen feature extractor with named taps.
#[derive(Clone, Debug)]
pub enum Encoder {
    Vgg16(Vgg16),
    Tiny(TinyEncoder),
    Linear(LinearEncoder),
}

impl Encoder {
    pub fn tiny(seed: u64) -> Self {
        Encoder::Tiny(TinyEncoder::new(seed))
    }

    /// Identifier recorded in manifests and reports.
    pub fn id(&self) -> String {
        match self {
            Encoder::Vgg16(v) => format!("vgg16:{}", &v.checksum()[..12]),
            Encoder::Tiny(t) => format!("tiny-encoder:seed={}", t.seed()),
            Encoder::Linear(l) => format!("linear-encoder:c={}", l.channels()),
        }
    }

    pub fn taps(&self) -> Vec<TapSpec> {
        match self {
            Encoder::Vgg16(_) => vgg::taps(),
            Encoder::Tiny(_) => encoders::tiny_taps(),
            Encoder::Linear(l) => l.taps(),
        }
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        match self {
            Encoder::Vgg16(_) => &Preprocessing::IMAGENET,
            Encoder::Tiny(_) | Encoder::Linear(_) => &Preprocessing::IDENTITY,
        }
    }

    pub fn tap(&self, layer: &str) -> Result<TapSpec> {
        self.taps()
            .into_iter()
            .find(|t| t.name == layer)
            .ok_or_else(|| {
                Error::config(format!("encoder {} has no tap named {layer:?}", self.id()))
            })
    }

    /// `(channels, height, width)` of a tap for an `h x w` input.
    pub fn tap_shape(&self, layer: &str, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let t = self.tap(layer)?;
        Ok((t.channels, h / t.stride, w / t.stride))
    }

    /// Records the encoder on `x` (`[n, 3, h, w]`, rgb in `[0, 1]`) and
    /// returns one node per requested layer, in request order.
    pub fn encode_var<'g, T: Scalar>(
        &self,
        x: Var<'g, T>,
        layers: &[&str],
    ) -> Result<Vec<Var<'g, T>>> {
        let mut depth = 0;
        let taps = self.taps();
        for l in layers {
            let idx = taps.iter().position(|t| t.name == *l).ok_or_else(|| {
                Error::config(format!("encoder {} has no tap named {l:?}", self.id()))
            })?;
            depth = depth.max(idx + 1);
        }
        let x = self.preprocessing().apply(x);
        let all = match self {
            Encoder::Vgg16(v) => v.forward(x, depth),
            Encoder::Tiny(t) => t.forward(x, depth),
            Encoder::Linear(l) => l.forward(x, depth),
        };
        Ok(layers
            .iter()
            .map(|l| {
                all[taps
                    .iter()
                    .position(|t| t.name == *l)
                    .expect("checked above")]
            })
            .collect())
    }

    /// Every tap of the encoder for a single rgb image.
    pub fn encode_features(&self, image: &ImageTensor) -> Result<BTreeMap<String, ImageTensor>> {
        if image.colour_space() != ColourSpace::Rgb {
            return Err(Error::domain("encoders expect an rgb image"));
        }
        let names: Vec<&str> = self.taps().iter().map(|t| t.name).collect();
        let g = Graph::<f64>::new();
        let outs = self.encode_var(g.constant(image.to_tensor()), &names)?;
        names
            .iter()
            .zip(outs)
            .map(|(n, v)| {
                Ok((
                    n.to_string(),
                    ImageTensor::from_tensor(&v.value(), ColourSpace::Feature)?,
                ))
            })
            .collect()
    }

    /// SHA-256 over every frozen parameter.
    pub fn checksum(&self) -> String {
        match self {
            Encoder::Vgg16(v) => v.checksum(),
            Encoder::Tiny(t) => checksum_tensors(t.params()),
            Encoder::Linear(l) => checksum_tensors(std::iter::once(l.matrix())),
        }
    }
}

/// Which perceptual encoder to construct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderConfig {
    Tiny { seed: u64 },
    Vgg16 { weights_dir: PathBuf },
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Tiny { seed: 0 }
    }
}

impl EncoderConfig {
    pub fn build(&self) -> Result<Encoder> {
        match self {
            EncoderConfig::Tiny { seed } => Ok(Encoder::tiny(*seed)),
            EncoderConfig::Vgg16 { weights_dir } => {
                Ok(Encoder::Vgg16(Vgg16::load_dir(weights_dir)?))
            }
        }
    }
}

/// Which depth predictor to construct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DepthConfig {
    Tiny { seed: u64 },
    ChannelMean { normalise: bool },
}

impl Default for DepthConfig {
    fn default() -> Self {
        DepthConfig::Tiny { seed: 0 }
    }
}

impl DepthConfig {
    pub fn build(&self) -> DepthPredictor {
        match self {
            DepthConfig::Tiny { seed } => DepthPredictor::tiny(*seed),
            DepthConfig::ChannelMean { normalise } => DepthPredictor::ChannelMean {
                normalise: *normalise,
            },
        }
    }
}

pub(crate) fn checksum_tensors<'a>(ts: impl IntoIterator<Item = &'a Tensor<f32>>) -> String {
    let mut h = Sha256::new();
    for t in ts {
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// He-uniform weights and small uniform biases for a `[cout, cin, k, k]` conv.
pub(crate) fn random_conv(
    rng: &mut ChaCha8Rng,
    cout: usize,
    cin: usize,
    k: usize,
) -> (Tensor<f32>, Tensor<f32>) {
    let bound = (6.0 / (cin * k * k) as f64).sqrt();
    let w = (0..cout * cin * k * k)
        .map(|_| rng.gen_range(-bound..bound) as f32)
        .collect();
    let b = (0..cout).map(|_| rng.gen_range(-0.1..0.1) as f32).collect();
    (
        Tensor::new(vec![cout, cin, k, k], w),
        Tensor::new(vec![cout], b),
    )
}

/// Conv with padding `k / 2` and a ReLU. `reflect` selects reflection
/// padding instead of zeros.
pub(crate) fn conv_relu<'g, T: Scalar>(
    x: Var<'g, T>,
    w: &Tensor<f32>,
    b: &Tensor<f32>,
    reflect: bool,
) -> Var<'g, T> {
    let g = x.graph();
    let k = w.shape()[2];
    let padded = if reflect {
        x.reflect_pad(k / 2)
    } else {
        x.zero_pad(k / 2)
    };
    padded
        .conv2d(g.constant(w.cast()), Some(g.constant(b.cast())), 1)
        .relu()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(3, h, w, ColourSpace::Rgb, |c, y, x| {
            (0.5 + 0.4 * ((c + 1) as f64 * 0.3 * x as f64 + 0.2 * y as f64).sin()).clamp(0.0, 1.0)
        })
        .unwrap()
    }

    #[test]
    fn tiny_encoder_shapes_follow_tap_table() {
        let enc = Encoder::tiny(7);
        for (h, w) in [(32, 32), (24, 40)] {
            let feats = enc.encode_features(&test_image(h, w)).unwrap();
            for t in enc.taps() {
                assert_eq!(feats[t.name].dims(), enc.tap_shape(t.name, h, w).unwrap());
            }
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = Encoder::tiny(3);
        let img = test_image(16, 16);
        assert_eq!(
            enc.encode_features(&img).unwrap(),
            enc.encode_features(&img).unwrap()
        );
    }

    #[test]
    fn unknown_layer_is_a_config_error() {
        let enc = Encoder::tiny(1);
        let g = Graph::<f32>::new();
        let x = g.constant(test_image(8, 8).to_tensor());
        assert!(matches!(
            enc.encode_var(x, &["relu9_9"]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn encoder_weights_receive_no_gradient() {
        let enc = Encoder::tiny(5);
        let before = enc.checksum();
        let g = Graph::<f64>::new();
        let x = g.param(test_image(16, 16).to_tensor());
        let f = enc.encode_var(x, &STYLE_LAYERS).unwrap();
        let loss = f[3].sum_squares();
        let grads = g.backward(loss);
        assert!(grads.get(x).is_some());
        assert_eq!(enc.checksum(), before);
    }
}
