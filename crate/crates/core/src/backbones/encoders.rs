use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{conv_relu, random_conv, TapSpec, STYLE_LAYERS};
use crate::tensor::{Scalar, Tensor, Var};

const TINY_WIDTHS: [usize; 4] = [8, 12, 16, 16];

pub(super) fn tiny_taps() -> Vec<TapSpec> {
    STYLE_LAYERS
        .iter()
        .zip(TINY_WIDTHS)
        .enumerate()
        .map(|(i, (&name, channels))| TapSpec {
            name,
            channels,
            stride: 1 << i,
        })
        .collect()
}

/// Fixed-seed random convnet standing in for VGG-16.
///
/// Four reflection-padded 3x3 conv+ReLU stages separated by 2x2 average
/// pooling, one tap per stage, named after the VGG taps they replace:
///
/// | tap     | channels | stride |
/// |---------|----------|--------|
/// | relu1_2 | 8        | 1      |
/// | relu2_2 | 12       | 2      |
/// | relu3_3 | 16       | 4      |
/// | relu4_3 | 16       | 8      |
#[derive(Clone, Debug)]
pub struct TinyEncoder {
    seed: u64,
    layers: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl TinyEncoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let layers = TINY_WIDTHS
            .iter()
            .map(|&cout| {
                let l = random_conv(&mut rng, cout, cin, 3);
                cin = cout;
                l
            })
            .collect();
        Self { seed, layers }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<f32>> {
        self.layers.iter().flat_map(|(w, b)| [w, b])
    }

    pub(super) fn forward<'g, T: Scalar>(&self, x: Var<'g, T>, depth: usize) -> Vec<Var<'g, T>> {
        let mut out = Vec::with_capacity(depth);
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().take(depth).enumerate() {
            if i > 0 {
                h = h.avg_pool2();
            }
            h = conv_relu(h, w, b, true);
            out.push(h);
        }
        out
    }
}

/// Pointwise linear encoder: every tap is `M x` at full resolution.
///
/// Features are exact linear functions of the pixels, which makes loss and
/// metric values computable in closed form.
#[derive(Clone, Debug)]
pub struct LinearEncoder {
    matrix: Tensor<f32>,
}

impl LinearEncoder {
    /// `matrix` is `[channels, 3]`, row-major.
    pub fn new(channels: usize, matrix: Vec<f32>) -> Self {
        Self {
            matrix: Tensor::new(vec![channels, 3], matrix),
        }
    }

    /// Passes the three colour channels through unchanged.
    pub fn identity() -> Self {
        Self::new(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    }

    pub fn channels(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn matrix(&self) -> &Tensor<f32> {
        &self.matrix
    }

    pub(super) fn taps(&self) -> Vec<TapSpec> {
        STYLE_LAYERS
            .iter()
            .map(|&name| TapSpec {
                name,
                channels: self.channels(),
                stride: 1,
            })
            .collect()
    }

    pub(super) fn forward<'g, T: Scalar>(&self, x: Var<'g, T>, depth: usize) -> Vec<Var<'g, T>> {
        let m: Vec<T> = self.matrix.cast::<T>().into_data();
        let f = x.channel_mix(&m, self.channels());
        vec![f; depth]
    }
}
