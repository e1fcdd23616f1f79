use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::{checksum_tensors, conv_relu, random_conv, TapSpec};
use crate::tensor::{Scalar, Tensor, Var};
use crate::{Error, Result};

/// File name looked up inside a backbone weight directory.
pub const VGG16_WEIGHTS_FILE: &str = "vgg16.safetensors";

/// `(torchvision features index, cin, cout)` of every conv up to relu4_3.
const CONVS: [(usize, usize, usize); 10] = [
    (0, 3, 64),
    (2, 64, 64),
    (5, 64, 128),
    (7, 128, 128),
    (10, 128, 256),
    (12, 256, 256),
    (14, 256, 256),
    (17, 256, 512),
    (19, 512, 512),
    (21, 512, 512),
];

/// Convs per block; a tap closes each block.
const BLOCKS: [usize; 4] = [2, 2, 3, 3];

pub(super) fn taps() -> Vec<TapSpec> {
    vec![
        TapSpec {
            name: "relu1_2",
            channels: 64,
            stride: 1,
        },
        TapSpec {
            name: "relu2_2",
            channels: 128,
            stride: 2,
        },
        TapSpec {
            name: "relu3_3",
            channels: 256,
            stride: 4,
        },
        TapSpec {
            name: "relu4_3",
            channels: 512,
            stride: 8,
        },
    ]
}

/// The VGG-16 feature stack truncated after relu4_3.
#[derive(Clone, Debug)]
pub struct Vgg16 {
    convs: Vec<(Tensor<f32>, Tensor<f32>)>,
    checksum: String,
}

impl Vgg16 {
    /// Randomly initialised network; only useful for shape and plumbing tests.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = CONVS
            .iter()
            .map(|&(_, cin, cout)| random_conv(&mut rng, cout, cin, 3))
            .collect();
        Self::from_convs(convs)
    }

    fn from_convs(convs: Vec<(Tensor<f32>, Tensor<f32>)>) -> Self {
        let checksum = checksum_tensors(convs.iter().flat_map(|(w, b)| [w, b]));
        Self { convs, checksum }
    }

    /// Loads `features.{i}.weight` / `features.{i}.bias` from a safetensors
    /// file laid out like torchvision's `vgg16().state_dict()`.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        Self::from_safetensors(&bytes)
    }

    /// Loads [`VGG16_WEIGHTS_FILE`] from a weight directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(&dir.join(VGG16_WEIGHTS_FILE))
    }

    pub fn from_safetensors(bytes: &[u8]) -> Result<Self> {
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Corrupt {
            what: "vgg16 weights",
            reason: e.to_string(),
        })?;
        let fetch = |name: String, shape: Vec<usize>| -> Result<Tensor<f32>> {
            let view = st
                .tensor(&name)
                .map_err(|e| Error::config(format!("vgg16 weights: {name}: {e}")))?;
            if view.shape() != shape.as_slice() {
                return Err(Error::config(format!(
                    "vgg16 weights: {name} has shape {:?}, expected {shape:?}",
                    view.shape()
                )));
            }
            Ok(Tensor::new(
                shape,
                decode(&view).map_err(|e| Error::config(format!("vgg16 weights: {name}: {e}")))?,
            ))
        };
        let convs = CONVS
            .iter()
            .map(|&(i, cin, cout)| {
                Ok((
                    fetch(format!("features.{i}.weight"), vec![cout, cin, 3, 3])?,
                    fetch(format!("features.{i}.bias"), vec![cout])?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_convs(convs))
    }

    /// Serialises the weights in the layout [`Vgg16::load`] reads.
    pub fn to_safetensors(&self) -> Result<Vec<u8>> {
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = CONVS
            .iter()
            .zip(&self.convs)
            .flat_map(|(&(i, ..), (w, b))| {
                [("weight", w), ("bias", b)].map(|(kind, t)| {
                    (
                        format!("features.{i}.{kind}"),
                        t.shape().to_vec(),
                        t.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
                    )
                })
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(n, s, b)| {
                Ok((
                    n.clone(),
                    TensorView::new(Dtype::F32, s.clone(), b)
                        .map_err(|e| Error::Export(e.to_string()))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize(views, &None).map_err(|e| Error::Export(e.to_string()))
    }

    pub fn checksum(&self) -> String {
        self.checksum.clone()
    }

    pub(super) fn forward<'g, T: Scalar>(&self, x: Var<'g, T>, depth: usize) -> Vec<Var<'g, T>> {
        let mut out = Vec::with_capacity(depth);
        let mut h = x;
        let mut convs = self.convs.iter();
        for (block, &n) in BLOCKS.iter().enumerate().take(depth) {
            if block > 0 {
                h = h.max_pool2();
            }
            for (w, b) in convs.by_ref().take(n) {
                h = conv_relu(h, w, b, false);
            }
            out.push(h);
        }
        out
    }
}

fn decode(view: &TensorView<'_>) -> std::result::Result<Vec<f32>, String> {
    let raw = view.data();
    match view.dtype() {
        Dtype::F32 => Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()),
        Dtype::F64 => Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")) as f32)
            .collect()),
        other => Err(format!("unsupported dtype {other:?}")),
    }
}
