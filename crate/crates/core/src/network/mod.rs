//! The feed-forward stylisation network.
//!
//! Three downsampling convolutions with instance normalisation and no
//! activation, two residual blocks, two nearest-upsample + conv stages with
//! IN + ReLU, and a linear 9x9 output convolution. Every convolution uses
//! reflection padding.

mod export;
mod onnx;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use export::{
    expected_op_types, export_graph, inspect_onnx, ExportManifest, OnnxSummary, ONNX_INPUT,
    ONNX_OPSET, ONNX_OUTPUT,
};

use crate::imaging::{ColourSpace, ImageTensor};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

pub const IN_EPS: f64 = 1e-5;

/// Spatial dimensions must be multiples of this.
pub const SIZE_MULTIPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Nearest-neighbour x2 upsampling before the convolution.
    pub upsample: bool,
    pub norm: bool,
    pub relu: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageSpec {
    Conv(ConvSpec),
    /// `conv + IN + ReLU, conv + IN`, plus the identity skip.
    Residual {
        channels: usize,
    },
}

const fn conv(
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    upsample: bool,
    norm: bool,
    relu: bool,
) -> StageSpec {
    StageSpec::Conv(ConvSpec {
        cin,
        cout,
        kernel,
        stride,
        upsample,
        norm,
        relu,
    })
}

pub const ARCHITECTURE: [StageSpec; 8] = [
    conv(3, 32, 9, 1, false, true, false),
    conv(32, 64, 3, 2, false, true, false),
    conv(64, 128, 3, 2, false, true, false),
    StageSpec::Residual { channels: 128 },
    StageSpec::Residual { channels: 128 },
    conv(128, 64, 3, 1, true, true, true),
    conv(64, 32, 3, 1, true, true, true),
    conv(32, 3, 9, 1, false, false, false),
];

impl StageSpec {
    /// Convolutions of the stage in execution order.
    pub fn convs(&self) -> Vec<ConvSpec> {
        match *self {
            StageSpec::Conv(c) => vec![c],
            StageSpec::Residual { channels } => {
                let c = ConvSpec {
                    cin: channels,
                    cout: channels,
                    kernel: 3,
                    stride: 1,
                    upsample: false,
                    norm: true,
                    relu: true,
                };
                vec![c, ConvSpec { relu: false, ..c }]
            }
        }
    }
}

/// Trainable tensors of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    /// Instance-norm `(gamma, beta)`.
    pub affine: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> ConvParams<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.weight, &self.bias];
        if let Some((g, b)) = &self.affine {
            v.extend([g, b]);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.weight, &mut self.bias];
        if let Some((g, b)) = &mut self.affine {
            v.extend([g, b]);
        }
        v
    }
}

/// Network output: the display-range image and the raw linear output.
#[derive(Clone, Debug)]
pub struct Stylised {
    pub display: ImageTensor,
    pub raw: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleModel<T> {
    stages: Vec<Vec<ConvParams<T>>>,
}

/// Freshly initialised network: fan-in-scaled uniform conv weights and
/// biases, instance-norm affine at `(1, 0)`.
pub fn build_network(seed: u64) -> StyleModel<f32> {
    StyleModel::build(seed)
}

impl<T: Scalar> StyleModel<T> {
    pub fn build(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = ARCHITECTURE
            .iter()
            .map(|stage| {
                stage
                    .convs()
                    .into_iter()
                    .map(|spec| {
                        let fan_in = spec.cin * spec.kernel * spec.kernel;
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        let mut uniform = |n: usize| -> Vec<T> {
                            (0..n)
                                .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
                                .collect()
                        };
                        let weight = Tensor::new(
                            vec![spec.cout, spec.cin, spec.kernel, spec.kernel],
                            uniform(spec.cout * fan_in),
                        );
                        let bias = Tensor::new(vec![spec.cout], uniform(spec.cout));
                        let affine = spec.norm.then(|| {
                            (
                                Tensor::full(vec![spec.cout], T::one()),
                                Tensor::zeros(vec![spec.cout]),
                            )
                        });
                        ConvParams {
                            spec,
                            weight,
                            bias,
                            affine,
                        }
                    })
                    .collect()
            })
            .collect();
        Self { stages }
    }

    pub fn stages(&self) -> &[Vec<ConvParams<T>>] {
        &self.stages
    }

    /// Parameter tensors in a fixed order (stage, conv, weight/bias/gamma/beta).
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.stages
            .iter()
            .flatten()
            .flat_map(|c| c.tensors())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.stages
            .iter_mut()
            .flatten()
            .flat_map(|c| c.tensors_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// All parameters concatenated in [`StyleModel::params`] order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::domain(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }

    /// SHA-256 over the parameters at single precision.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.flat_params() {
            h.update((v.to_f64_lossy() as f32).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> StyleModel<U> {
        StyleModel {
            stages: self
                .stages
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|c| ConvParams {
                            spec: c.spec,
                            weight: c.weight.cast(),
                            bias: c.bias.cast(),
                            affine: c.affine.as_ref().map(|(g, b)| (g.cast(), b.cast())),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Every parameter, including the IN affine terms, set to zero.
    pub fn zeroed(&self) -> Self {
        let mut m = self.clone();
        for t in m.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        m
    }

    /// Records the parameters as tracked leaves, in [`StyleModel::params`] order.
    pub fn param_vars<'g>(&self, g: &'g Graph<T>) -> Vec<Var<'g, T>> {
        self.params()
            .into_iter()
            .map(|t| g.param(t.clone()))
            .collect()
    }

    /// Records the forward pass for `x` (`[n, 3, h, w]`) using `params` from
    /// [`StyleModel::param_vars`]. Returns the raw linear output.
    pub fn forward_with<'g>(&self, x: Var<'g, T>, params: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let shape = x.shape();
        check_input_shape(&shape)?;
        let mut it = params.iter().copied();
        let mut h = x;
        for stage in &self.stages {
            let input = h;
            for c in stage {
                h = apply_conv(h, c, &mut it);
            }
            if stage.len() == 2 {
                h = h.add(input);
            }
        }
        Ok(h)
    }

    /// Forward pass with freshly recorded parameter leaves.
    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let params = self.param_vars(g);
        self.forward_with(x, &params)
    }
}

fn apply_conv<'g, T: Scalar>(
    x: Var<'g, T>,
    c: &ConvParams<T>,
    params: &mut impl Iterator<Item = Var<'g, T>>,
) -> Var<'g, T> {
    let mut next = || {
        params
            .next()
            .expect("parameter list matches the architecture")
    };
    let (w, b) = (next(), next());
    let mut h = if c.spec.upsample { x.upsample2x() } else { x };
    h = h
        .reflect_pad(c.spec.kernel / 2)
        .conv2d(w, Some(b), c.spec.stride);
    if c.spec.norm {
        let (gamma, beta) = (next(), next());
        h = h.instance_norm(gamma, beta, IN_EPS);
    }
    if c.spec.relu {
        h = h.relu();
    }
    h
}

pub fn check_input_shape(shape: &[usize]) -> Result<()> {
    match *shape {
        [_, 3, h, w] if h % SIZE_MULTIPLE == 0 && w % SIZE_MULTIPLE == 0 && h > 0 && w > 0 => Ok(()),
        [_, 3, h, w] => Err(Error::domain(format!(
            "input {h}x{w} is not a multiple of {SIZE_MULTIPLE} in both dimensions; pad the image first"
        ))),
        _ => Err(Error::domain(format!("stylisation expects [n, 3, h, w], got {shape:?}"))),
    }
}

impl StyleModel<f32> {
    /// Stylises one rgb image. The display image is clamped to `[0, 1]`.
    pub fn stylise(&self, image: &ImageTensor) -> Result<Stylised> {
        if image.colour_space() != ColourSpace::Rgb {
            return Err(Error::domain("stylisation expects an rgb image"));
        }
        let g = Graph::<f32>::new();
        let x = g.constant(image.to_tensor());
        let raw = self.forward(&g, x)?.to_tensor();
        let (_, c, h, w) = raw.dims4();
        let display =
            ImageTensor::new_clamped(c, h, w, raw.cast::<f64>().into_data(), ColourSpace::Rgb)?;
        Ok(Stylised { display, raw })
    }
}

/// Closed-form trainable parameter count of [`ARCHITECTURE`].
pub fn architecture_param_count() -> usize {
    ARCHITECTURE
        .iter()
        .flat_map(|s| s.convs())
        .map(|c| {
            c.cout * c.cin * c.kernel * c.kernel + c.cout + if c.norm { 2 * c.cout } else { 0 }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(3, h, w, ColourSpace::Rgb, |c, y, x| {
            (0.5 + 0.45 * ((c as f64 + 1.0) * 0.37 * x as f64 - 0.21 * y as f64).sin())
                .clamp(0.0, 1.0)
        })
        .unwrap()
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(
            build_network(11).flat_params(),
            build_network(11).flat_params()
        );
        assert_ne!(
            build_network(11).flat_params(),
            build_network(12).flat_params()
        );
    }

    #[test]
    fn output_shape_matches_input() {
        let m = build_network(1);
        let out = m.stylise(&image(20, 28)).unwrap();
        assert_eq!(out.display.dims(), (3, 20, 28));
        assert_eq!(out.raw.shape(), &[1, 3, 20, 28]);
    }

    #[test]
    fn indivisible_input_names_the_padding_requirement() {
        let m = build_network(1);
        let err = m.stylise(&image(18, 20)).unwrap_err();
        assert!(
            matches!(err, Error::Domain(ref s) if s.contains("multiple of 4")),
            "{err}"
        );
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let m = build_network(2).zeroed();
        let out = m.stylise(&image(16, 16)).unwrap();
        assert!(out.raw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stylise_is_deterministic() {
        let m = build_network(3);
        let img = image(16, 12);
        assert_eq!(m.stylise(&img).unwrap().raw, m.stylise(&img).unwrap().raw);
    }

    #[test]
    fn flat_params_round_trip() {
        let m = build_network(4);
        let mut z = m.zeroed();
        z.set_flat_params(&m.flat_params()).unwrap();
        assert_eq!(z, m);
        assert!(z.set_flat_params(&[0.0]).is_err());
    }
}
