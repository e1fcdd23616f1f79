//! Content, style, depth and DoG losses and their weighted sum.
//!
//! Every term is averaged per element so the default weights behave the same
//! at any resolution. The style term sums squared Frobenius distances of
//! C·H·W-normalised Gram matrices over the four style taps.

use serde::{Deserialize, Serialize};

use crate::backbones::{DepthPredictor, Encoder, CONTENT_LAYER, STYLE_LAYERS};
use crate::imaging::{dog_var, ColourSpace, DogParams, ImageTensor};
use crate::tensor::{kernels, Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub content: f64,
    pub style: f64,
    pub depth: f64,
    pub dog: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            content: 1e5,
            style: 1e10,
            depth: 1e3,
            dog: 1e3,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        content: 0.0,
        style: 0.0,
        depth: 0.0,
        dog: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.named() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::config(format!(
                    "loss weight {name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("content", self.content),
            ("style", self.style),
            ("depth", self.depth),
            ("dog", self.dog),
        ]
    }
}

/// Unweighted loss terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub content: f64,
    pub style: f64,
    pub depth: f64,
    pub dog: f64,
    /// Per-tap contributions to `style`, in tap order.
    pub style_layers: Vec<(String, f64)>,
}

/// Weighted contributions (`weight * term`) and their sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub content: f64,
    pub style: f64,
    pub depth: f64,
    pub dog: f64,
    pub total: f64,
    pub style_layers: Vec<(String, f64)>,
    pub raw: LossComponents,
}

/// Weights the components. Any non-finite component is reported by name.
pub fn total_loss(weights: &LossWeights, c: &LossComponents) -> Result<LossReport> {
    for (name, v) in [
        ("content", c.content),
        ("style", c.style),
        ("depth", c.depth),
        ("dog", c.dog),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                component: name.into(),
                step: 0,
            });
        }
    }
    let content = weights.content * c.content;
    let style = weights.style * c.style;
    let depth = weights.depth * c.depth;
    let dog = weights.dog * c.dog;
    Ok(LossReport {
        content,
        style,
        depth,
        dog,
        total: content + style + depth + dog,
        style_layers: c
            .style_layers
            .iter()
            .map(|(n, v)| (n.clone(), weights.style * v))
            .collect(),
        raw: c.clone(),
    })
}

/// Cached Gram matrices of one style image, one `[c, c]` matrix per tap.
#[derive(Clone, Debug)]
pub struct StyleTarget {
    layers: Vec<(&'static str, Tensor<f64>)>,
}

impl StyleTarget {
    /// Encodes `style` once. `resize_to` resamples it first, typically to the
    /// training resolution.
    pub fn new(
        encoder: &Encoder,
        style: &ImageTensor,
        resize_to: Option<(usize, usize)>,
    ) -> Result<Self> {
        Self::with_layers(encoder, style, resize_to, &STYLE_LAYERS)
    }

    pub fn with_layers(
        encoder: &Encoder,
        style: &ImageTensor,
        resize_to: Option<(usize, usize)>,
        layers: &[&'static str],
    ) -> Result<Self> {
        if style.colour_space() != ColourSpace::Rgb {
            return Err(Error::domain("style image must be rgb"));
        }
        let style = match resize_to {
            Some((h, w)) if (h, w) != (style.height(), style.width()) => {
                style.resize_bilinear(h, w)?
            }
            _ => style.clone(),
        };
        let g = Graph::<f64>::new();
        let feats = encoder.encode_var(g.constant(style.to_tensor()), layers)?;
        let layers = layers
            .iter()
            .zip(feats)
            .map(|(&name, f)| {
                let gram = kernels::gram_forward(&f.value());
                let c = gram.shape()[1];
                (name, gram.reshape(vec![c, c]))
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> impl Iterator<Item = (&'static str, &Tensor<f64>)> {
        self.layers.iter().map(|(n, t)| (*n, t))
    }

    pub fn layer_names(&self) -> Vec<&'static str> {
        self.layers.iter().map(|(n, _)| *n).collect()
    }
}

/// Recorded loss nodes for one batch.
pub struct LossTerms<'g, T: Scalar> {
    pub content: Var<'g, T>,
    pub style: Var<'g, T>,
    pub style_layers: Vec<Var<'g, T>>,
    pub depth: Var<'g, T>,
    pub dog: Var<'g, T>,
    pub total: Var<'g, T>,
}

impl<T: Scalar> LossTerms<'_, T> {
    pub fn components(&self, layer_names: &[&str]) -> LossComponents {
        let v = |x: &Var<'_, T>| x.item().to_f64_lossy();
        LossComponents {
            content: v(&self.content),
            style: v(&self.style),
            depth: v(&self.depth),
            dog: v(&self.dog),
            style_layers: layer_names
                .iter()
                .zip(&self.style_layers)
                .map(|(n, x)| (n.to_string(), v(x)))
                .collect(),
        }
    }
}

/// The full objective with frozen backbones and a cached style target.
#[derive(Clone, Debug)]
pub struct Objective {
    pub encoder: Encoder,
    pub depth: DepthPredictor,
    pub target: StyleTarget,
    pub weights: LossWeights,
    pub dog: DogParams,
}

impl Objective {
    /// Records every term for a content batch `x` and its stylisation `yhat`
    /// (both `[n, 3, h, w]`).
    pub fn terms<'g, T: Scalar>(
        &self,
        x: Var<'g, T>,
        yhat: Var<'g, T>,
    ) -> Result<LossTerms<'g, T>> {
        let g = x.graph();
        let (xs, ys) = (x.shape(), yhat.shape());
        if xs != ys {
            return Err(Error::domain(format!(
                "content {xs:?} and stylised {ys:?} shapes differ"
            )));
        }
        let mut layers: Vec<&str> = self.target.layer_names();
        layers.push(CONTENT_LAYER);
        let fy = self.encoder.encode_var(yhat, &layers)?;
        let fx = self.encoder.encode_var(x, &[CONTENT_LAYER])?;
        let content = fy[layers.len() - 1].sub(fx[0]).mean_squares();

        let n = xs[0];
        let inv_n = T::from_f64_lossy(1.0 / n as f64);
        let style_layers: Vec<Var<'g, T>> = self
            .target
            .layers()
            .zip(&fy)
            .map(|((_, target), f)| {
                let t = target.cast::<T>();
                let mut shape = vec![n];
                shape.extend_from_slice(t.shape());
                let tiled = Tensor::new(shape, t.data().repeat(n));
                f.gram().sub(g.constant(tiled)).sum_squares().scale(inv_n)
            })
            .collect();
        let style = g.weighted_sum(
            &style_layers
                .iter()
                .map(|&v| (v, T::one()))
                .collect::<Vec<_>>(),
        );

        let depth = self
            .depth
            .predict_var(yhat)?
            .sub(self.depth.predict_var(x)?)
            .mean_squares();
        let dog = dog_var(yhat, self.dog)?
            .sub(dog_var(x, self.dog)?)
            .mean_squares();

        let w = |v: f64| T::from_f64_lossy(v);
        let total = g.weighted_sum(&[
            (content, w(self.weights.content)),
            (style, w(self.weights.style)),
            (depth, w(self.weights.depth)),
            (dog, w(self.weights.dog)),
        ]);
        Ok(LossTerms {
            content,
            style,
            style_layers,
            depth,
            dog,
            total,
        })
    }

    /// Evaluates the weighted objective for one (content, stylised) pair.
    pub fn evaluate(&self, x: &ImageTensor, yhat: &ImageTensor) -> Result<LossReport> {
        x.require_same_shape(yhat, "stylised image")?;
        let g = Graph::<f64>::new();
        let t = self.terms(g.constant(x.to_tensor()), g.constant(yhat.to_tensor()))?;
        total_loss(&self.weights, &t.components(&self.target.layer_names()))
    }
}

fn rgb_pair(a: &ImageTensor, b: &ImageTensor, what: &str) -> Result<()> {
    if a.colour_space() != ColourSpace::Rgb || b.colour_space() != ColourSpace::Rgb {
        return Err(Error::domain(format!("{what} expects rgb images")));
    }
    a.require_same_shape(b, what)
}

/// Mean squared feature difference at the content tap.
pub fn content_loss(encoder: &Encoder, x: &ImageTensor, yhat: &ImageTensor) -> Result<f64> {
    rgb_pair(x, yhat, "content loss")?;
    let g = Graph::<f64>::new();
    let fx = encoder.encode_var(g.constant(x.to_tensor()), &[CONTENT_LAYER])?;
    let fy = encoder.encode_var(g.constant(yhat.to_tensor()), &[CONTENT_LAYER])?;
    Ok(fy[0].sub(fx[0]).mean_squares().item())
}

/// Sum over the style taps of squared Gram differences. `y` may have any size.
pub fn style_loss(encoder: &Encoder, yhat: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    style_loss_layers(encoder, yhat, y, &STYLE_LAYERS)
}

pub fn style_loss_layers(
    encoder: &Encoder,
    yhat: &ImageTensor,
    y: &ImageTensor,
    layers: &[&'static str],
) -> Result<f64> {
    let target = StyleTarget::with_layers(encoder, y, None, layers)?;
    style_loss_cached(encoder, yhat, &target)
}

pub fn style_loss_cached(
    encoder: &Encoder,
    yhat: &ImageTensor,
    target: &StyleTarget,
) -> Result<f64> {
    if yhat.colour_space() != ColourSpace::Rgb {
        return Err(Error::domain("style loss expects an rgb image"));
    }
    let g = Graph::<f64>::new();
    let feats = encoder.encode_var(g.constant(yhat.to_tensor()), &target.layer_names())?;
    Ok(target
        .layers()
        .zip(feats)
        .map(|((_, t), f)| {
            let gram = f.gram().to_tensor();
            gram.data()
                .iter()
                .zip(t.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum())
}

/// Mean squared difference of the two normalised depth maps.
pub fn depth_loss(predictor: &DepthPredictor, x: &ImageTensor, yhat: &ImageTensor) -> Result<f64> {
    rgb_pair(x, yhat, "depth loss")?;
    let g = Graph::<f64>::new();
    let dx = predictor.predict_var(g.constant(x.to_tensor()))?;
    let dy = predictor.predict_var(g.constant(yhat.to_tensor()))?;
    Ok(dy.sub(dx).mean_squares().item())
}

/// Mean squared difference of the two DoG responses.
pub fn dog_loss(x: &ImageTensor, yhat: &ImageTensor) -> Result<f64> {
    dog_loss_with(x, yhat, DogParams::default())
}

pub fn dog_loss_with(x: &ImageTensor, yhat: &ImageTensor, params: DogParams) -> Result<f64> {
    x.require_same_shape(yhat, "dog loss")?;
    let g = Graph::<f64>::new();
    let a = dog_var(g.constant(x.to_tensor()), params)?;
    let b = dog_var(g.constant(yhat.to_tensor()), params)?;
    Ok(b.sub(a).mean_squares().item())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, phase: f64) -> ImageTensor {
        ImageTensor::from_fn(3, h, w, ColourSpace::Rgb, |c, y, x| {
            0.5 + 0.4 * (phase + 0.9 * x as f64 + 0.6 * y as f64 + c as f64).sin()
        })
        .unwrap()
    }

    #[test]
    fn default_weights_on_unit_components() {
        let c = LossComponents {
            content: 1.0,
            style: 1.0,
            depth: 1.0,
            dog: 1.0,
            style_layers: vec![],
        };
        let r = total_loss(&LossWeights::default(), &c).unwrap();
        assert_eq!(r.total, 1e5 + 1e10 + 1e3 + 1e3);
        assert_eq!(total_loss(&LossWeights::ZERO, &c).unwrap().total, 0.0);
    }

    #[test]
    fn non_finite_component_is_named() {
        let c = LossComponents {
            depth: f64::NAN,
            ..Default::default()
        };
        let err = total_loss(&LossWeights::default(), &c).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { ref component, .. } if component == "depth"));
    }

    #[test]
    fn negative_weight_is_rejected() {
        let w = LossWeights {
            dog: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn identical_images_give_zero_terms() {
        let enc = Encoder::tiny(1);
        let x = img(16, 16, 0.0);
        assert_eq!(content_loss(&enc, &x, &x).unwrap(), 0.0);
        assert_eq!(style_loss(&enc, &x, &x).unwrap(), 0.0);
        assert_eq!(depth_loss(&DepthPredictor::tiny(2), &x, &x).unwrap(), 0.0);
        assert_eq!(dog_loss(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn batched_terms_match_single_evaluation() {
        let enc = Encoder::tiny(1);
        let style = img(24, 20, 2.0);
        let obj = Objective {
            target: StyleTarget::new(&enc, &style, None).unwrap(),
            encoder: enc,
            depth: DepthPredictor::tiny(3),
            weights: LossWeights::default(),
            dog: DogParams::default(),
        };
        let (x0, y0) = (img(16, 16, 0.0), img(16, 16, 0.7));
        let (x1, y1) = (img(16, 16, 1.3), img(16, 16, 0.2));
        let r0 = obj.evaluate(&x0, &y0).unwrap();
        let r1 = obj.evaluate(&x1, &y1).unwrap();
        let g = Graph::<f64>::new();
        let xb = g.constant(Tensor::stack(&[x0.to_tensor(), x1.to_tensor()]));
        let yb = g.constant(Tensor::stack(&[y0.to_tensor(), y1.to_tensor()]));
        let t = obj.terms(xb, yb).unwrap();
        let mean = (r0.total + r1.total) / 2.0;
        assert!(
            (t.total.item() - mean).abs() <= 1e-9 * mean,
            "{} vs {mean}",
            t.total.item()
        );
    }
}
