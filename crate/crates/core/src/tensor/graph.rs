use std::cell::{Ref, RefCell};

use super::kernels::{self, InstanceNormCache, MinMaxCache};
use super::{Scalar, Tensor};

enum Op<T> {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
    },
    ReflectPad {
        x: usize,
        pad: usize,
    },
    ZeroPad {
        x: usize,
        pad: usize,
    },
    InstanceNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        cache: InstanceNormCache<T>,
    },
    Relu {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        k: T,
    },
    Upsample2x {
        x: usize,
    },
    AvgPool2 {
        x: usize,
    },
    MaxPool2 {
        x: usize,
        arg: Vec<usize>,
    },
    Blur {
        x: usize,
        taps: Vec<T>,
    },
    Gram {
        x: usize,
    },
    ChannelMix {
        x: usize,
        matrix: Vec<T>,
    },
    ChannelAffine {
        x: usize,
        scale: Vec<T>,
    },
    SumSquares {
        x: usize,
        k: f64,
    },
    Sum {
        x: usize,
        k: f64,
    },
    MinMax {
        x: usize,
        cache: MinMaxCache,
    },
    WeightedSum {
        terms: Vec<(usize, T)>,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::InstanceNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Add { a, b } | Op::Sub { a, b } => vec![*a, *b],
            Op::WeightedSum { terms } => terms.iter().map(|t| t.0).collect(),
            Op::ReflectPad { x, .. }
            | Op::ZeroPad { x, .. }
            | Op::Relu { x }
            | Op::Scale { x, .. }
            | Op::Upsample2x { x }
            | Op::AvgPool2 { x }
            | Op::MaxPool2 { x, .. }
            | Op::Blur { x, .. }
            | Op::Gram { x }
            | Op::ChannelMix { x, .. }
            | Op::ChannelAffine { x, .. }
            | Op::SumSquares { x, .. }
            | Op::Sum { x, .. }
            | Op::MinMax { x, .. } => vec![*x],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only computation tape.
///
/// Values are computed eagerly when an op is recorded; [`Graph::backward`]
/// walks the tape in reverse.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.parents().iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn weighted_sum<'g>(&'g self, terms: &[(Var<'g, T>, T)]) -> Var<'g, T> {
        let mut total = T::zero();
        for (v, w) in terms {
            total = total + *w * self.value_ref(v.id).item();
        }
        self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                terms: terms.iter().map(|(v, w)| (v.id, *w)).collect(),
            },
        )
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self, root: Var<'_, T>) -> Grads<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.id].value.len(),
            1,
            "backward from a non-scalar node"
        );
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::full(
            nodes[root.id].value.shape().to_vec(),
            T::one(),
        ));
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            let contribs = backward_op(&nodes, node, &g);
            for (pid, pg) in contribs {
                if !nodes[pid].requires_grad {
                    continue;
                }
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[id] = Some(g);
        }
        Grads { grads }
    }
}

fn scale_tensor<T: Scalar>(t: &Tensor<T>, k: T) -> Tensor<T> {
    t.map(|v| v * k)
}

fn backward_op<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
) -> Vec<(usize, Tensor<T>)> {
    let val = |id: usize| &nodes[id].value;
    let needs = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => vec![],
        Op::Conv2d { x, w, b, stride } => {
            let (gx, gw, gb) = kernels::conv2d_backward(val(*x), val(*w), g, *stride, needs(*x));
            let mut out = vec![(*w, gw)];
            if let Some(gx) = gx {
                out.push((*x, gx));
            }
            if let Some(b) = b {
                out.push((*b, gb));
            }
            out
        }
        Op::ReflectPad { x, pad } => {
            let (_, _, h, w) = val(*x).dims4();
            vec![(*x, kernels::reflect_pad_backward(g, *pad, h, w))]
        }
        Op::ZeroPad { x: xi, pad } => vec![(*xi, kernels::zero_pad_backward(g, *pad))],
        Op::InstanceNorm {
            x,
            gamma,
            beta,
            cache,
        } => {
            let (gx, gg, gb) = kernels::instance_norm_backward(g, val(*gamma).data(), cache);
            let c = gg.len();
            vec![
                (*x, gx),
                (*gamma, Tensor::new(vec![c], gg)),
                (*beta, Tensor::new(vec![c], gb)),
            ]
        }
        Op::Relu { x } => {
            let xv = val(*x);
            let mut gx = g.clone();
            for (d, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                if v <= T::zero() {
                    *d = T::zero();
                }
            }
            vec![(*x, gx)]
        }
        Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub { a, b } => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
        Op::Scale { x, k } => vec![(*x, scale_tensor(g, *k))],
        Op::Upsample2x { x } => vec![(*x, kernels::upsample2x_backward(g))],
        Op::AvgPool2 { x } => {
            let (_, _, h, w) = val(*x).dims4();
            vec![(*x, kernels::avg_pool2_backward(g, h, w))]
        }
        Op::MaxPool2 { x, arg } => vec![(*x, kernels::max_pool2_backward(g, arg, val(*x).shape()))],
        Op::Blur { x, taps } => vec![(*x, kernels::blur_backward(g, taps))],
        Op::Gram { x } => vec![(*x, kernels::gram_backward(val(*x), g))],
        Op::ChannelMix { x, matrix } => {
            let cin = val(*x).shape()[1];
            vec![(*x, kernels::channel_mix_backward(g, matrix, cin))]
        }
        Op::ChannelAffine { x, scale } => {
            let (_, c, h, w) = g.dims4();
            let m = h * w;
            let mut gx = g.clone();
            for (i, v) in gx.data_mut().iter_mut().enumerate() {
                *v = *v * scale[(i / m) % c];
            }
            vec![(*x, gx)]
        }
        Op::SumSquares { x, k } => {
            let f = T::from_f64_lossy(2.0 * k) * g.item();
            vec![(*x, val(*x).map(|v| v * f))]
        }
        Op::Sum { x, k } => {
            let f = T::from_f64_lossy(*k) * g.item();
            vec![(*x, Tensor::full(val(*x).shape().to_vec(), f))]
        }
        Op::MinMax { x, cache } => vec![(*x, kernels::minmax_backward(&node.value, g, cache))],
        Op::WeightedSum { terms } => {
            let gv = g.item();
            terms
                .iter()
                .map(|&(id, w)| (id, Tensor::full(nodes[id].value.shape().to_vec(), gv * w)))
                .collect()
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zeros if the root does not depend on it.
    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.shape()))
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Ref<'g, Tensor<T>> {
        self.graph.value_ref(self.id)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    fn unary(self, f: impl FnOnce(&Tensor<T>) -> (Tensor<T>, Op<T>)) -> Self {
        let (v, op) = f(&self.value());
        self.graph.push(v, op)
    }

    pub fn conv2d(self, w: Self, b: Option<Self>, stride: usize) -> Self {
        let v = kernels::conv2d_forward(
            &self.value(),
            &w.value(),
            b.map(|b| b.value()).as_deref(),
            stride,
        );
        self.graph.push(
            v,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                stride,
            },
        )
    }

    pub fn reflect_pad(self, pad: usize) -> Self {
        if pad == 0 {
            return self;
        }
        let x = self.id;
        self.unary(|v| {
            (
                kernels::reflect_pad_forward(v, pad),
                Op::ReflectPad { x, pad },
            )
        })
    }

    pub fn zero_pad(self, pad: usize) -> Self {
        if pad == 0 {
            return self;
        }
        let x = self.id;
        self.unary(|v| (kernels::zero_pad_forward(v, pad), Op::ZeroPad { x, pad }))
    }

    pub fn instance_norm(self, gamma: Self, beta: Self, eps: f64) -> Self {
        let (v, cache) = kernels::instance_norm_forward(
            &self.value(),
            gamma.value().data(),
            beta.value().data(),
            eps,
        );
        self.graph.push(
            v,
            Op::InstanceNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                cache,
            },
        )
    }

    pub fn relu(self) -> Self {
        let x = self.id;
        self.unary(|v| {
            (
                v.map(|e| if e > T::zero() { e } else { T::zero() }),
                Op::Relu { x },
            )
        })
    }

    pub fn add(self, other: Self) -> Self {
        let mut v = self.to_tensor();
        v.add_assign(&other.value());
        self.graph.push(
            v,
            Op::Add {
                a: self.id,
                b: other.id,
            },
        )
    }

    pub fn sub(self, other: Self) -> Self {
        let mut v = self.to_tensor();
        {
            let o = other.value();
            assert_eq!(v.shape(), o.shape(), "sub shape mismatch");
            for (a, &b) in v.data_mut().iter_mut().zip(o.data()) {
                *a = *a - b;
            }
        }
        self.graph.push(
            v,
            Op::Sub {
                a: self.id,
                b: other.id,
            },
        )
    }

    pub fn scale(self, k: T) -> Self {
        let x = self.id;
        self.unary(|v| (scale_tensor(v, k), Op::Scale { x, k }))
    }

    pub fn upsample2x(self) -> Self {
        let x = self.id;
        self.unary(|v| (kernels::upsample2x_forward(v), Op::Upsample2x { x }))
    }

    pub fn avg_pool2(self) -> Self {
        let x = self.id;
        self.unary(|v| (kernels::avg_pool2_forward(v), Op::AvgPool2 { x }))
    }

    pub fn max_pool2(self) -> Self {
        let x = self.id;
        self.unary(|v| {
            let (o, arg) = kernels::max_pool2_forward(v);
            (o, Op::MaxPool2 { x, arg })
        })
    }

    /// Separable reflected blur with the given odd-length taps.
    pub fn blur(self, taps: &[T]) -> Self {
        let x = self.id;
        let taps = taps.to_vec();
        self.unary(|v| (kernels::blur_forward(v, &taps), Op::Blur { x, taps }))
    }

    pub fn gram(self) -> Self {
        let x = self.id;
        self.unary(|v| (kernels::gram_forward(v), Op::Gram { x }))
    }

    /// Constant per-pixel channel mixing; `matrix` is `[cout, cin]`.
    pub fn channel_mix(self, matrix: &[T], cout: usize) -> Self {
        let x = self.id;
        let matrix = matrix.to_vec();
        self.unary(|v| {
            (
                kernels::channel_mix_forward(v, &matrix, cout),
                Op::ChannelMix { x, matrix },
            )
        })
    }

    /// Constant per-channel `scale * x + shift`.
    pub fn channel_affine(self, scale: &[T], shift: &[T]) -> Self {
        let x = self.id;
        let scale = scale.to_vec();
        self.unary(|v| {
            let (_, c, h, w) = v.dims4();
            assert!(scale.len() == c && shift.len() == c);
            let m = h * w;
            let mut o = v.clone();
            for (i, e) in o.data_mut().iter_mut().enumerate() {
                let ch = (i / m) % c;
                *e = *e * scale[ch] + shift[ch];
            }
            (o, Op::ChannelAffine { x, scale })
        })
    }

    fn reduce(self, k: f64, squares: bool) -> Self {
        let x = self.id;
        self.unary(|v| {
            let s: f64 = if squares {
                v.data().iter().map(|e| e.to_f64_lossy().powi(2)).sum()
            } else {
                v.data().iter().map(|e| e.to_f64_lossy()).sum()
            };
            let out = Tensor::scalar(T::from_f64_lossy(k * s));
            let op = if squares {
                Op::SumSquares { x, k }
            } else {
                Op::Sum { x, k }
            };
            (out, op)
        })
    }

    pub fn sum(self) -> Self {
        self.reduce(1.0, false)
    }

    pub fn mean(self) -> Self {
        let n = self.value().len();
        self.reduce(1.0 / n as f64, false)
    }

    pub fn sum_squares(self) -> Self {
        self.reduce(1.0, true)
    }

    /// Mean of squared elements.
    pub fn mean_squares(self) -> Self {
        let n = self.value().len();
        self.reduce(1.0 / n as f64, true)
    }

    /// Per batch item, rescales values linearly onto `[0, 1]`.
    pub fn minmax_normalise(self) -> Self {
        let x = self.id;
        self.unary(|v| {
            let (o, cache) = kernels::minmax_forward(v);
            (o, Op::MinMax { x, cache })
        })
    }
}
