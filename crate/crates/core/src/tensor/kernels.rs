//! Forward and adjoint kernels shared by the tape and the plain image ops.

use super::{Scalar, Tensor};

/// Mirror index into `0..n` without repeating the edge sample
/// (`d c b | a b c d | c b a`), folded periodically for any offset.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Elements of the im2col scratch buffer above which the conv kernels band
/// the output rows.
const COL_BUDGET: usize = 1 << 23;

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    hout: usize,
    wout: usize,
}

impl ConvGeom {
    fn kdim(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn rows_per_band(&self) -> usize {
        (COL_BUDGET / (self.kdim() * self.wout).max(1)).clamp(1, self.hout)
    }

    fn fill_cols<T: Scalar>(&self, x: &[T], r0: usize, r1: usize, cols: &mut [T]) {
        let band = (r1 - r0) * self.wout;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * band..(row + 1) * band];
                    for r in r0..r1 {
                        let src = &plane[(r * self.stride + ky) * self.w..];
                        let d = &mut dst[(r - r0) * self.wout..(r - r0 + 1) * self.wout];
                        if self.stride == 1 {
                            d.copy_from_slice(&src[kx..kx + self.wout]);
                        } else {
                            for (c, v) in d.iter_mut().enumerate() {
                                *v = src[c * self.stride + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    fn scatter_cols<T: Scalar>(&self, cols: &[T], r0: usize, r1: usize, gx: &mut [T]) {
        let band = (r1 - r0) * self.wout;
        for ci in 0..self.cin {
            let plane = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * band..(row + 1) * band];
                    for r in r0..r1 {
                        let base = (r * self.stride + ky) * self.w + kx;
                        let s = &src[(r - r0) * self.wout..(r - r0 + 1) * self.wout];
                        for (c, &v) in s.iter().enumerate() {
                            let p = &mut plane[base + c * self.stride];
                            *p = *p + v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize) -> ConvGeom {
    let (_, cin, h, wd) = x.dims4();
    let (_, wcin, k, k2) = w.dims4();
    assert_eq!(cin, wcin, "conv input channels {cin} vs weight {wcin}");
    assert_eq!(k, k2, "square kernels only");
    assert!(
        h >= k && wd >= k,
        "conv input {h}x{wd} smaller than kernel {k}"
    );
    ConvGeom {
        cin,
        h,
        w: wd,
        k,
        stride,
        hout: (h - k) / stride + 1,
        wout: (wd - k) / stride + 1,
    }
}

/// Valid (unpadded) cross-correlation. `w` is `[cout, cin, k, k]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Tensor<T> {
    let g = conv_geom(x, w, stride);
    let (n, ..) = x.dims4();
    let cout = w.shape()[0];
    let p = g.hout * g.wout;
    let kdim = g.kdim();
    let rows = g.rows_per_band();
    let mut out = Tensor::zeros(vec![n, cout, g.hout, g.wout]);
    let mut cols = vec![T::zero(); kdim * rows * g.wout];
    let mut tmp = vec![T::zero(); cout * rows * g.wout];
    for b in 0..n {
        let xb = &x.data()[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
        let ob = &mut out.data_mut()[b * cout * p..(b + 1) * cout * p];
        let mut r0 = 0;
        while r0 < g.hout {
            let r1 = (r0 + rows).min(g.hout);
            let band = (r1 - r0) * g.wout;
            g.fill_cols(xb, r0, r1, &mut cols[..kdim * band]);
            T::gemm(
                cout,
                kdim,
                band,
                T::one(),
                w.data(),
                false,
                &cols[..kdim * band],
                false,
                T::zero(),
                &mut tmp[..cout * band],
            );
            for co in 0..cout {
                ob[co * p + r0 * g.wout..co * p + r1 * g.wout]
                    .copy_from_slice(&tmp[co * band..(co + 1) * band]);
            }
            r0 = r1;
        }
        if let Some(bias) = bias {
            for co in 0..cout {
                let bv = bias.data()[co];
                for v in &mut ob[co * p..(co + 1) * p] {
                    *v = *v + bv;
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let g = conv_geom(x, w, stride);
    let (n, ..) = x.dims4();
    let cout = w.shape()[0];
    let p = g.hout * g.wout;
    let kdim = g.kdim();
    let rows = g.rows_per_band();
    let mut gx = need_x.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut gw = Tensor::zeros(w.shape().to_vec());
    let mut gb = Tensor::zeros(vec![cout]);
    let mut cols = vec![T::zero(); kdim * rows * g.wout];
    let mut gyb = vec![T::zero(); cout * rows * g.wout];
    for b in 0..n {
        let xb = &x.data()[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
        let gyn = &gy.data()[b * cout * p..(b + 1) * cout * p];
        for co in 0..cout {
            let s = gyn[co * p..(co + 1) * p]
                .iter()
                .fold(0.0, |acc, v| acc + v.to_f64_lossy());
            gb.data_mut()[co] = gb.data()[co] + T::from_f64_lossy(s);
        }
        let mut r0 = 0;
        while r0 < g.hout {
            let r1 = (r0 + rows).min(g.hout);
            let band = (r1 - r0) * g.wout;
            for co in 0..cout {
                gyb[co * band..(co + 1) * band]
                    .copy_from_slice(&gyn[co * p + r0 * g.wout..co * p + r1 * g.wout]);
            }
            g.fill_cols(xb, r0, r1, &mut cols[..kdim * band]);
            T::gemm(
                cout,
                band,
                kdim,
                T::one(),
                &gyb[..cout * band],
                false,
                &cols[..kdim * band],
                true,
                T::one(),
                gw.data_mut(),
            );
            if let Some(gx) = gx.as_mut() {
                T::gemm(
                    kdim,
                    cout,
                    band,
                    T::one(),
                    w.data(),
                    true,
                    &gyb[..cout * band],
                    false,
                    T::zero(),
                    &mut cols[..kdim * band],
                );
                let gxb = &mut gx.data_mut()[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
                g.scatter_cols(&cols[..kdim * band], r0, r1, gxb);
            }
            r0 = r1;
        }
    }
    (gx, gw, gb)
}

pub fn reflect_pad_forward<T: Scalar>(x: &Tensor<T>, pad: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(vec![n, c, hp, wp]);
    let xs = x.data();
    let os = out.data_mut();
    for plane in 0..n * c {
        let src = &xs[plane * h * w..(plane + 1) * h * w];
        let dst = &mut os[plane * hp * wp..(plane + 1) * hp * wp];
        for y in 0..hp {
            let sy = reflect_index(y as isize - pad as isize, h);
            for xx in 0..wp {
                let sx = reflect_index(xx as isize - pad as isize, w);
                dst[y * wp + xx] = src[sy * w + sx];
            }
        }
    }
    out
}

pub fn reflect_pad_backward<T: Scalar>(
    gy: &Tensor<T>,
    pad: usize,
    h: usize,
    w: usize,
) -> Tensor<T> {
    let (n, c, hp, wp) = gy.dims4();
    let mut gx = Tensor::zeros(vec![n, c, h, w]);
    let gs = gy.data();
    let xs = gx.data_mut();
    for plane in 0..n * c {
        let src = &gs[plane * hp * wp..(plane + 1) * hp * wp];
        let dst = &mut xs[plane * h * w..(plane + 1) * h * w];
        for y in 0..hp {
            let sy = reflect_index(y as isize - pad as isize, h);
            for xx in 0..wp {
                let sx = reflect_index(xx as isize - pad as isize, w);
                dst[sy * w + sx] = dst[sy * w + sx] + src[y * wp + xx];
            }
        }
    }
    gx
}

pub fn zero_pad_forward<T: Scalar>(x: &Tensor<T>, pad: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(vec![n, c, hp, wp]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * hp * wp..(plane + 1) * hp * wp];
        for y in 0..h {
            dst[(y + pad) * wp + pad..(y + pad) * wp + pad + w]
                .copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    out
}

pub fn zero_pad_backward<T: Scalar>(gy: &Tensor<T>, pad: usize) -> Tensor<T> {
    let (n, c, hp, wp) = gy.dims4();
    let (h, w) = (hp - 2 * pad, wp - 2 * pad);
    let mut gx = Tensor::zeros(vec![n, c, h, w]);
    for plane in 0..n * c {
        let src = &gy.data()[plane * hp * wp..(plane + 1) * hp * wp];
        let dst = &mut gx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            dst[y * w..(y + 1) * w]
                .copy_from_slice(&src[(y + pad) * wp + pad..(y + pad) * wp + pad + w]);
        }
    }
    gx
}

/// Saved state of an instance-norm forward pass.
#[derive(Clone, Debug)]
pub struct InstanceNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Per-sample, per-channel normalisation with biased variance, followed by
/// the affine `gamma * xhat + beta`.
pub fn instance_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (Tensor<T>, InstanceNormCache<T>) {
    let (n, c, h, w) = x.dims4();
    let m = h * w;
    let mut xhat = Tensor::zeros(x.shape().to_vec());
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut inv_std = Vec::with_capacity(n * c);
    for plane in 0..n * c {
        let ch = plane % c;
        let src = &x.data()[plane * m..(plane + 1) * m];
        let mean = src.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / m as f64;
        let var = src
            .iter()
            .map(|v| {
                let d = v.to_f64_lossy() - mean;
                d * d
            })
            .sum::<f64>()
            / m as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(T::from_f64_lossy(is));
        let xh = &mut xhat.data_mut()[plane * m..(plane + 1) * m];
        for (d, &s) in xh.iter_mut().zip(src) {
            *d = T::from_f64_lossy((s.to_f64_lossy() - mean) * is);
        }
        let o = &mut out.data_mut()[plane * m..(plane + 1) * m];
        for (d, &s) in o.iter_mut().zip(xh.iter()) {
            *d = gamma[ch] * s + beta[ch];
        }
    }
    (out, InstanceNormCache { xhat, inv_std })
}

/// Returns `(gx, ggamma, gbeta)`.
pub fn instance_norm_backward<T: Scalar>(
    gy: &Tensor<T>,
    gamma: &[T],
    cache: &InstanceNormCache<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let (n, c, h, w) = gy.dims4();
    let m = h * w;
    let mf = m as f64;
    let mut gx = Tensor::zeros(gy.shape().to_vec());
    let mut ggamma = vec![0.0f64; c];
    let mut gbeta = vec![0.0f64; c];
    for plane in 0..n * c {
        let ch = plane % c;
        let g = &gy.data()[plane * m..(plane + 1) * m];
        let xh = &cache.xhat.data()[plane * m..(plane + 1) * m];
        let gam = gamma[ch].to_f64_lossy();
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for (&gv, &xv) in g.iter().zip(xh) {
            let gv = gv.to_f64_lossy();
            let xv = xv.to_f64_lossy();
            ggamma[ch] += gv * xv;
            gbeta[ch] += gv;
            sum_g += gv * gam;
            sum_gx += gv * gam * xv;
        }
        let is = cache.inv_std[plane].to_f64_lossy();
        let dst = &mut gx.data_mut()[plane * m..(plane + 1) * m];
        for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(xh) {
            let gxh = gv.to_f64_lossy() * gam;
            *d = T::from_f64_lossy(is / mf * (mf * gxh - sum_g - xv.to_f64_lossy() * sum_gx));
        }
    }
    let conv = |v: Vec<f64>| v.into_iter().map(T::from_f64_lossy).collect();
    (gx, conv(ggamma), conv(gbeta))
}

pub fn upsample2x_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(vec![n, c, h2, w2]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * h2 * w2..(plane + 1) * h2 * w2];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h2, w2) = gy.dims4();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Tensor::zeros(vec![n, c, h, w]);
    for plane in 0..n * c {
        let src = &gy.data()[plane * h2 * w2..(plane + 1) * h2 * w2];
        let dst = &mut gx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                let d = &mut dst[(y / 2) * w + xx / 2];
                *d = *d + src[y * w2 + xx];
            }
        }
    }
    gx
}

/// 2x2 average pooling with stride 2 (trailing odd row/column dropped).
pub fn avg_pool2_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = Tensor::zeros(vec![n, c, ho, wo]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * ho * wo..(plane + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                let a = src[2 * y * w + 2 * xx] + src[2 * y * w + 2 * xx + 1];
                let b = src[(2 * y + 1) * w + 2 * xx] + src[(2 * y + 1) * w + 2 * xx + 1];
                dst[y * wo + xx] = (a + b) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(gy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (n, c, ho, wo) = gy.dims4();
    let quarter = T::from_f64_lossy(0.25);
    let mut gx = Tensor::zeros(vec![n, c, h, w]);
    for plane in 0..n * c {
        let src = &gy.data()[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut gx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..ho {
            for xx in 0..wo {
                let g = src[y * wo + xx] * quarter;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    dst[(2 * y + dy) * w + 2 * xx + dx] = g;
                }
            }
        }
    }
    gx
}

/// 2x2 max pooling with stride 2; returns the flat argmax of each window.
pub fn max_pool2_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (n, c, h, w) = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![n, c, ho, wo]);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * ho * wo..(plane + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                let mut best = 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (2 * y + dy) * w + 2 * xx + dx;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                dst[y * wo + xx] = src[best];
                arg.push(plane * h * w + best);
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<T: Scalar>(
    gy: &Tensor<T>,
    arg: &[usize],
    in_shape: &[usize],
) -> Tensor<T> {
    let mut gx = Tensor::zeros(in_shape.to_vec());
    for (&g, &i) in gy.data().iter().zip(arg) {
        gx.data_mut()[i] = gx.data()[i] + g;
    }
    gx
}

/// Separable blur of every plane with `taps` (odd length), horizontal pass
/// then vertical pass, reflection at the borders.
pub fn blur_forward<T: Scalar>(x: &Tensor<T>, taps: &[T]) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let r = (taps.len() / 2) as isize;
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut tmp = vec![T::zero(); h * w];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = T::zero();
                for (k, &t) in taps.iter().enumerate() {
                    acc = acc + t * src[y * w + reflect_index(xx as isize + k as isize - r, w)];
                }
                tmp[y * w + xx] = acc;
            }
        }
        let dst = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = T::zero();
                for (k, &t) in taps.iter().enumerate() {
                    acc = acc + t * tmp[reflect_index(y as isize + k as isize - r, h) * w + xx];
                }
                dst[y * w + xx] = acc;
            }
        }
    }
    out
}

pub fn blur_backward<T: Scalar>(gy: &Tensor<T>, taps: &[T]) -> Tensor<T> {
    let (n, c, h, w) = gy.dims4();
    let r = (taps.len() / 2) as isize;
    let mut gx = Tensor::zeros(gy.shape().to_vec());
    let mut tmp = vec![T::zero(); h * w];
    for plane in 0..n * c {
        let g = &gy.data()[plane * h * w..(plane + 1) * h * w];
        tmp.iter_mut().for_each(|v| *v = T::zero());
        for y in 0..h {
            for xx in 0..w {
                let gv = g[y * w + xx];
                for (k, &t) in taps.iter().enumerate() {
                    let sy = reflect_index(y as isize + k as isize - r, h);
                    tmp[sy * w + xx] = tmp[sy * w + xx] + t * gv;
                }
            }
        }
        let dst = &mut gx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let gv = tmp[y * w + xx];
                for (k, &t) in taps.iter().enumerate() {
                    let sx = reflect_index(xx as isize + k as isize - r, w);
                    dst[y * w + sx] = dst[y * w + sx] + t * gv;
                }
            }
        }
    }
    gx
}

/// `[n, c, h, w] -> [n, c, c]`, each Gram normalised by `c * h * w`.
pub fn gram_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let m = h * w;
    let norm = T::from_f64_lossy(1.0 / (c * m) as f64);
    let mut out = Tensor::zeros(vec![n, c, c]);
    for b in 0..n {
        let f = &x.data()[b * c * m..(b + 1) * c * m];
        T::gemm(
            c,
            m,
            c,
            norm,
            f,
            false,
            f,
            true,
            T::zero(),
            &mut out.data_mut()[b * c * c..(b + 1) * c * c],
        );
    }
    out
}

pub fn gram_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let m = h * w;
    let norm = T::from_f64_lossy(1.0 / (c * m) as f64);
    let mut gx = Tensor::zeros(x.shape().to_vec());
    let mut sym = vec![T::zero(); c * c];
    for b in 0..n {
        let g = &gy.data()[b * c * c..(b + 1) * c * c];
        for i in 0..c {
            for j in 0..c {
                sym[i * c + j] = g[i * c + j] + g[j * c + i];
            }
        }
        let f = &x.data()[b * c * m..(b + 1) * c * m];
        T::gemm(
            c,
            c,
            m,
            norm,
            &sym,
            false,
            f,
            false,
            T::zero(),
            &mut gx.data_mut()[b * c * m..(b + 1) * c * m],
        );
    }
    gx
}

/// Per-pixel linear map across channels. `matrix` is `[cout, cin]`.
pub fn channel_mix_forward<T: Scalar>(x: &Tensor<T>, matrix: &[T], cout: usize) -> Tensor<T> {
    let (n, cin, h, w) = x.dims4();
    assert_eq!(matrix.len(), cout * cin);
    let m = h * w;
    let mut out = Tensor::zeros(vec![n, cout, h, w]);
    for b in 0..n {
        let xb = &x.data()[b * cin * m..(b + 1) * cin * m];
        let ob = &mut out.data_mut()[b * cout * m..(b + 1) * cout * m];
        for co in 0..cout {
            let dst = &mut ob[co * m..(co + 1) * m];
            for ci in 0..cin {
                let k = matrix[co * cin + ci];
                for (d, &s) in dst.iter_mut().zip(&xb[ci * m..(ci + 1) * m]) {
                    *d = *d + k * s;
                }
            }
        }
    }
    out
}

pub fn channel_mix_backward<T: Scalar>(gy: &Tensor<T>, matrix: &[T], cin: usize) -> Tensor<T> {
    let (n, cout, h, w) = gy.dims4();
    let m = h * w;
    let mut gx = Tensor::zeros(vec![n, cin, h, w]);
    for b in 0..n {
        let gb = &gy.data()[b * cout * m..(b + 1) * cout * m];
        let xb = &mut gx.data_mut()[b * cin * m..(b + 1) * cin * m];
        for ci in 0..cin {
            let dst = &mut xb[ci * m..(ci + 1) * m];
            for co in 0..cout {
                let k = matrix[co * cin + ci];
                for (d, &s) in dst.iter_mut().zip(&gb[co * m..(co + 1) * m]) {
                    *d = *d + k * s;
                }
            }
        }
    }
    gx
}

/// Saved state of a per-image min-max normalisation.
#[derive(Clone, Debug)]
pub struct MinMaxCache {
    /// `(argmin, argmax, range)` per batch item; `None` for constant images.
    pub items: Vec<Option<(usize, usize, f64)>>,
}

/// Maps each batch item linearly onto `[0, 1]`; constant items map to 0.5.
pub fn minmax_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, MinMaxCache) {
    let n = x.shape()[0];
    let sz = x.len() / n;
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut items = Vec::with_capacity(n);
    for b in 0..n {
        let src = &x.data()[b * sz..(b + 1) * sz];
        let (mut lo, mut hi) = (0, 0);
        for (i, v) in src.iter().enumerate() {
            if *v < src[lo] {
                lo = i;
            }
            if *v > src[hi] {
                hi = i;
            }
        }
        let range = src[hi].to_f64_lossy() - src[lo].to_f64_lossy();
        let dst = &mut out.data_mut()[b * sz..(b + 1) * sz];
        if range > 0.0 {
            let m = src[lo].to_f64_lossy();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = T::from_f64_lossy((s.to_f64_lossy() - m) / range);
            }
            items.push(Some((lo, hi, range)));
        } else {
            dst.iter_mut().for_each(|d| *d = T::from_f64_lossy(0.5));
            items.push(None);
        }
    }
    (out, MinMaxCache { items })
}

pub fn minmax_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>, cache: &MinMaxCache) -> Tensor<T> {
    let n = y.shape()[0];
    let sz = y.len() / n;
    let mut gx = Tensor::zeros(y.shape().to_vec());
    for b in 0..n {
        let Some((lo, hi, range)) = cache.items[b] else {
            continue;
        };
        let ys = &y.data()[b * sz..(b + 1) * sz];
        let gs = &gy.data()[b * sz..(b + 1) * sz];
        let dst = &mut gx.data_mut()[b * sz..(b + 1) * sz];
        let mut to_min = 0.0;
        let mut to_max = 0.0;
        for ((d, &g), &yv) in dst.iter_mut().zip(gs).zip(ys) {
            let g = g.to_f64_lossy();
            let yv = yv.to_f64_lossy();
            *d = T::from_f64_lossy(g / range);
            to_min += g * (yv - 1.0) / range;
            to_max -= g * yv / range;
        }
        dst[lo] = dst[lo] + T::from_f64_lossy(to_min);
        dst[hi] = dst[hi] + T::from_f64_lossy(to_max);
    }
    gx
}
