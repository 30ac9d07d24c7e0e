//! Value-level numeric primitives. The tape mirrors each of these in
//! [`autodiff`](crate::autodiff) with a recorded backward rule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Default LayerNorm epsilon.
pub const LN_EPS: f64 = 1e-6;

/// Batched matrix product over leading dims. Either both operands carry the
/// same batch dims, or `b` is a plain matrix shared across the batch.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, p, q, r, shared_b) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; batch * p * r];
    for i in 0..batch {
        let bo = if shared_b { 0 } else { i * q * r };
        kernels::gemm_nn(
            &a.data()[i * p * q..(i + 1) * p * q],
            &b.data()[bo..bo + q * r],
            &mut out[i * p * r..(i + 1) * p * r],
            p,
            q,
            r,
        );
    }
    let mut shape = a.shape()[..a.rank() - 2].to_vec();
    shape.extend_from_slice(&[p, r]);
    Tensor::new(&shape, out)
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::dim("matmul", a, b));
    }
    let (p, q) = (a[a.len() - 2], a[a.len() - 1]);
    let (q2, r) = (b[b.len() - 2], b[b.len() - 1]);
    if q != q2 {
        return Err(Error::dim("matmul", a, b));
    }
    let abatch = &a[..a.len() - 2];
    let bbatch = &b[..b.len() - 2];
    let shared_b = bbatch.is_empty();
    if !shared_b && abatch != bbatch {
        return Err(Error::dim("matmul", a, b));
    }
    Ok((abatch.iter().product(), p, q, r, shared_b))
}

/// Softmax along `axis`, max-subtracted.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::config("softmax axis out of range"));
    }
    if !x.is_finite() {
        return Err(Error::numeric("softmax input"));
    }
    let n = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    if inner == 1 {
        return Tensor::new(x.shape(), kernels::softmax_rows(x.data(), n));
    }
    let outer: usize = x.shape()[..axis].iter().product();
    let mut out = vec![0.0; x.numel()];
    let mut row = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            for (k, r) in row.iter_mut().enumerate() {
                *r = x.data()[(o * n + k) * inner + i];
            }
            let s = kernels::softmax_rows(&row, n);
            for (k, v) in s.into_iter().enumerate() {
                out[(o * n + k) * inner + i] = v;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Stride/padding/grouping of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2dSpec {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn depthwise(channels: usize, padding: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            padding,
            groups: channels,
        }
    }
}

pub(crate) fn conv_geom(x: &[usize], w: &[usize], spec: Conv2dSpec) -> Result<ConvGeom> {
    if x.len() != 3 || w.len() != 4 || spec.stride == 0 || spec.groups == 0 {
        return Err(Error::dim("conv2d", x, w));
    }
    let (cin, h, wd) = (x[0], x[1], x[2]);
    let (cout, cin_g, kh, kw) = (w[0], w[1], w[2], w[3]);
    if cin % spec.groups != 0 || cout % spec.groups != 0 || cin / spec.groups != cin_g {
        return Err(Error::dim("conv2d", x, w));
    }
    let (ph, pw) = (h + 2 * spec.padding, wd + 2 * spec.padding);
    if kh > ph || kw > pw {
        return Err(Error::dim("conv2d", x, w));
    }
    Ok(ConvGeom {
        cin,
        h,
        w: wd,
        cout,
        kh,
        kw,
        stride: spec.stride,
        pad: spec.padding,
        groups: spec.groups,
        oh: (ph - kh) / spec.stride + 1,
        ow: (pw - kw) / spec.stride + 1,
    })
}

/// Cross-correlation of `x: [c_in, h, w]` with `weight: [c_out, c_in/groups, kh, kw]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: Conv2dSpec) -> Result<Tensor> {
    let g = conv_geom(x.shape(), weight.shape(), spec)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::dim("conv2d bias", b.shape(), &[g.cout]));
        }
    }
    let out = kernels::conv_forward(&g, x.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::new(&[g.cout, g.oh, g.ow], out)
}

/// Depth-wise convolution: one `kh × kw` filter per channel.
pub fn dwconv(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, padding: usize) -> Result<Tensor> {
    let c = x.shape().first().copied().unwrap_or(0);
    conv2d(x, weight, bias, Conv2dSpec::depthwise(c, padding))
}

/// LayerNorm across channels at each spatial site of `[c, h, w]`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (y, _, _) = layer_norm_parts(x, gamma, beta, eps)?;
    Ok(y)
}

/// Returns `(y, x_hat, 1/σ per site)`.
pub(crate) fn layer_norm_parts(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    if x.rank() != 3 || gamma.shape() != [x.shape()[0]] || beta.shape() != [x.shape()[0]] {
        return Err(Error::dim("layer_norm", x.shape(), gamma.shape()));
    }
    let c = x.shape()[0];
    let hw = x.shape()[1] * x.shape()[2];
    let xs = x.data();
    let mut mean = vec![0.0; hw];
    for ch in 0..c {
        for (m, &v) in mean.iter_mut().zip(&xs[ch * hw..(ch + 1) * hw]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    let mut var = vec![0.0; hw];
    for ch in 0..c {
        for (s, (&v, &m)) in xs[ch * hw..(ch + 1) * hw].iter().zip(&mean).enumerate() {
            var[s] += (v - m) * (v - m);
        }
    }
    let rstd: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v / c as f64 + eps)).collect();
    let mut xhat = vec![0.0; c * hw];
    let mut y = vec![0.0; c * hw];
    for ch in 0..c {
        let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
        for s in 0..hw {
            let i = ch * hw + s;
            xhat[i] = (xs[i] - mean[s]) * rstd[s];
            y[i] = gm * xhat[i] + bt;
        }
    }
    Ok((Tensor::new(x.shape(), y)?, xhat, rstd))
}

/// Exact-erf GELU, `x·Φ(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(kernels::gelu)
}

/// Index map of pixel shuffle: output flat index -> input flat index.
pub(crate) fn pixel_shuffle_map(c_in: usize, h: usize, w: usize, s: usize) -> Vec<usize> {
    let c = c_in / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut idx = Vec::with_capacity(c_in * h * w);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, dy, x, dx) = (oy / s, oy % s, ox / s, ox % s);
                let ic = ch * s * s + dy * s + dx;
                idx.push((ic * h + y) * w + x);
            }
        }
    }
    idx
}

/// `[c·s², h, w] -> [c, s·h, s·w]` with
/// `out(ch, s·y+dy, s·x+dx) = in(ch·s² + dy·s + dx, y, x)`.
pub fn pixel_shuffle(x: &Tensor, s: usize) -> Result<Tensor> {
    if x.rank() != 3 || s == 0 || x.shape()[0] % (s * s) != 0 {
        return Err(Error::dim("pixel_shuffle", x.shape(), &[s * s]));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let idx = pixel_shuffle_map(c, h, w, s);
    let data = idx.iter().map(|&i| x.data()[i]).collect();
    Tensor::new(&[c / (s * s), h * s, w * s], data)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor, s: usize) -> Result<Tensor> {
    if x.rank() != 3 || s == 0 || x.shape()[1] % s != 0 || x.shape()[2] % s != 0 {
        return Err(Error::dim("pixel_unshuffle", x.shape(), &[s]));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1] / s, x.shape()[2] / s);
    let idx = pixel_shuffle_map(c * s * s, h, w, s);
    let mut data = vec![0.0; x.numel()];
    for (o, &i) in idx.iter().enumerate() {
        data[i] = x.data()[o];
    }
    Tensor::new(&[c * s * s, h, w], data)
}
