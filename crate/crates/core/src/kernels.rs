//! Slice-level compute kernels shared by the value API and the tape's
//! backward rules. All loops run in a fixed order so results are
//! bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

/// `c[p,r] += a[p,q] * b[q,r]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let crow = &mut c[i * r..(i + 1) * r];
        for (l, &av) in a[i * q..(i + 1) * q].iter().enumerate() {
            let brow = &b[l * r..(l + 1) * r];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[p,r] += a[p,q] * b[r,q]`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        for j in 0..r {
            let brow = &b[j * q..(j + 1) * q];
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * r + j] += acc;
        }
    }
}

/// `c[p,r] += a[q,p] * b[q,r]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for l in 0..q {
        let brow = &b[l * r..(l + 1) * r];
        for i in 0..p {
            let av = a[l * p + i];
            let crow = &mut c[i * r..(i + 1) * r];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Geometry of a 2-D (grouped) cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0 && self.groups == 1
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad` is in range.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kx as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let top = self.w as isize - 1 - off;
        if top < 0 {
            return (0, 0);
        }
        let hi = (top / s + 1).min(self.ow as isize);
        (lo as usize, hi.max(lo) as usize)
    }

    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], wt: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let ohw = g.oh * g.ow;
    let mut out = vec![0.0; g.cout * ohw];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(ohw).enumerate() {
            chunk.fill(b[co]);
        }
    }
    if g.is_pointwise() {
        gemm_nn(wt, x, &mut out, g.cout, g.cin, ohw);
        return out;
    }
    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    let hw = g.h * g.w;
    for co in 0..g.cout {
        let grp = co / cout_g;
        let oplane = &mut out[co * ohw..(co + 1) * ohw];
        for cig in 0..cin_g {
            let ci = grp * cin_g + cig;
            let xplane = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wt[((co * cin_g + cig) * g.kh + ky) * g.kw + kx];
                    let (lo, hi) = g.col_range(kx);
                    for oy in 0..g.oh {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let xrow = &xplane[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut oplane[oy * g.ow..(oy + 1) * g.ow];
                        for ox in lo..hi {
                            let ix = ox * g.stride + kx - g.pad;
                            orow[ox] += wv * xrow[ix];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    wt: &[f64],
    grad: &[f64],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let ohw = g.oh * g.ow;
    let gb: Vec<f64> = grad.chunks(ohw).map(|c| c.iter().sum()).collect();
    let mut gx = need_x.then(|| vec![0.0; g.cin * g.h * g.w]);
    let mut gw = need_w.then(|| vec![0.0; wt.len()]);
    if g.is_pointwise() {
        if let Some(gx) = gx.as_mut() {
            gemm_tn(wt, grad, gx, g.cin, g.cout, ohw);
        }
        if let Some(gw) = gw.as_mut() {
            gemm_nt(grad, x, gw, g.cout, ohw, g.cin);
        }
        return (gx, gw, gb);
    }
    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    let hw = g.h * g.w;
    for co in 0..g.cout {
        let grp = co / cout_g;
        let gplane = &grad[co * ohw..(co + 1) * ohw];
        for cig in 0..cin_g {
            let ci = grp * cin_g + cig;
            let xplane = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let widx = ((co * cin_g + cig) * g.kh + ky) * g.kw + kx;
                    let wv = wt[widx];
                    let (lo, hi) = g.col_range(kx);
                    let mut acc = 0.0;
                    for oy in 0..g.oh {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let grow = &gplane[oy * g.ow..(oy + 1) * g.ow];
                        if let Some(gx) = gx.as_mut() {
                            let gxrow = &mut gx[ci * hw + iy * g.w..ci * hw + (iy + 1) * g.w];
                            for ox in lo..hi {
                                gxrow[ox * g.stride + kx - g.pad] += wv * grow[ox];
                            }
                        }
                        if need_w {
                            let xrow = &xplane[iy * g.w..(iy + 1) * g.w];
                            for ox in lo..hi {
                                acc += grow[ox] * xrow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Softmax over contiguous rows of length `n`, max-subtracted.
pub(crate) fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(n).zip(out.chunks_mut(n)) {
        let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = libm::exp(s - m);
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

pub(crate) const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / SQRT_2));
    cdf + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}
