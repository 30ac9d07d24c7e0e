//! Unnormalized forward 2-D discrete Fourier transform.
//!
//! Radix-2 Cooley-Tukey when a side length is a power of two, direct
//! summation otherwise. Twiddles on the quarter-turn axes are exact so the
//! imaginary part of real-valued DC/Nyquist bins is exactly zero.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `exp(-2πi·j/n)` as `(re, im)`.
pub(crate) fn twiddle(j: usize, n: usize) -> (f64, f64) {
    let j = j % n;
    if (4 * j) % n == 0 {
        return match 4 * j / n {
            0 => (1.0, 0.0),
            1 => (0.0, -1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, 1.0),
        };
    }
    let theta = 2.0 * PI * j as f64 / n as f64;
    (libm::cos(theta), -libm::sin(theta))
}

fn fft_radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (wr, wi) = twiddle(k, len);
                let (a, b) = (start + k, start + k + half);
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

fn dft_direct(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for k in 0..n {
        let (mut sr, mut si) = (0.0, 0.0);
        for t in 0..n {
            let (wr, wi) = twiddle(k * t, n);
            sr += re[t] * wr - im[t] * wi;
            si += re[t] * wi + im[t] * wr;
        }
        out_re[k] = sr;
        out_im[k] = si;
    }
    re.copy_from_slice(&out_re);
    im.copy_from_slice(&out_im);
}

/// In-place 1-D forward transform.
pub(crate) fn fft1(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_radix2(re, im);
    } else {
        dft_direct(re, im);
    }
}

/// In-place 2-D forward transform of each `h × w` plane of `c` planes.
pub(crate) fn fft2_planes(re: &mut [f64], im: &mut [f64], c: usize, h: usize, w: usize) {
    let hw = h * w;
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for ch in 0..c {
        let pr = &mut re[ch * hw..(ch + 1) * hw];
        let pi = &mut im[ch * hw..(ch + 1) * hw];
        for y in 0..h {
            fft1(&mut pr[y * w..(y + 1) * w], &mut pi[y * w..(y + 1) * w]);
        }
        for x in 0..w {
            for y in 0..h {
                col_re[y] = pr[y * w + x];
                col_im[y] = pi[y * w + x];
            }
            fft1(&mut col_re, &mut col_im);
            for y in 0..h {
                pr[y * w + x] = col_re[y];
                pi[y * w + x] = col_im[y];
            }
        }
    }
}

/// Forward 2-D DFT of every channel of a `[c, h, w]` tensor.
pub fn dft2(x: &Tensor) -> Result<(Tensor, Tensor)> {
    if x.rank() != 3 {
        return Err(Error::dim("dft2", x.shape(), &[0, 0, 0]));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut re = x.data().to_vec();
    let mut im = vec![0.0; re.len()];
    fft2_planes(&mut re, &mut im, c, h, w);
    Ok((Tensor::new(x.shape(), re)?, Tensor::new(x.shape(), im)?))
}

/// Gradient of `(Re, Im) = dft2(x)` for real `x`, given upstream gradients
/// on the real and imaginary planes: `Re(DFT(g_re - i·g_im))`.
pub(crate) fn dft2_real_backward(g_re: &[f64], g_im: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut re = g_re.to_vec();
    let mut im: Vec<f64> = g_im.iter().map(|v| -v).collect();
    fft2_planes(&mut re, &mut im, c, h, w);
    re
}
