//! Training objective: L1, frequency loss, multi-scale structure
//! regularization and the weighted total.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of sub-scale regularization terms.
pub const MSR_TERMS: usize = 3;

/// How spectra are compared in [`fft_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectrumDistance {
    /// Mean of `|Δre| + |Δim|` over `2·c·h·w` components.
    #[default]
    Components,
    /// Mean complex modulus `|ΔX|` over `c·h·w` bins.
    Modulus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Frequency loss weight `α`.
    pub alpha: f64,
    /// Regularization weight `λ`.
    pub lambda: f64,
    pub spectrum: SpectrumDistance,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.1,
            lambda: 0.1,
            spectrum: SpectrumDistance::Components,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.lambda >= 0.0) || !self.alpha.is_finite() || !self.lambda.is_finite() {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l1: f64,
    pub fft: f64,
    /// Terms at `h/2`, `h/4`, `h/8`.
    pub msr: [f64; MSR_TERMS],
    pub total: f64,
}

/// Mean absolute difference.
pub fn l1_loss<'t>(x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
    x.l1_mean(y)
}

/// Distance between the per-channel 2-D DFTs of `x` and `y`.
pub fn fft_loss<'t>(x: Var<'t>, y: Var<'t>, kind: SpectrumDistance) -> Result<Var<'t>> {
    if x.shape() != y.shape() {
        return Err(Error::dim("fft_loss", &x.shape(), &y.shape()));
    }
    let (fx, fy) = (x.dft2()?, y.dft2()?);
    match kind {
        SpectrumDistance::Components => fx.l1_mean(fy),
        SpectrumDistance::Modulus => fx.complex_modulus_l1(fy),
    }
}

/// `L1(x, y) + α·FFT(x, y)`.
pub fn composite_loss<'t>(x: Var<'t>, y: Var<'t>, alpha: f64, kind: SpectrumDistance) -> Result<Var<'t>> {
    Ok(composite_parts(x, y, alpha, kind)?.0)
}

fn composite_parts<'t>(x: Var<'t>, y: Var<'t>, alpha: f64, kind: SpectrumDistance) -> Result<(Var<'t>, f64, f64)> {
    let l1 = l1_loss(x, y)?;
    let f = fft_loss(x, y, kind)?;
    let (l1v, fv) = (l1.value().item(), f.value().item());
    Ok((l1.add(f.scale(alpha))?, l1v, fv))
}

fn lerp_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling of `[c, h, w]` to `[c, oh, ow]` with half-pixel
/// centers and edge clamping.
pub fn bilinear_resize(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    if x.rank() != 3 || oh == 0 || ow == 0 || x.numel() == 0 {
        return Err(Error::dim("bilinear_resize", x.shape(), &[0, oh, ow]));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ty, tx) = (lerp_taps(oh, h), lerp_taps(ow, w));
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = x.plane(ch);
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

fn check_even(g: &Tensor) -> Result<(usize, usize)> {
    if g.rank() != 3 || g.shape()[1] % 2 != 0 || g.shape()[2] % 2 != 0 || g.shape()[1] == 0 || g.shape()[2] == 0 {
        return Err(Error::dim("degrade_gt", g.shape(), &[0, 2, 2]));
    }
    Ok((g.shape()[1], g.shape()[2]))
}

/// Bilinear `×½`.
pub fn downsample_half(g: &Tensor) -> Result<Tensor> {
    let (h, w) = check_even(g)?;
    bilinear_resize(g, h / 2, w / 2)
}

/// Texture-damaged copy `G↓↑`: bilinear `×½` then `×2`.
pub fn degrade_gt(g: &Tensor) -> Result<Tensor> {
    let (h, w) = check_even(g)?;
    bilinear_resize(&downsample_half(g)?, h, w)
}

/// `G_2, G_3, G_4` by repeated halving of `g`.
pub fn msr_targets(g: &Tensor) -> Result<[Tensor; MSR_TERMS]> {
    let g2 = downsample_half(g)?;
    let g3 = downsample_half(&g2)?;
    let g4 = downsample_half(&g3)?;
    Ok([g2, g3, g4])
}

/// `Σ_i composite(R_i + G_i↓↑, G_i)`; returns the sum and each term.
pub fn msr_loss<'t>(
    tape: &'t Tape,
    residuals: &[Var<'t>; MSR_TERMS],
    g: &Tensor,
    alpha: f64,
    kind: SpectrumDistance,
) -> Result<(Var<'t>, [Var<'t>; MSR_TERMS])> {
    let targets = msr_targets(g)?;
    let mut terms = Vec::with_capacity(MSR_TERMS);
    for (r, gi) in residuals.iter().zip(&targets) {
        if r.shape() != gi.shape() {
            return Err(Error::dim("msr_loss", &r.shape(), gi.shape()));
        }
        let damaged = tape.constant(degrade_gt(gi)?);
        terms.push(composite_loss(r.add(damaged)?, tape.constant(gi.clone()), alpha, kind)?);
    }
    let sum = terms[0].add(terms[1])?.add(terms[2])?;
    Ok((sum, [terms[0], terms[1], terms[2]]))
}

/// `composite(Î, G) + λ·MSR`. With `λ = 0` the regularizer is skipped.
pub fn total_loss<'t>(
    tape: &'t Tape,
    restored: Var<'t>,
    g: &Tensor,
    residuals: &[Var<'t>; MSR_TERMS],
    w: &LossWeights,
) -> Result<(Var<'t>, LossReport)> {
    w.validate()?;
    let target = tape.constant(g.clone());
    let (base, l1, fft) = composite_parts(restored, target, w.alpha, w.spectrum)?;
    let mut report = LossReport { l1, fft, ..Default::default() };
    let total = if w.lambda > 0.0 {
        let (sum, terms) = msr_loss(tape, residuals, g, w.alpha, w.spectrum)?;
        for (slot, t) in report.msr.iter_mut().zip(terms) {
            *slot = t.value().item();
        }
        base.add(sum.scale(w.lambda))?
    } else {
        base
    };
    report.total = total.value().item();
    if !report.total.is_finite() {
        return Err(Error::numeric("total loss"));
    }
    Ok((total, report))
}

/// `10·log10(1/MSE)`, capped at 100 dB for identical inputs.
pub fn psnr(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() || x.numel() == 0 {
        return Err(Error::dim("psnr", x.shape(), y.shape()));
    }
    let mse = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.numel() as f64;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * libm::log10(1.0 / mse)).min(100.0))
}
