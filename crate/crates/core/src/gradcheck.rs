//! Central-difference gradient verification against the tape.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default perturbation size.
pub const DEFAULT_STEP: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    libm::fabs(a - b) / libm::fabs(a).max(libm::fabs(b)).max(1e-8)
}

/// Which coordinates of each input get perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entries {
    All,
    /// At most `n` evenly spaced coordinates per input (always including
    /// the first and last).
    Spread(usize),
}

impl Entries {
    pub fn pick(self, len: usize) -> Vec<usize> {
        match self {
            Entries::Spread(n) if n < len && n >= 2 => {
                let mut v: Vec<usize> = (0..n).map(|i| i * (len - 1) / (n - 1)).collect();
                v.dedup();
                v
            }
            Entries::Spread(1) if len > 1 => alloc::vec![len / 2],
            _ => (0..len).collect(),
        }
    }
}

/// Finite-difference formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    Central,
    /// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`
    FivePoint,
}

/// Worst discrepancy found by [`grad_check_inputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate, tape gradient, numeric gradient)`.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

/// Compares tape gradients of a scalar function of one tensor against
/// central differences; returns the max relative error.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let report = grad_check_inputs(|_, vars| f(vars[0]), core::slice::from_ref(x), h, Entries::All)?;
    Ok(report.max_rel_error)
}

fn eval<F>(f: &F, xs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    if v.numel() != 1 {
        return Err(Error::dim("grad_check", v.shape(), &[1]));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::numeric("grad_check objective"));
    }
    Ok(v)
}

/// Multi-input variant; `f` receives all inputs as trainable leaves.
pub fn grad_check_inputs<F>(f: F, xs: &[Tensor], h: f64, entries: Entries) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let picks: Vec<Vec<usize>> = xs.iter().map(|x| entries.pick(x.numel())).collect();
    grad_check_selected(f, xs, h, Stencil::Central, &picks)
}

/// Checks only the listed flat coordinates of each input.
pub fn grad_check_selected<F>(f: F, xs: &[Tensor], h: f64, stencil: Stencil, picks: &[Vec<usize>]) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    grad_check_steps(f, xs, &[h], stencil, picks)
}

/// [`grad_check_selected`] over several step sizes, keeping the best match
/// per coordinate. A wrong gradient disagrees at every step; a kink of a
/// piecewise-smooth loss only at the steps that straddle it.
pub fn grad_check_steps<F>(f: F, xs: &[Tensor], steps: &[f64], stencil: Stencil, picks: &[Vec<usize>]) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if picks.len() != xs.len() {
        return Err(Error::config("one coordinate list per input"));
    }
    if steps.is_empty() {
        return Err(Error::config("no finite-difference step"));
    }
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&tape, &vars)?;
        if !out.value().is_finite() {
            return Err(Error::numeric("grad_check objective"));
        }
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    };
    let mut work: Vec<Tensor> = xs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (k, g) in analytic.iter().enumerate() {
        for &i in &picks[k] {
            let orig = xs[k].data()[i];
            let mut at = |delta: f64| -> Result<f64> {
                work[k].data_mut()[i] = orig + delta;
                let v = eval(&f, &work);
                work[k].data_mut()[i] = orig;
                v
            };
            let mut best: Option<(f64, f64)> = None;
            for &h in steps {
                let numeric = match stencil {
                    Stencil::Central => (at(h)? - at(-h)?) / (2.0 * h),
                    Stencil::FivePoint => (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h),
                };
                let err = relative_error(g.data()[i], numeric);
                if best.is_none_or(|b| err < b.0) {
                    best = Some((err, numeric));
                }
            }
            let (err, numeric) = best.expect("at least one step");
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((k, i, g.data()[i], numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = grad_check(|x| Ok(x.mul(x)?.sum_all()), &Tensor::scalar(3.0), DEFAULT_STEP).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        // A rule that reports twice the true derivative.
        let err = grad_check(
            |x| {
                let v = x.value().map(|a| a * a);
                Ok(x.tape()
                    .record(v, &[x], |c| alloc::vec![Some(c.grad.zip_map(c.inputs[0], "bad", |g, a| 4.0 * g * a).unwrap())])
                    .sum_all())
            },
            &Tensor::scalar(1.5),
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn five_point_on_cubic_is_exact_up_to_rounding() {
        let x = Tensor::new(&[2], alloc::vec![0.7, -1.3]).unwrap();
        let r = grad_check_selected(
            |_, v| Ok(v[0].mul(v[0])?.mul(v[0])?.sum_all()),
            core::slice::from_ref(&x),
            1e-3,
            Stencil::FivePoint,
            &[alloc::vec![0, 1]],
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn several_steps_clear_a_kink() {
        // |x - 0.0005| is smooth at 0 only for steps below 5e-4.
        let x = Tensor::scalar(0.0);
        fn kink<'t>(t: &'t Tape, v: &[Var<'t>]) -> Result<Var<'t>> {
            v[0].l1_mean(t.constant(Tensor::scalar(5e-4)))
        }
        let one = grad_check_steps(kink, core::slice::from_ref(&x), &[1e-3], Stencil::Central, &[alloc::vec![0]]).unwrap();
        assert!(one.max_rel_error > 0.1, "{one:?}");
        let many =
            grad_check_steps(kink, core::slice::from_ref(&x), &[1e-3, 1e-4], Stencil::Central, &[alloc::vec![0]]).unwrap();
        assert!(many.max_rel_error < 1e-8, "{many:?}");
        assert!(grad_check_steps(kink, core::slice::from_ref(&x), &[], Stencil::Central, &[alloc::vec![0]]).is_err());
    }

    #[test]
    fn spread_picks_endpoints() {
        assert_eq!(Entries::Spread(3).pick(10), alloc::vec![0, 4, 9]);
        assert_eq!(Entries::Spread(5).pick(3), alloc::vec![0, 1, 2]);
    }

    #[test]
    fn nonfinite_objective_is_error() {
        let r = grad_check(|x| Ok(x.scale(f64::INFINITY).sum_all()), &Tensor::scalar(1.0), DEFAULT_STEP);
        assert!(matches!(r, Err(Error::Numeric { .. })));
    }
}
