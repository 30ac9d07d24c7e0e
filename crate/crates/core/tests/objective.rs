use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwf_core::gradcheck::{grad_check_selected, Stencil};
use rwf_core::objective::*;
use rwf_core::{Tape, Tensor};

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

fn eval<F>(x: &Tensor, y: &Tensor, f: F) -> f64
where
    F: for<'t> Fn(rwf_core::Var<'t>, rwf_core::Var<'t>) -> rwf_core::Result<rwf_core::Var<'t>>,
{
    let tape = Tape::new();
    f(tape.constant(x.clone()), tape.constant(y.clone())).unwrap().value().item()
}

fn l1(x: &Tensor, y: &Tensor) -> f64 {
    eval(x, y, l1_loss)
}

fn fft(x: &Tensor, y: &Tensor, kind: SpectrumDistance) -> f64 {
    eval(x, y, |a, b| fft_loss(a, b, kind))
}

fn composite(x: &Tensor, y: &Tensor, alpha: f64) -> f64 {
    eval(x, y, |a, b| composite_loss(a, b, alpha, SpectrumDistance::Components))
}

/// Direct O(h²w²) DFT per channel: `(re, im)` planes.
fn direct_dft(x: &Tensor) -> Vec<(Vec<f64>, Vec<f64>)> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let tau = std::f64::consts::TAU;
    (0..c)
        .map(|ch| {
            let mut re = vec![0.0; h * w];
            let mut im = vec![0.0; h * w];
            for u in 0..h {
                for v in 0..w {
                    for y in 0..h {
                        for xx in 0..w {
                            let a = -tau * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                            let val = x.at(&[ch, y, xx]);
                            re[u * w + v] += val * a.cos();
                            im[u * w + v] += val * a.sin();
                        }
                    }
                }
            }
            (re, im)
        })
        .collect()
}

fn dft_oracle(x: &Tensor, y: &Tensor, kind: SpectrumDistance) -> f64 {
    let (fx, fy) = (direct_dft(x), direct_dft(y));
    let mut s = 0.0;
    for ((xr, xi), (yr, yi)) in fx.iter().zip(&fy) {
        for i in 0..xr.len() {
            let (dr, di) = (xr[i] - yr[i], xi[i] - yi[i]);
            s += match kind {
                SpectrumDistance::Components => dr.abs() + di.abs(),
                SpectrumDistance::Modulus => dr.hypot(di),
            };
        }
    }
    let bins = x.numel() as f64;
    match kind {
        SpectrumDistance::Components => s / (2.0 * bins),
        SpectrumDistance::Modulus => s / bins,
    }
}

/// Bilinear resampling as a sum of tent weights over clamped source
/// coordinates.
fn tent_resize(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let src = |o: usize, n_out: usize, n_in: usize| {
        let s = (o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
        s.clamp(0.0, (n_in - 1) as f64)
    };
    let tent = |s: f64, i: usize| (1.0 - (s - i as f64).abs()).max(0.0);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let (sy, sx) = (src(oy, oh, h), src(ox, ow, w));
                let mut v = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        v += tent(sy, y) * tent(sx, xx) * x.at(&[ch, y, xx]);
                    }
                }
                out.set(&[ch, oy, ox], v);
            }
        }
    }
    out
}

#[test]
fn l1_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = rand_t(&mut rng, &[3, 5, 7]);
    assert_eq!(l1(&y, &y), 0.0);
    assert!((l1(&y.map(|v| v + 1.0), &y) - 1.0).abs() < 1e-12);
    let x = rand_t(&mut rng, &[3, 5, 7]);
    let oracle: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.numel() as f64;
    assert!((l1(&x, &y) - oracle).abs() <= 1e-12);
    assert_eq!(l1(&x, &y), l1(&y, &x));
}

#[test]
fn shape_mismatch_is_an_error() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[3, 4, 4]));
    let b = tape.constant(Tensor::zeros(&[3, 4, 2]));
    assert!(l1_loss(a, b).is_err());
    assert!(fft_loss(a, b, SpectrumDistance::Components).is_err());
    assert!(composite_loss(a, b, 0.1, SpectrumDistance::Components).is_err());
}

#[test]
fn fft_delta_example() {
    let mut x = Tensor::zeros(&[1, 2, 2]);
    x.set(&[0, 0, 0], 1.0);
    let y = Tensor::zeros(&[1, 2, 2]);
    assert!((fft(&x, &y, SpectrumDistance::Components) - 0.5).abs() < 1e-15);
    assert_eq!(fft(&y, &y, SpectrumDistance::Components), 0.0);
}

#[test]
fn fft_matches_direct_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (h, w) in [(2, 2), (4, 6), (5, 3), (8, 8), (7, 9)] {
        let x = rand_t(&mut rng, &[3, h, w]);
        let y = rand_t(&mut rng, &[3, h, w]);
        for kind in [SpectrumDistance::Components, SpectrumDistance::Modulus] {
            let got = fft(&x, &y, kind);
            assert!((got - dft_oracle(&x, &y, kind)).abs() <= 1e-9, "{h}x{w} {kind:?}");
            assert!((got - fft(&y, &x, kind)).abs() <= 1e-14);
        }
    }
}

#[test]
fn composite_is_the_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_t(&mut rng, &[3, 6, 6]);
    let y = rand_t(&mut rng, &[3, 6, 6]);
    assert_eq!(composite(&x, &x, 0.1), 0.0);
    assert_eq!(composite(&x, &y, 0.0), l1(&x, &y));
    let want = l1(&x, &y) + 0.1 * fft(&x, &y, SpectrumDistance::Components);
    assert!((composite(&x, &y, 0.1) - want).abs() <= 1e-12);
}

#[test]
fn degrade_constant_and_ramp() {
    let c = Tensor::full(&[3, 8, 6], 0.37);
    assert!(degrade_gt(&c).unwrap().max_abs_diff(&c) < 1e-15);

    let ramp = Tensor::from_fn(&[3, 12, 10], |i| {
        let (ch, y, x) = (i / 120, (i / 10) % 12, i % 10);
        0.1 * ch as f64 + 0.03 * y as f64 + 0.05 * x as f64
    });
    let d = degrade_gt(&ramp).unwrap();
    for ch in 0..3 {
        for y in 1..11 {
            for x in 1..9 {
                assert!((d.at(&[ch, y, x]) - ramp.at(&[ch, y, x])).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn degrade_checkerboard() {
    let board = Tensor::from_fn(&[1, 4, 4], |i| ((i / 4 + i % 4) % 2) as f64);
    let half = downsample_half(&board).unwrap();
    assert!(half.max_abs_diff(&Tensor::full(&[1, 2, 2], 0.5)) < 1e-15);
    let d = degrade_gt(&board).unwrap();
    assert!(d.max_abs_diff(&Tensor::full(&[1, 4, 4], 0.5)) < 1e-15);
}

#[test]
fn resize_matches_tent_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (h, w, oh, ow) in [(4, 4, 2, 2), (6, 8, 12, 16), (5, 7, 3, 9), (8, 8, 4, 4), (3, 2, 7, 5)] {
        let x = rand_t(&mut rng, &[2, h, w]);
        let got = bilinear_resize(&x, oh, ow).unwrap();
        assert!(got.max_abs_diff(&tent_resize(&x, oh, ow)) <= 1e-12, "{h}x{w} -> {oh}x{ow}");
    }
}

#[test]
fn degrade_rejects_odd_sizes() {
    assert!(degrade_gt(&Tensor::zeros(&[3, 5, 4])).is_err());
    assert!(degrade_gt(&Tensor::zeros(&[3, 4, 7])).is_err());
    assert!(msr_targets(&Tensor::zeros(&[3, 12, 12])).is_err());
}

fn msr_value(residuals: &[Tensor; 3], g: &Tensor) -> (f64, [f64; 3]) {
    let tape = Tape::new();
    let r = [0, 1, 2].map(|i| tape.constant(residuals[i].clone()));
    let (sum, terms) = msr_loss(&tape, &r, g, 0.1, SpectrumDistance::Components).unwrap();
    (sum.value().item(), terms.map(|t| t.value().item()))
}

#[test]
fn msr_examples() {
    let g = Tensor::full(&[3, 16, 16], 0.6);
    let zeros = [8, 4, 2].map(|s| Tensor::zeros(&[3, s, s]));
    assert!(msr_value(&zeros, &g).0.abs() < 1e-14);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = rand_t(&mut rng, &[3, 16, 16]);
    let targets = msr_targets(&g).unwrap();
    let perfect = [0, 1, 2].map(|i| targets[i].sub(&degrade_gt(&targets[i]).unwrap()).unwrap());
    assert!(msr_value(&perfect, &g).0.abs() < 1e-12);

    let (sum, terms) = msr_value(&zeros, &g);
    let mut want = 0.0;
    for (i, gi) in targets.iter().enumerate() {
        let t = composite(&degrade_gt(gi).unwrap(), gi, 0.1);
        assert!((terms[i] - t).abs() <= 1e-12);
        want += t;
    }
    assert!((sum - want).abs() <= 1e-12);

    let wrong = [8, 4, 4].map(|s| Tensor::zeros(&[3, s, s]));
    let tape = Tape::new();
    let r = [0, 1, 2].map(|i| tape.constant(wrong[i].clone()));
    assert!(msr_loss(&tape, &r, &g, 0.1, SpectrumDistance::Components).is_err());
}

fn report_for(restored: &Tensor, g: &Tensor, residuals: &[Tensor; 3], w: &LossWeights) -> LossReport {
    let tape = Tape::new();
    let r = [0, 1, 2].map(|i| tape.constant(residuals[i].clone()));
    total_loss(&tape, tape.constant(restored.clone()), g, &r, w).unwrap().1
}

#[test]
fn total_loss_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = LossWeights::default();
    for trial in 0..5 {
        let g = rand_t(&mut rng, &[3, 16, 16]);
        let x = rand_t(&mut rng, &[3, 16, 16]);
        let res = [8, 4, 2].map(|s| rand_t(&mut rng, &[3, s, s]).scale(0.1));
        let r = report_for(&x, &g, &res, &w);
        let recon = r.l1 + w.alpha * r.fft + w.lambda * r.msr.iter().sum::<f64>();
        assert!((r.total - recon).abs() <= 1e-10, "trial {trial}");
        assert!((r.l1 - l1(&x, &g)).abs() <= 1e-12);
        assert!((r.fft - fft(&x, &g, SpectrumDistance::Components)).abs() <= 1e-12);
        let (_, terms) = msr_value(&res, &g);
        for i in 0..3 {
            assert!((r.msr[i] - terms[i]).abs() <= 1e-12);
        }

        let plain = LossWeights { lambda: 0.0, ..w };
        let r0 = report_for(&x, &g, &res, &plain);
        assert!((r0.total - composite(&x, &g, 0.1)).abs() <= 1e-12);
        let pure = LossWeights { alpha: 0.0, lambda: 0.0, ..w };
        assert_eq!(report_for(&x, &g, &res, &pure).total, l1(&x, &g));
    }
}

#[test]
fn total_loss_zero_at_the_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = rand_t(&mut rng, &[3, 16, 16]);
    let t = msr_targets(&g).unwrap();
    let res = [0, 1, 2].map(|i| t[i].sub(&degrade_gt(&t[i]).unwrap()).unwrap());
    assert!(report_for(&g, &g, &res, &LossWeights::default()).total.abs() < 1e-12);
}

#[test]
fn negative_weights_rejected() {
    let g = Tensor::zeros(&[3, 16, 16]);
    let res = [8, 4, 2].map(|s| Tensor::zeros(&[3, s, s]));
    let tape = Tape::new();
    let r = [0, 1, 2].map(|i| tape.constant(res[i].clone()));
    let w = LossWeights { alpha: -0.1, ..Default::default() };
    assert!(total_loss(&tape, tape.constant(g.clone()), &g, &r, &w).is_err());
}

#[test]
fn total_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = rand_t(&mut rng, &[3, 16, 16]);
    let inputs = vec![
        rand_t(&mut rng, &[3, 16, 16]),
        rand_t(&mut rng, &[3, 8, 8]).scale(0.2),
        rand_t(&mut rng, &[3, 4, 4]).scale(0.2),
        rand_t(&mut rng, &[3, 2, 2]).scale(0.2),
    ];
    for spectrum in [SpectrumDistance::Components, SpectrumDistance::Modulus] {
        let w = LossWeights { spectrum, ..Default::default() };
        let picks: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
        let report = grad_check_selected(
            |tape, v| Ok(total_loss(tape, v[0], &g, &[v[1], v[2], v[3]], &w)?.0),
            &inputs,
            1e-4,
            Stencil::FivePoint,
            &picks,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{spectrum:?}: {report:?}");
    }
}

#[test]
fn psnr_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_t(&mut rng, &[3, 6, 6]);
    assert_eq!(psnr(&x, &x).unwrap(), 100.0);
    let y = x.map(|v| v + 0.1);
    assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
    let z = rand_t(&mut rng, &[3, 6, 6]);
    let mse: f64 = x.data().iter().zip(z.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.numel() as f64;
    assert!((psnr(&x, &z).unwrap() - 10.0 * (1.0 / mse).log10()).abs() <= 1e-9);
    assert!(psnr(&x, &Tensor::zeros(&[3, 6, 5])).is_err());
}
