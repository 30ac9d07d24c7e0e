use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwf_core::network::{ModelConfig, ModelState, ParamStore};
use rwf_core::objective::LossWeights;
use rwf_core::train::*;
use rwf_core::{Error, Tensor};

fn store(pairs: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (k, t) in pairs {
        s.insert(*k, t.clone());
    }
    s
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Straight-line AdamW on flat vectors.
struct Reference {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Reference {
    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, wd: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        let bc1 = 1.0 - b1.powf(self.t as f64);
        let bc2 = (1.0 - b2.powf(self.t as f64)).sqrt();
        for i in 0..p.len() {
            p[i] *= 1.0 - lr * wd;
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr / bc1 * (self.m[i] / (self.v[i].sqrt() / bc2 + eps));
        }
    }
}

#[test]
fn adamw_first_step() {
    let mut p = store(&[("w", Tensor::scalar(0.5))]);
    let g = store(&[("w", Tensor::scalar(1.0))]);
    let mut opt = OptimState::new(&p, 0.0);
    adamw_step(&mut p, &g, &mut opt, 1e-3).unwrap();
    let delta = p.get("w").unwrap().item() - 0.5;
    assert!((delta + 1e-3).abs() < 1e-10, "{delta}");
    assert!((delta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    assert_eq!(opt.step, 1);
}

#[test]
fn adamw_zero_gradient_is_a_no_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p0 = store(&[("a", rand_t(&mut rng, &[3, 2])), ("b", rand_t(&mut rng, &[4]))]);
    let mut p = p0.clone();
    let g = p0.zeros_like();
    let mut opt = OptimState::new(&p, 0.0);
    for _ in 0..5 {
        adamw_step(&mut p, &g, &mut opt, 1e-3).unwrap();
    }
    assert_eq!(p, p0);
}

#[test]
fn adamw_matches_reference_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (wd, steps) in [(1e-4, 10), (0.0, 100)] {
        let init = rand_t(&mut rng, &[5, 3]);
        let mut p = store(&[("x", init.clone())]);
        let mut opt = OptimState::new(&p, wd);
        let mut flat = init.into_data();
        let mut reference = Reference {
            m: vec![0.0; flat.len()],
            v: vec![0.0; flat.len()],
            t: 0,
        };
        for s in 0..steps {
            let g = rand_t(&mut rng, &[5, 3]);
            let lr = cosine_lr(s, &Schedule::new(steps));
            reference.step(&mut flat, g.data(), lr, wd);
            adamw_step(&mut p, &store(&[("x", g)]), &mut opt, lr).unwrap();
            assert_eq!(p.get("x").unwrap().data(), flat.as_slice(), "step {s}");
        }
        assert_eq!(opt.m.get("x").unwrap().data(), reference.m.as_slice());
        assert_eq!(opt.v.get("x").unwrap().data(), reference.v.as_slice());
    }
}

#[test]
fn adamw_rejects_non_finite_gradients() {
    let mut p = store(&[("enc0.b0.fuse.weight", Tensor::zeros(&[2])), ("z", Tensor::zeros(&[1]))]);
    let g = store(&[("enc0.b0.fuse.weight", Tensor::new(&[2], vec![0.0, f64::NAN]).unwrap()), ("z", Tensor::zeros(&[1]))]);
    let mut opt = OptimState::new(&p, 0.0);
    let err = adamw_step(&mut p, &g, &mut opt, 1e-3).unwrap_err();
    assert!(matches!(err, Error::Numeric { .. }));
    assert!(format!("{err}").contains("enc0.b0.fuse.weight"));
    assert_eq!(opt.step, 0);
    let z = p.zeros_like();
    assert!(adamw_step(&mut p, &z, &mut opt, -1.0).is_err());
}

#[test]
fn cosine_schedule() {
    let s = Schedule::new(1000);
    assert_eq!(cosine_lr(0, &s), 1e-3);
    assert_eq!(cosine_lr(1000, &s), 1e-7);
    assert_eq!(cosine_lr(5000, &s), 1e-7);
    assert!((cosine_lr(500, &s) - (1e-3 + 1e-7) / 2.0).abs() < 1e-15);
    assert!((cosine_lr(500, &s) - 5.0005e-4).abs() < 1e-15);
    let mut prev = f64::INFINITY;
    for t in 0..=1000 {
        let lr = cosine_lr(t, &s);
        assert!(lr <= prev && lr >= 1e-7);
        prev = lr;
    }
    for total in [1, 2, 7, 300_000] {
        let s = Schedule::new(total);
        assert_eq!(cosine_lr(0, &s), 1e-3);
        assert_eq!(cosine_lr(total, &s), 1e-7);
    }
}

#[test]
fn global_norm_clipping() {
    let mut g = store(&[("a", Tensor::new(&[2], vec![3.0, 0.0]).unwrap()), ("b", Tensor::scalar(4.0))]);
    assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
    assert_eq!(g.get("b").unwrap().item(), 4.0);
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g.get("a").unwrap().data()[0] - 0.6).abs() < 1e-15);
    assert!((g.get("b").unwrap().item() - 0.8).abs() < 1e-15);
    let mut z = g.zeros_like();
    assert_eq!(clip_global_norm(&mut z, 1.0), 0.0);
}

#[test]
fn patch_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(&[3, 10, 12], |i| i as f64);
    let y = x.map(|v| -v);

    let tall = sample_patch(&x, &y, 10, &mut rng).unwrap();
    assert_eq!(tall.offset.0, 0);
    let sq = Tensor::from_fn(&[3, 8, 8], |i| i as f64);
    let s = sample_patch(&sq, &sq, 8, &mut rng).unwrap();
    assert_eq!(s.offset, (0, 0));

    let plain = crop_and_flip(&x, &y, 4, (2, 5), false, false).unwrap();
    assert_eq!(plain.input, x.crop_at(2, 5, 4, 4));
    assert_eq!(plain.target, y.crop_at(2, 5, 4, 4));

    for _ in 0..20 {
        let s = sample_patch(&x, &y, 5, &mut rng).unwrap();
        assert_eq!(s.target, s.input.map(|v| -v));
        let mut want = x.crop_at(s.offset.0, s.offset.1, 5, 5);
        if s.hflip {
            want = want.flip_w();
        }
        if s.vflip {
            want = want.flip_h();
        }
        assert_eq!(s.input, want);
    }
    assert!(sample_patch(&x, &y, 11, &mut rng).is_err());
    assert!(sample_patch(&x, &y, 13, &mut rng).is_err());
}

#[test]
fn patch_sequence_replays() {
    let x = Tensor::from_fn(&[3, 16, 20], |i| (i % 17) as f64);
    let draw = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..30).map(|_| sample_patch(&x, &x, 6, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(draw(), draw());
}

#[test]
fn joint_flips_leave_pixel_loss_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_t(&mut rng, &[3, 6, 6]);
    let y = rand_t(&mut rng, &[3, 6, 6]);
    let l1 = |a: &Tensor, b: &Tensor| a.sub(b).unwrap().map(f64::abs).mean();
    for (hf, vf) in [(true, false), (false, true), (true, true)] {
        let s = crop_and_flip(&x, &y, 6, (0, 0), hf, vf).unwrap();
        assert!((l1(&s.input, &s.target) - l1(&x, &y)).abs() < 1e-15);
    }
}

fn tiny_data(n: usize, size: usize, seed: u64) -> Vec<(Tensor, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let y = Tensor::from_fn(&[3, size, size], |_| rng.random_range(0.0..1.0));
            let x = y.map(|v| v * 0.8 + 0.1);
            (x, y)
        })
        .collect()
}

fn quick_config(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 2,
        patch: 32,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_leave_the_state_alone() {
    let mut state = ModelState::init(ModelConfig::desk(), 1).unwrap();
    let before = state.clone();
    let mut opt = OptimState::new(&state.params, 1e-4);
    let log = train_loop(&mut state, &mut opt, &[], &quick_config(0), |_, _, _| Ok(())).unwrap();
    assert!(log.is_empty());
    assert_eq!(state, before);
    assert_eq!(opt.step, 0);
}

#[test]
fn pure_l1_weights_log_pure_l1() {
    let data = tiny_data(2, 32, 6);
    let mut state = ModelState::init(ModelConfig::desk(), 2).unwrap();
    let mut opt = OptimState::new(&state.params, 1e-4);
    let cfg = TrainConfig {
        weights: LossWeights {
            alpha: 0.0,
            lambda: 0.0,
            ..Default::default()
        },
        ..quick_config(2)
    };
    let log = train_loop(&mut state, &mut opt, &data, &cfg, |_, _, _| Ok(())).unwrap();
    for e in &log {
        assert_eq!(e.loss.total, e.loss.l1);
        assert_eq!(e.loss.msr, [0.0; 3]);
    }
}

#[test]
fn training_is_deterministic() {
    let data = tiny_data(3, 32, 7);
    let run = || {
        let mut state = ModelState::init(ModelConfig::desk(), 3).unwrap();
        let mut opt = OptimState::new(&state.params, 1e-4);
        let mut seen = Vec::new();
        let log = train_loop(&mut state, &mut opt, &data, &quick_config(3), |e, _, o| {
            seen.push((e.step, o.step));
            Ok(())
        })
        .unwrap();
        (log, state, seen)
    };
    let (a, sa, seen) = run();
    let (b, sb, _) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_eq!(seen, vec![(1, 1), (2, 2), (3, 3)]);
    assert_eq!(a[0].lr, 1e-3);
    for e in &a {
        let recon = e.loss.l1 + 0.1 * e.loss.fft + 0.1 * e.loss.msr.iter().sum::<f64>();
        assert!((e.loss.total - recon).abs() <= 1e-10);
    }
}

#[test]
fn non_finite_loss_aborts() {
    let mut data = tiny_data(1, 32, 8);
    data[0].0.data_mut()[0] = f64::NAN;
    let mut state = ModelState::init(ModelConfig::desk(), 4).unwrap();
    let before = state.clone();
    let mut opt = OptimState::new(&state.params, 1e-4);
    let err = train_loop(&mut state, &mut opt, &data, &quick_config(2), |_, _, _| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Numeric { .. }));
    assert_eq!(state, before);
}

#[test]
fn callback_errors_stop_the_run() {
    let data = tiny_data(1, 32, 9);
    let mut state = ModelState::init(ModelConfig::desk(), 5).unwrap();
    let mut opt = OptimState::new(&state.params, 1e-4);
    let mut calls = 0;
    let res = train_loop(&mut state, &mut opt, &data, &quick_config(5), |_, _, _| {
        calls += 1;
        Err(Error::config("stop"))
    });
    assert!(res.is_err());
    assert_eq!(calls, 1);
}
