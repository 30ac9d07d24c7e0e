//! Verification suite: oracle comparisons, invariants and gradient checks.
//!
//! Each procedure returns its measurement so callers can apply their own
//! thresholds; [`checks`] wraps them with the default ones for `rwf verify`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwf_core::attention::*;
use rwf_core::gradcheck::{grad_check_inputs, grad_check_selected, grad_check_steps, Entries, GradCheckReport, Stencil, DEFAULT_STEP};
use rwf_core::network::{model_forward, softmax_invariant_coords, Bound, ModelConfig, ModelState};
use rwf_core::objective::*;
use rwf_core::ops::{Conv2dSpec, LN_EPS};
use rwf_core::oracle::{self, BranchParams};
use rwf_core::train::{adamw_step, cosine_lr, evaluate_psnr, train_loop, OptimState, Schedule, StepLog, TrainConfig};
use rwf_core::windowing::RegionShape;
use rwf_core::{Tape, Tensor, Var};

use crate::analyze::{read_csv, write_csv, DistanceReport, DistanceRow};
use crate::checkpoint::{load_checkpoint, save_checkpoint, DType};
use crate::synth::synthetic_pairs;

pub type Outcome = std::result::Result<String, String>;

pub struct Check {
    pub name: &'static str,
    pub summary: &'static str,
    /// Excluded from a default run.
    pub slow: bool,
    pub run: fn() -> Outcome,
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], amp: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-amp..amp))
}

fn attn_cfg(k: usize, m: usize, select: usize, region: RegionShape, shift: usize) -> AttentionConfig {
    AttentionConfig {
        window: k,
        heads: m,
        select,
        region,
        shift,
        qkv: QkvMode::Project,
    }
}

fn branch_params(rng: &mut ChaCha8Rng, c: usize, cfg: &AttentionConfig) -> BranchParams {
    let d = cfg.qkv_width(c).expect("valid width");
    let len = table_len(cfg.window);
    BranchParams {
        qkv: Some((rand_t(rng, &[3 * c, c, 1, 1], 0.8), rand_t(rng, &[3 * c], 0.2))),
        proj: (rand_t(rng, &[c, d, 1, 1], 0.8), rand_t(rng, &[c], 0.2)),
        candidate_bias: rand_t(rng, &[cfg.region.candidate_count(), cfg.heads, len], 0.5),
        center_bias: rand_t(rng, &[cfg.heads, len], 0.5),
    }
}

fn consts<'t>(tape: &'t Tape, p: &BranchParams) -> (RwamWeights<'t>, SwamWeights<'t>) {
    let qkv = p.qkv.as_ref().map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone())));
    let proj = (tape.constant(p.proj.0.clone()), tape.constant(p.proj.1.clone()));
    let center = tape.constant(p.center_bias.clone());
    (
        RwamWeights {
            qkv,
            proj,
            candidate_bias: tape.constant(p.candidate_bias.clone()),
            center_bias: center,
        },
        SwamWeights { qkv, proj, bias: center },
    )
}

fn run_rwam(x: &Tensor, p: &BranchParams, cfg: &AttentionConfig) -> rwf_core::Result<(Tensor, u64)> {
    let tape = Tape::new();
    let (w, _) = consts(&tape, p);
    let y = rwam_forward(tape.constant(x.clone()), &w, cfg)?;
    let v = y.value();
    Ok(((*v).clone(), tape.matmul_macs()))
}

fn run_swam(x: &Tensor, p: &BranchParams, cfg: &AttentionConfig) -> rwf_core::Result<Tensor> {
    let tape = Tape::new();
    let (_, w) = consts(&tape, p);
    let y = swam_forward(tape.constant(x.clone()), &w, cfg)?;
    let v = y.value();
    Ok((*v).clone())
}

fn random_region(rng: &mut ChaCha8Rng) -> RegionShape {
    let r = rng.random_range(1..=2);
    if rng.random_bool(0.5) {
        RegionShape::cross(r)
    } else {
        RegionShape::rectangle(r)
    }
}

/// Max abs error of `rwam_forward` against the loop oracle over `trials`
/// random configurations (`k ∈ {2,4}`, grids up to 4×4, `m ∈ {1,2}`,
/// both region shapes, `r_i ∈ {1,2}`).
pub fn rwam_loop_oracle(trials: usize, seed: u64) -> rwf_core::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let k = if rng.random_bool(0.5) { 2 } else { 4 };
        let m = rng.random_range(1..=2);
        let c = m * rng.random_range(1..=3);
        let (sh, sw) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let cfg = attn_cfg(k, m, rng.random_range(1..=2), random_region(&mut rng), 0);
        let p = branch_params(&mut rng, c, &cfg);
        let x = rand_t(&mut rng, &[c, sh * k, sw * k], 1.0);
        worst = worst.max(run_rwam(&x, &p, &cfg)?.0.max_abs_diff(&oracle::rwam_loops(&x, &p, &cfg)));
    }
    Ok(worst)
}

/// Max abs error against dense whole-image attention when a rectangle
/// region covers every window and `r_i = r_n`.
pub fn rwam_dense_coverage(trials: usize, seed: u64) -> rwf_core::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let k = if rng.random_bool(0.5) { 2 } else { 4 };
        let (sh, sw) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let m = rng.random_range(1..=2);
        let region = RegionShape::rectangle(sh.max(sw).max(2) - 1);
        let cfg = attn_cfg(k, m, region.candidate_count(), region, 0);
        let p = branch_params(&mut rng, 2 * m, &cfg);
        let x = rand_t(&mut rng, &[2 * m, sh * k, sw * k], 1.0);
        worst = worst.max(run_rwam(&x, &p, &cfg)?.0.max_abs_diff(&oracle::rwam_dense(&x, &p, &cfg)));
    }
    Ok(worst)
}

/// Max abs error of `swam_forward` (shifted and unshifted) against the
/// explicit-roll oracle.
pub fn swam_loop_oracle(trials: usize, seed: u64) -> rwf_core::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let k = if rng.random_bool(0.5) { 2 } else { 4 };
        let m = rng.random_range(1..=2);
        let shift = if rng.random_bool(0.5) { 0 } else { k / 2 };
        let cfg = attn_cfg(k, m, 1, RegionShape::cross(1), shift);
        let p = branch_params(&mut rng, 2 * m, &cfg);
        let (sh, sw) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let x = rand_t(&mut rng, &[2 * m, sh * k, sw * k], 1.0);
        worst = worst.max(run_swam(&x, &p, &cfg)?.max_abs_diff(&oracle::swam_loops(&x, &p, &cfg)));
    }
    Ok(worst)
}

fn probe(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| (0.7 * i as f64 + 0.3).sin())
}

type OpFn = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> rwf_core::Result<Var<'t>>>;

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, OpFn)> {
    let mut r = |s: &[usize]| rand_t(rng, s, 1.0);
    vec![
        ("add", vec![r(&[2, 3]), r(&[2, 3])], Box::new(|_, v| v[0].add(v[1]))),
        ("sub", vec![r(&[2, 3]), r(&[2, 3])], Box::new(|_, v| v[0].sub(v[1]))),
        ("mul", vec![r(&[2, 3]), r(&[2, 3])], Box::new(|_, v| v[0].mul(v[1]))),
        ("scale", vec![r(&[4])], Box::new(|_, v| Ok(v[0].scale(-1.7)))),
        ("mul_channel", vec![r(&[3, 2, 2]), r(&[3])], Box::new(|_, v| v[0].mul_channel(v[1]))),
        ("reshape", vec![r(&[2, 6])], Box::new(|_, v| v[0].reshape(&[3, 4]))),
        ("narrow0", vec![r(&[4, 3])], Box::new(|_, v| v[0].narrow0(1, 2))),
        ("cat0", vec![r(&[1, 3]), r(&[2, 3])], Box::new(|_, v| Var::cat0(&[v[0], v[1]]))),
        ("gather", vec![r(&[5])], Box::new(|_, v| v[0].gather(vec![4, 0, 0, 2, 3, 4], &[2, 3]))),
        ("pixel_shuffle", vec![r(&[8, 2, 3])], Box::new(|_, v| v[0].pixel_shuffle(2))),
        ("matmul", vec![r(&[2, 3, 4]), r(&[2, 4, 2])], Box::new(|_, v| v[0].matmul(v[1]))),
        ("matmul_nt", vec![r(&[2, 3, 4]), r(&[2, 5, 4])], Box::new(|_, v| v[0].matmul_nt(v[1]))),
        ("softmax_last", vec![r(&[3, 5])], Box::new(|_, v| v[0].softmax_last())),
        (
            "conv2d",
            vec![r(&[2, 5, 4]), r(&[3, 2, 3, 3]), r(&[3])],
            Box::new(|_, v| v[0].conv2d(v[1], Some(v[2]), Conv2dSpec::new(2, 1))),
        ),
        (
            "conv2d_depthwise",
            vec![r(&[3, 4, 4]), r(&[3, 1, 3, 3]), r(&[3])],
            Box::new(|_, v| v[0].conv2d(v[1], Some(v[2]), Conv2dSpec::depthwise(3, 1))),
        ),
        (
            "layer_norm",
            vec![r(&[4, 2, 3]), r(&[4]), r(&[4])],
            Box::new(|_, v| v[0].layer_norm(v[1], v[2], LN_EPS)),
        ),
        ("gelu", vec![r(&[7])], Box::new(|_, v| Ok(v[0].gelu()))),
        ("mean_spatial", vec![r(&[2, 3, 3])], Box::new(|_, v| v[0].mean_spatial())),
        ("sum_all", vec![r(&[2, 3])], Box::new(|_, v| Ok(v[0].sum_all()))),
        ("mean_all", vec![r(&[2, 3])], Box::new(|_, v| Ok(v[0].mean_all()))),
        ("l1_mean", vec![r(&[2, 3, 3]), r(&[2, 3, 3])], Box::new(|_, v| v[0].l1_mean(v[1]))),
        ("dft2", vec![r(&[2, 3, 4])], Box::new(|_, v| v[0].dft2())),
        (
            "complex_modulus_l1",
            vec![r(&[2, 2, 3, 2]), r(&[2, 2, 3, 2])],
            Box::new(|_, v| v[0].complex_modulus_l1(v[1])),
        ),
    ]
}

/// Max relative gradient error of every tape operation, contracted to a
/// scalar with a fixed probe tensor.
pub fn op_grad_checks(seed: u64) -> rwf_core::Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, inputs, f) in op_cases(&mut rng) {
        let report = grad_check_inputs(
            |tape, v| {
                let y = f(tape, v)?;
                Ok(y.mul(tape.constant(probe(&y.shape())))?.sum_all())
            },
            &inputs,
            DEFAULT_STEP,
            Entries::All,
        )?;
        out.push((name, report.max_rel_error));
    }
    Ok(out)
}

/// Gradient check of both attention branches over every input, skipping the
/// key-bias coordinates whose true gradient is zero; those must come back
/// from the tape as exact zeros.
pub fn branch_grad_checks(seed: u64) -> rwf_core::Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let c = 2;
    for (name, cfg, (h, w)) in [
        ("rwam_cross", attn_cfg(2, 1, 2, RegionShape::cross(1), 0), (4, 6)),
        ("rwam_rectangle", attn_cfg(2, 2, 1, RegionShape::rectangle(1), 0), (4, 6)),
        ("swam_shifted", attn_cfg(2, 2, 1, RegionShape::cross(1), 1), (4, 4)),
    ] {
        let routed = name.starts_with("rwam");
        let p = branch_params(&mut rng, c, &cfg);
        let x = rand_t(&mut rng, &[c, h, w], 1.0);
        let (qw, qb) = p.qkv.clone().expect("projected");
        let mut inputs = vec![x, qw, qb, p.proj.0.clone(), p.proj.1.clone(), p.center_bias.clone()];
        if routed {
            inputs.push(p.candidate_bias.clone());
        }
        let r = probe(&[c, h, w]);
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let grads = tape.backward(branch_loss(&tape, &vars, routed, &cfg, &r)?)?;
        let gb = grads.get_or_zeros(vars[2]);
        if gb.data()[c..2 * c].iter().any(|g| g.abs() > 1e-12) {
            return Err(rwf_core::Error::config(format!("{name}: key bias gradient is not zero")));
        }
        let mut picks: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
        picks[2].retain(|&i| i < c || i >= 2 * c);
        let report = grad_check_selected(|t, v| branch_loss(t, v, routed, &cfg, &r), &inputs, DEFAULT_STEP, Stencil::Central, &picks)?;
        out.push((name, report.max_rel_error));
    }
    Ok(out)
}

fn branch_loss<'t>(tape: &'t Tape, v: &[Var<'t>], routed: bool, cfg: &AttentionConfig, r: &Tensor) -> rwf_core::Result<Var<'t>> {
    let y = if routed {
        let w = RwamWeights {
            qkv: Some((v[1], v[2])),
            proj: (v[3], v[4]),
            candidate_bias: v[6],
            center_bias: v[5],
        };
        rwam_forward(v[0], &w, cfg)?
    } else {
        let w = SwamWeights {
            qkv: Some((v[1], v[2])),
            proj: (v[3], v[4]),
            bias: v[5],
        };
        swam_forward(v[0], &w, cfg)?
    };
    Ok(y.mul(tape.constant(r.clone()))?.sum_all())
}

/// Steps tried per coordinate by the whole-model check.
pub const MODEL_STEPS: [f64; 3] = [1e-3, 1e-4, 1e-5];

/// Gradient check of the full model loss (`α = λ = 0.1`) at up to
/// `per_tensor` spread coordinates of the input image and of every parameter.
pub fn model_loss_grad_check(cfg: ModelConfig, h: usize, w: usize, per_tensor: usize, seed: u64) -> rwf_core::Result<GradCheckReport> {
    let state = ModelState::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let img = Tensor::from_fn(&[3, h, w], |_| rng.random_range(0.0..1.0));
    let target = Tensor::from_fn(&[3, h, w], |_| rng.random_range(0.0..1.0));
    let names: Vec<String> = state.params.names().cloned().collect();
    let mut inputs = vec![img];
    inputs.extend(names.iter().map(|n| state.params.get(n).expect("listed").clone()));
    let entries = Entries::Spread(per_tensor);
    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let skip = if i == 0 { 0..0 } else { softmax_invariant_coords(&names[i - 1], t.numel()) };
            entries.pick(t.numel()).into_iter().filter(|j| !skip.contains(j)).collect()
        })
        .collect();
    let weights = LossWeights::default();
    let config = state.config.clone();
    grad_check_steps(
        |tape, v| {
            let bound: Bound<'_> = names.iter().cloned().zip(v[1..].iter().copied()).collect();
            let out = model_forward(v[0], &bound, &config, false)?;
            Ok(total_loss(tape, out.restored, &target, &out.msr, &weights)?.0)
        },
        &inputs,
        &MODEL_STEPS,
        Stencil::FivePoint,
        &picks,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacScaling {
    pub sizes: Vec<usize>,
    /// Tape-measured MACs of `rwam_forward`.
    pub routed: Vec<u64>,
    /// Closed-form `2(r_i+1)k²·hw·d`.
    pub formula: Vec<u64>,
    /// Tape-measured MACs of dense whole-image attention.
    pub dense: Vec<u64>,
}

impl MacScaling {
    pub fn formula_exact(&self) -> bool {
        self.routed == self.formula
    }

    fn ratio_error(v: &[u64], sizes: &[usize], power: i32) -> f64 {
        let mut worst = 0.0f64;
        for i in 1..v.len() {
            let area = (sizes[i] * sizes[i]) as f64 / (sizes[i - 1] * sizes[i - 1]) as f64;
            let want = area.powi(power);
            worst = worst.max(((v[i] as f64 / v[i - 1] as f64) / want - 1.0).abs());
        }
        worst
    }

    /// Worst deviation of consecutive routed-count ratios from the area ratio.
    pub fn linear_error(&self) -> f64 {
        Self::ratio_error(&self.routed, &self.sizes, 1)
    }

    /// Worst deviation of consecutive dense-count ratios from the squared
    /// area ratio.
    pub fn quadratic_error(&self) -> f64 {
        Self::ratio_error(&self.dense, &self.sizes, 2)
    }
}

fn dense_attention_macs(x: &Tensor, heads: usize) -> rwf_core::Result<u64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = c / heads;
    let tape = Tape::new();
    let t = tape.constant(x.clone()).reshape(&[heads, n, h * w])?;
    let idx: Vec<usize> = (0..heads)
        .flat_map(|m| (0..h * w).flat_map(move |p| (0..n).map(move |j| (m * n + j) * h * w + p)))
        .collect();
    let tokens = t.gather(idx, &[heads, h * w, n])?;
    let probs = tokens.matmul_nt(tokens)?.scale(1.0 / (n as f64).sqrt()).softmax_last()?;
    probs.matmul(tokens)?;
    Ok(tape.matmul_macs())
}

/// Attention MACs at square sizes `sizes` for a `k = 4`, cross-region,
/// `r_i = 2` configuration with `d = 4`.
pub fn mac_scaling(sizes: &[usize], seed: u64) -> rwf_core::Result<MacScaling> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = attn_cfg(4, 2, 2, RegionShape::cross(1), 0);
    let c = 4;
    let p = branch_params(&mut rng, c, &cfg);
    let mut out = MacScaling {
        sizes: sizes.to_vec(),
        routed: Vec::new(),
        formula: Vec::new(),
        dense: Vec::new(),
    };
    for &s in sizes {
        let x = rand_t(&mut rng, &[c, s, s], 1.0);
        out.routed.push(run_rwam(&x, &p, &cfg)?.1);
        out.formula.push(count_attention_macs(&cfg, c, s, s));
        out.dense.push(dense_attention_macs(&x, cfg.heads)?);
    }
    Ok(out)
}

/// Attention-distance examples: identity record, uniform 2×2 record, and the
/// range over random row-stochastic records.
pub fn attn_distance_examples(trials: usize, seed: u64) -> rwf_core::Result<(f64, f64, f64, f64)> {
    let entry = |pos: Vec<(f64, f64)>, weights: Vec<f64>| AttnEntry {
        scale: 0,
        block: "b".into(),
        branch: Branch::Shifted,
        head: 0,
        queries_per_window: pos.len(),
        keys_per_window: pos.len(),
        query_pos: pos.clone(),
        key_pos: pos,
        weights,
    };
    let grid = vec![(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];
    let mut eye = vec![0.0; 16];
    (0..4).for_each(|i| eye[i * 5] = 1.0);
    let identity = attn_distance(&AttnRecord { entries: vec![entry(grid.clone(), eye)] }, 2, 2)?;
    let uniform = attn_distance(&AttnRecord { entries: vec![entry(grid, vec![0.25; 16])] }, 2, 2)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..trials {
        let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let mut entries = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            let (nq, nk) = (rng.random_range(1..=5), rng.random_range(1..=6));
            let mut pt = || (rng.random_range(0.0..=h as f64), rng.random_range(0.0..=w as f64));
            let query_pos: Vec<_> = (0..nq).map(|_| pt()).collect();
            let key_pos: Vec<_> = (0..nk).map(|_| pt()).collect();
            let mut weights = Vec::new();
            for _ in 0..nq {
                let row: Vec<f64> = (0..nk).map(|_| rng.random_range(0.0..1.0f64).powi(4)).collect();
                let s: f64 = row.iter().sum::<f64>().max(1e-300);
                weights.extend(row.iter().map(|v| v / s));
            }
            entries.push(AttnEntry {
                scale: 0,
                block: "r".into(),
                branch: Branch::Routed,
                head: 0,
                queries_per_window: nq,
                keys_per_window: nk,
                query_pos,
                key_pos,
                weights,
            });
        }
        if let Ok(v) = attn_distance(&AttnRecord { entries }, h, w) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Ok((identity, uniform, lo, hi))
}

#[derive(Debug, Clone)]
pub struct SmokeResult {
    pub log: Vec<StepLog>,
    pub psnr_identity: f64,
    pub psnr_final: f64,
    pub seconds: f64,
}

impl SmokeResult {
    pub fn loss_ratio(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |l| l.loss.total) / self.log[0].loss.total
    }

    /// Relative decrease of each regularization term from the first to the
    /// last logged step.
    pub fn msr_decrease(&self) -> [f64; MSR_TERMS] {
        let (a, b) = (self.log[0].loss.msr, self.log.last().expect("non-empty").loss.msr);
        [0, 1, 2].map(|i| 1.0 - b[i] / a[i])
    }

    pub fn psnr_gain(&self) -> f64 {
        self.psnr_final - self.psnr_identity
    }
}

/// RWF-desk trained on four synthetic 64×64 pairs.
pub fn smoke_training(steps: u64, seed: u64) -> rwf_core::Result<SmokeResult> {
    let data = synthetic_pairs(4, 64, seed);
    let mut state = ModelState::init(ModelConfig::desk(), seed)?;
    let cfg = TrainConfig {
        steps,
        seed,
        ..TrainConfig::default()
    };
    let mut opt = OptimState::new(&state.params, cfg.weight_decay);
    let start = std::time::Instant::now();
    let log = train_loop(&mut state, &mut opt, &data, &cfg, |_, _, _| Ok(()))?;
    let seconds = start.elapsed().as_secs_f64();
    let (psnr_final, psnr_identity) = evaluate_psnr(&state, &data)?;
    Ok(SmokeResult {
        log,
        psnr_identity,
        psnr_final,
        seconds,
    })
}

fn scratch_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("rwf-verify-{tag}-{}", std::process::id()));
    let _ = std::fs::create_dir_all(&dir);
    dir
}

/// `(bitwise roundtrip, corrupted CRC rejected)` for an RWF-desk checkpoint.
pub fn checkpoint_roundtrip(seed: u64) -> crate::error::Result<(bool, bool)> {
    let dir = scratch_dir("ckpt");
    let path = dir.join("model.rwfc");
    let state = ModelState::init(ModelConfig::desk(), seed)?;
    save_checkpoint(&state, None, &path, DType::F64)?;
    let back = load_checkpoint(&path)?;
    let bitwise = back.config == state.config
        && back.params.len() == state.params.len()
        && state.params.iter().all(|(k, t)| {
            back.params.get(k).is_ok_and(|b| {
                b.shape() == t.shape() && b.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
        });
    let mut bytes = std::fs::read(&path).map_err(|e| crate::error::RwfError::io(&path, e))?;
    let n = bytes.len();
    bytes[n - 1] ^= 0x5a;
    let bad = dir.join("corrupt.rwfc");
    std::fs::write(&bad, bytes).map_err(|e| crate::error::RwfError::io(&bad, e))?;
    let rejected = matches!(load_checkpoint(&bad), Err(crate::error::RwfError::Format { .. }));
    let _ = std::fs::remove_dir_all(&dir);
    Ok((bitwise, rejected))
}

fn direct_dft_loss(x: &Tensor, y: &Tensor) -> f64 {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let tau = std::f64::consts::TAU;
    let mut s = 0.0;
    for ch in 0..c {
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for yy in 0..h {
                    for xx in 0..w {
                        let a = -tau * ((u * yy) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        let d = x.at(&[ch, yy, xx]) - y.at(&[ch, yy, xx]);
                        re += d * a.cos();
                        im += d * a.sin();
                    }
                }
                s += re.abs() + im.abs();
            }
        }
    }
    s / (2 * c * h * w) as f64
}

fn value(f: impl for<'t> FnOnce(&'t Tape) -> rwf_core::Result<Var<'t>>) -> rwf_core::Result<f64> {
    let tape = Tape::new();
    let v = f(&tape)?;
    let out = v.value().item();
    Ok(out)
}

fn fmt_pairs(v: &[(&str, f64)]) -> String {
    let worst = v.iter().cloned().fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    format!("{} cases, worst {} at {:.2e}", v.len(), worst.0, worst.1)
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn check_rwam_oracle() -> Outcome {
    let err = rwam_loop_oracle(100, 1).map_err(e2s)?;
    ensure(err <= 1e-10, format!("max abs error {err:.2e} over 100 configs"))
}

fn check_dense_coverage() -> Outcome {
    let err = rwam_dense_coverage(10, 2).map_err(e2s)?;
    ensure(err <= 1e-10, format!("max abs error {err:.2e} over 10 configs"))
}

fn check_swam_oracle() -> Outcome {
    let err = swam_loop_oracle(30, 3).map_err(e2s)?;
    ensure(err <= 1e-10, format!("max abs error {err:.2e} over 30 configs"))
}

fn check_op_grads() -> Outcome {
    let v = op_grad_checks(4).map_err(e2s)?;
    ensure(v.iter().all(|r| r.1 <= 1e-4), fmt_pairs(&v))
}

fn check_branch_grads() -> Outcome {
    let v = branch_grad_checks(5).map_err(e2s)?;
    ensure(v.iter().all(|r| r.1 <= 1e-4), fmt_pairs(&v))
}

fn check_model_grad() -> Outcome {
    let r = model_loss_grad_check(ModelConfig::desk(), 16, 16, 3, 6).map_err(e2s)?;
    ensure(r.max_rel_error <= 1e-4, format!("{} coordinates, max rel error {:.2e}", r.checked, r.max_rel_error))
}

fn check_macs() -> Outcome {
    let m = mac_scaling(&[16, 32, 64], 7).map_err(e2s)?;
    ensure(
        m.formula_exact() && m.linear_error() < 0.01 && m.quadratic_error() < 0.01,
        format!(
            "routed {:?} formula exact {}, linear error {:.2e}, dense quadratic error {:.2e}",
            m.routed,
            m.formula_exact(),
            m.linear_error(),
            m.quadratic_error()
        ),
    )
}

fn check_schedule() -> Outcome {
    let s = Schedule::new(500);
    let (a, b) = (cosine_lr(0, &s), cosine_lr(500, &s));
    let monotone = (0..500).all(|t| cosine_lr(t + 1, &s) <= cosine_lr(t, &s));
    ensure(a == 1e-3 && b == 1e-7 && monotone, format!("lr(0) = {a:e}, lr(T) = {b:e}, monotone {monotone}"))
}

fn check_adamw() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let init = rand_t(&mut rng, &[6], 1.0);
    let mut p = rwf_core::network::ParamStore::new();
    p.insert("x", init.clone());
    let mut opt = OptimState::new(&p, 1e-4);
    let (mut flat, mut m, mut v) = (init.into_data(), vec![0.0; 6], vec![0.0; 6]);
    for t in 1..=100 {
        let g = rand_t(&mut rng, &[6], 1.0);
        let lr = cosine_lr(t - 1, &Schedule::new(100));
        let bc1 = 1.0 - 0.9f64.powf(t as f64);
        let bc2 = (1.0 - 0.999f64.powf(t as f64)).sqrt();
        for i in 0..6 {
            flat[i] *= 1.0 - lr * 1e-4;
            m[i] = 0.9 * m[i] + (1.0 - 0.9) * g.data()[i];
            v[i] = 0.999 * v[i] + (1.0 - 0.999) * g.data()[i] * g.data()[i];
            flat[i] -= lr / bc1 * (m[i] / (v[i].sqrt() / bc2 + 1e-8));
        }
        let mut gs = rwf_core::network::ParamStore::new();
        gs.insert("x", g);
        adamw_step(&mut p, &gs, &mut opt, lr).map_err(e2s)?;
    }
    let same = p.get("x").map_err(e2s)?.data() == flat.as_slice();
    ensure(same, format!("100 steps bitwise equal: {same}"))
}

fn check_losses() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::from_fn(&[3, 6, 5], |_| rng.random_range(0.0..1.0));
    let y = Tensor::from_fn(&[3, 6, 5], |_| rng.random_range(0.0..1.0));
    let l1 = value(|t| l1_loss(t.constant(x.clone()), t.constant(y.clone()))).map_err(e2s)?;
    let l1_oracle = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.numel() as f64;
    let fft = value(|t| fft_loss(t.constant(x.clone()), t.constant(y.clone()), SpectrumDistance::Components)).map_err(e2s)?;
    let fft_oracle = direct_dft_loss(&x, &y);
    let board = Tensor::from_fn(&[1, 4, 4], |i| ((i / 4 + i % 4) % 2) as f64);
    let degrade = degrade_gt(&board).map_err(e2s)?.max_abs_diff(&Tensor::full(&[1, 4, 4], 0.5));
    let g = Tensor::from_fn(&[3, 16, 16], |_| rng.random_range(0.0..1.0));
    let res = [8, 4, 2].map(|s| Tensor::from_fn(&[3, s, s], |_| rng.random_range(-0.1..0.1)));
    let tape = Tape::new();
    let rv = [0, 1, 2].map(|i| tape.constant(res[i].clone()));
    let w = LossWeights::default();
    let (_, rep) = total_loss(&tape, tape.constant(g.map(|v| 1.0 - v)), &g, &rv, &w).map_err(e2s)?;
    let identity = (rep.total - (rep.l1 + w.alpha * rep.fft + w.lambda * rep.msr.iter().sum::<f64>())).abs();
    let psnr_cap = psnr(&x, &x).map_err(e2s)?;
    let psnr_20 = psnr(&x, &x.map(|v| v + 0.1)).map_err(e2s)?;
    let errs = [(l1 - l1_oracle).abs(), (fft - fft_oracle).abs(), degrade, identity, (psnr_20 - 20.0).abs()];
    ensure(
        errs[0] <= 1e-12 && errs[1] <= 1e-9 && errs[2] <= 1e-12 && errs[3] <= 1e-10 && psnr_cap == 100.0 && errs[4] <= 1e-9,
        format!(
            "l1 {:.1e}, fft {:.1e}, checkerboard {:.1e}, total identity {:.1e}, psnr cap {psnr_cap}, psnr 20 dB {:.1e}",
            errs[0], errs[1], errs[2], errs[3], errs[4]
        ),
    )
}

fn check_distance() -> Outcome {
    let (id, uni, lo, hi) = attn_distance_examples(200, 10).map_err(e2s)?;
    ensure(
        id == 0.0 && (uni - 0.30178).abs() <= 1e-5 && lo >= 0.0 && hi <= 1.0,
        format!("identity {id}, uniform 2x2 {uni:.6}, random range [{lo:.4}, {hi:.4}]"),
    )
}

fn check_checkpoint() -> Outcome {
    let (bitwise, rejected) = checkpoint_roundtrip(11).map_err(e2s)?;
    ensure(bitwise && rejected, format!("bitwise roundtrip {bitwise}, corrupted CRC rejected {rejected}"))
}

fn check_csv() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rows: Vec<DistanceRow> = (0..20)
        .map(|i| DistanceRow {
            scale: i % 4,
            block: format!("enc{}.b{}", i % 4, i % 3),
            branch: if i % 2 == 0 { "rwam".into() } else { "swam".into() },
            head: i % 5,
            distance: rng.random_range(0.0..1.0),
        })
        .collect();
    let report = DistanceReport {
        aggregate: rows.iter().map(|r| r.distance).sum::<f64>() / 20.0,
        rows,
    };
    let mut buf = Vec::new();
    write_csv(&report, &mut buf).map_err(e2s)?;
    let back = read_csv(buf.as_slice()).map_err(e2s)?;
    let err = report
        .rows
        .iter()
        .zip(&back.rows)
        .map(|(a, b)| (a.distance - b.distance).abs())
        .fold((report.aggregate - back.aggregate).abs(), f64::max);
    let same_keys = report.rows.len() == back.rows.len()
        && report.rows.iter().zip(&back.rows).all(|(a, b)| (a.scale, &a.block, &a.branch, a.head) == (b.scale, &b.block, &b.branch, b.head));
    ensure(same_keys && err <= 1e-9, format!("max value error {err:.1e}"))
}

fn check_count() -> Outcome {
    let cfg = ModelConfig::tiny();
    let s = crate::report::count(&cfg, 256, 256).map_err(e2s)?;
    let (dp, dm) = s.deviation.ok_or("no reference for RWF-T")?;
    let itemized = !s.report.items.is_empty() && s.report.items.iter().map(|i| i.params).sum::<usize>() == s.report.params;
    ensure(
        itemized,
        format!(
            "RWF-T 256x256: {:.3} M params ({:+.1}%), {:.3} G MACs ({:+.1}%), {} layers itemized",
            s.report.params as f64 / 1e6,
            100.0 * dp,
            s.report.macs as f64 / 1e9,
            100.0 * dm,
            s.report.items.len()
        ),
    )
}

fn check_smoke() -> Outcome {
    let r = smoke_training(500, 0).map_err(e2s)?;
    let dec = r.msr_decrease();
    ensure(
        r.loss_ratio() <= 0.1 && r.psnr_gain() >= 5.0 && dec.iter().all(|&d| d >= 0.5),
        format!(
            "loss ratio {:.4}, psnr gain {:.2} dB, msr decrease {:.2?}, {:.0} s",
            r.loss_ratio(),
            r.psnr_gain(),
            dec,
            r.seconds
        ),
    )
}

pub fn checks() -> Vec<Check> {
    vec![
        Check { name: "rwam-loop-oracle", summary: "routed attention vs brute-force loops", slow: false, run: check_rwam_oracle },
        Check { name: "rwam-dense-coverage", summary: "full coverage vs dense attention", slow: false, run: check_dense_coverage },
        Check { name: "swam-loop-oracle", summary: "shifted window attention vs explicit roll", slow: false, run: check_swam_oracle },
        Check { name: "op-gradients", summary: "finite differences for every tape op", slow: false, run: check_op_grads },
        Check { name: "branch-gradients", summary: "finite differences through both attention branches", slow: false, run: check_branch_grads },
        Check { name: "model-gradient", summary: "finite differences through the full RWF-desk loss", slow: true, run: check_model_grad },
        Check { name: "attention-macs", summary: "instrumented MACs: formula and linear scaling", slow: false, run: check_macs },
        Check { name: "schedule", summary: "cosine schedule endpoints and monotonicity", slow: false, run: check_schedule },
        Check { name: "adamw-reference", summary: "AdamW vs straight-line reference, bitwise", slow: false, run: check_adamw },
        Check { name: "losses", summary: "L1, DFT, resampling, total-loss identity, PSNR", slow: false, run: check_losses },
        Check { name: "attention-distance", summary: "distance metric examples and range", slow: false, run: check_distance },
        Check { name: "checkpoint", summary: "checkpoint roundtrip and CRC rejection", slow: false, run: check_checkpoint },
        Check { name: "csv-roundtrip", summary: "analyzer CSV reparses to the same values", slow: false, run: check_csv },
        Check { name: "count", summary: "RWF-T parameter and MAC report", slow: false, run: check_count },
        Check { name: "smoke-training", summary: "500-step overfit on synthetic pairs", slow: true, run: check_smoke },
    ]
}

/// Runs checks whose name contains `filter` (all when `None`); slow checks
/// run only when `full` is set or the filter selects them. Prints one line
/// per check and returns `(passed, failed)`.
pub fn run_checks(filter: Option<&str>, full: bool, out: &mut impl Write) -> std::io::Result<(usize, usize)> {
    let (mut passed, mut failed) = (0, 0);
    for c in checks() {
        let selected = match filter {
            Some(f) => c.name.contains(f),
            None => full || !c.slow,
        };
        if !selected {
            continue;
        }
        let start = std::time::Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => {
                passed += 1;
                writeln!(out, "PASS {:<22} {msg} ({secs:.1} s)", c.name)?;
            }
            Err(msg) => {
                failed += 1;
                writeln!(out, "FAIL {:<22} {msg} ({secs:.1} s)", c.name)?;
            }
        }
    }
    Ok((passed, failed))
}
