//! Optimizer, learning-rate schedule, patch sampling and the training loop.
//!
//! Nothing here touches the file system; checkpointing is left to the
//! `on_step` callback of [`train_loop`].

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::network::{model_forward, ModelState, ParamStore};
use crate::objective::{psnr, total_loss, LossReport, LossWeights, MSR_TERMS};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: ParamStore,
    pub v: ParamStore,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimState {
    pub fn new(params: &ParamStore, weight_decay: f64) -> Self {
        OptimState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// One decoupled-weight-decay Adam update of every parameter.
pub fn adamw_step(params: &mut ParamStore, grads: &ParamStore, opt: &mut OptimState, lr: f64) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::config("learning rate must be non-negative"));
    }
    for (name, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::numeric(format!("gradient of {name}")));
        }
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - libm::pow(opt.beta1, t as f64);
    let bc2_sqrt = libm::sqrt(1.0 - libm::pow(opt.beta2, t as f64));
    let step_size = lr / bc1;
    let (b1, b2, eps) = (opt.beta1, opt.beta2, opt.eps);
    let decay = 1.0 - lr * opt.weight_decay;
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        let m = opt.m.get_mut(name)?;
        if g.shape() != p.shape() || m.shape() != p.shape() {
            return Err(Error::dim("adamw_step", p.shape(), g.shape()));
        }
        let v = opt.v.get_mut(name)?;
        for i in 0..p.numel() {
            let gi = g.data()[i];
            let pi = &mut p.data_mut()[i];
            *pi *= decay;
            let mi = &mut m.data_mut()[i];
            *mi = b1 * *mi + (1.0 - b1) * gi;
            let vi = &mut v.data_mut()[i];
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let denom = libm::sqrt(*vi) / bc2_sqrt + eps;
            *pi -= step_size * (*mi / denom);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn new(total_steps: u64) -> Self {
        Schedule {
            lr_start: 1e-3,
            lr_end: 1e-7,
            total_steps,
        }
    }
}

/// Cosine annealing from `lr_start` at `t = 0` to `lr_end` at
/// `t = total_steps`; `t` is clamped to that range.
pub fn cosine_lr(t: u64, s: &Schedule) -> f64 {
    if t == 0 || s.total_steps == 0 {
        return s.lr_start;
    }
    if t >= s.total_steps {
        return s.lr_end;
    }
    let phase = core::f64::consts::PI * t as f64 / s.total_steps as f64;
    s.lr_end + 0.5 * (s.lr_start - s.lr_end) * (1.0 + libm::cos(phase))
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.iter().map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>()).sum());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Tensor,
    pub target: Tensor,
    pub offset: (usize, usize),
    pub hflip: bool,
    pub vflip: bool,
}

/// Crop and flip `input` and `target` identically.
pub fn crop_and_flip(input: &Tensor, target: &Tensor, p: usize, offset: (usize, usize), hflip: bool, vflip: bool) -> Result<TrainSample> {
    if input.shape() != target.shape() || input.rank() != 3 {
        return Err(Error::dim("sample_patch", input.shape(), target.shape()));
    }
    let (h, w) = (input.shape()[1], input.shape()[2]);
    if h < p || w < p || offset.0 + p > h || offset.1 + p > w {
        return Err(Error::dim("sample_patch", input.shape(), &[3, p, p]));
    }
    let aug = |t: &Tensor| {
        let mut c = t.crop_at(offset.0, offset.1, p, p);
        if hflip {
            c = c.flip_w();
        }
        if vflip {
            c = c.flip_h();
        }
        c
    };
    Ok(TrainSample {
        input: aug(input),
        target: aug(target),
        offset,
        hflip,
        vflip,
    })
}

/// Random `p × p` crop with random horizontal/vertical flips.
pub fn sample_patch<R: Rng>(input: &Tensor, target: &Tensor, p: usize, rng: &mut R) -> Result<TrainSample> {
    if input.rank() != 3 || input.shape()[1] < p || input.shape()[2] < p {
        return Err(Error::dim("sample_patch", input.shape(), &[3, p, p]));
    }
    let y = rng.random_range(0..=input.shape()[1] - p);
    let x = rng.random_range(0..=input.shape()[2] - p);
    let hflip = rng.random_bool(0.5);
    let vflip = rng.random_bool(0.5);
    crop_and_flip(input, target, p, (y, x), hflip, vflip)
}

/// Forward and backward of one sample; returns the loss report and the
/// parameter gradients. Models built without MSR heads train with `λ = 0`.
pub fn sample_gradients(state: &ModelState, sample: &TrainSample, w: &LossWeights) -> Result<(LossReport, ParamStore)> {
    let w = &if state.config.msr { *w } else { LossWeights { lambda: 0.0, ..*w } };
    let tape = Tape::new();
    let params = state.bind(&tape, true);
    let out = model_forward(tape.constant(sample.input.clone()), &params, &state.config, false)?;
    let (loss, report) = total_loss(&tape, out.restored, &sample.target, &out.msr, w)?;
    let grads = tape.backward(loss)?;
    let mut store = ParamStore::new();
    for (name, v) in params.iter() {
        store.insert(name.clone(), grads.get_or_zeros(*v));
    }
    Ok((report, store))
}

fn mean_reports(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let mut out = LossReport::default();
    for r in reports {
        out.l1 += r.l1 / n;
        out.fft += r.fft / n;
        for i in 0..MSR_TERMS {
            out.msr[i] += r.msr[i] / n;
        }
        out.total += r.total / n;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub patch: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch: 4,
            patch: 64,
            seed: 0,
            weights: LossWeights::default(),
            lr_start: 1e-3,
            lr_end: 1e-7,
            weight_decay: 1e-4,
            clip: 1.0,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            total_steps: self.steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch == 0 || self.patch == 0 || self.clip <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::config("batch, patch and clip must be positive"));
        }
        if !(self.lr_start >= self.lr_end && self.lr_end >= 0.0) {
            return Err(Error::config("learning rates must satisfy lr_start >= lr_end >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    /// 1-based step index.
    pub step: u64,
    pub lr: f64,
    /// Batch mean, evaluated before the update.
    pub loss: LossReport,
    pub grad_norm: f64,
}

/// Draws batches in a seed-determined order: every pass over the dataset is
/// a fresh shuffle, and each drawn pair gets a random crop and flips.
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            cursor: len,
        }
    }

    pub fn next_batch(&mut self, data: &[(Tensor, Tensor)], batch: usize, patch: usize) -> Result<Vec<TrainSample>> {
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let (x, y) = &data[self.order[self.cursor]];
            self.cursor += 1;
            out.push(sample_patch(x, y, patch, &mut self.rng)?);
        }
        Ok(out)
    }
}

/// One optimizer step on a batch; gradients are averaged over the batch and
/// clipped to `cfg.clip`.
pub fn train_step(state: &mut ModelState, opt: &mut OptimState, batch: &[TrainSample], cfg: &TrainConfig, lr: f64) -> Result<(LossReport, f64)> {
    let mut reports = Vec::with_capacity(batch.len());
    let mut acc: Option<ParamStore> = None;
    let scale = 1.0 / batch.len() as f64;
    for sample in batch {
        let (report, grads) = sample_gradients(state, sample, &cfg.weights)?;
        reports.push(report);
        match acc.as_mut() {
            None => {
                let mut g = grads;
                g.iter_mut().for_each(|(_, t)| *t = t.scale(scale));
                acc = Some(g);
            }
            Some(a) => {
                for (name, t) in a.iter_mut() {
                    t.add_assign(&grads.get(name)?.scale(scale))?;
                }
            }
        }
    }
    let mut grads = acc.ok_or_else(|| Error::config("empty batch"))?;
    let report = mean_reports(&reports);
    if !report.total.is_finite() {
        return Err(Error::numeric("training loss"));
    }
    let norm = clip_global_norm(&mut grads, cfg.clip);
    adamw_step(&mut state.params, &grads, opt, lr)?;
    Ok((report, norm))
}

/// Runs `cfg.steps` optimizer steps. `on_step` sees the state after every
/// update and may stop the run by returning an error.
pub fn train_loop<F>(
    state: &mut ModelState,
    opt: &mut OptimState,
    data: &[(Tensor, Tensor)],
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<Vec<StepLog>>
where
    F: FnMut(&StepLog, &ModelState, &OptimState) -> Result<()>,
{
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() {
        return Err(Error::config("empty dataset"));
    }
    let schedule = cfg.schedule();
    let mut sampler = BatchSampler::new(data.len(), cfg.seed);
    let mut log = Vec::with_capacity(cfg.steps as usize);
    for t in 0..cfg.steps {
        let lr = cosine_lr(t, &schedule);
        let batch = sampler.next_batch(data, cfg.batch, cfg.patch)?;
        let (loss, grad_norm) = train_step(state, opt, &batch, cfg, lr)?;
        let entry = StepLog {
            step: t + 1,
            lr,
            loss,
            grad_norm,
        };
        on_step(&entry, state, opt)?;
        log.push(entry);
    }
    Ok(log)
}

/// Restores `input` with the model (no gradients).
pub fn restore(state: &ModelState, input: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let params = state.bind(&tape, false);
    let out = model_forward(tape.constant(input.clone()), &params, &state.config, false)?;
    let v = out.restored.value();
    Ok((*v).clone())
}

/// Mean PSNR of restored inputs against targets, and of the untouched
/// inputs (identity baseline).
pub fn evaluate_psnr(state: &ModelState, data: &[(Tensor, Tensor)]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::config("empty dataset"));
    }
    let mut model = 0.0;
    let mut identity = 0.0;
    for (x, y) in data {
        model += psnr(&restore(state, x)?, y)?;
        identity += psnr(x, y)?;
    }
    let n = data.len() as f64;
    Ok((model / n, identity / n))
}
