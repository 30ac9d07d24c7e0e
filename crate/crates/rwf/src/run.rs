//! Training runs on disk: run header, step log and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use rwf_core::network::ModelState;
use rwf_core::train::{evaluate_psnr, train_loop, OptimState, StepLog};
use rwf_core::Tensor;

use crate::checkpoint::{save_checkpoint, DType};
use crate::config::RunConfig;
use crate::error::{Result, RwfError};

pub const CHECKPOINT_FILE: &str = "checkpoint.rwfc";
pub const LOG_FILE: &str = "train_log.csv";
pub const HEADER_FILE: &str = "run.cfg";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub state: ModelState,
    pub log: Vec<StepLog>,
    pub checkpoint: PathBuf,
    /// Mean PSNR of the untouched inputs.
    pub psnr_identity: f64,
    pub psnr_initial: f64,
    pub psnr_final: f64,
}

const LOG_HEADER: [&str; 9] = ["step", "lr", "total", "l1", "fft", "msr2", "msr3", "msr4", "grad_norm"];

fn log_row(e: &StepLog) -> [String; 9] {
    let l = &e.loss;
    [
        e.step.to_string(),
        e.lr.to_string(),
        l.total.to_string(),
        l.l1.to_string(),
        l.fft.to_string(),
        l.msr[0].to_string(),
        l.msr[1].to_string(),
        l.msr[2].to_string(),
        e.grad_norm.to_string(),
    ]
}

/// Trains a freshly initialized model on `data`, writing everything to
/// `out`. On a non-finite loss the run stops and the last checkpoint written
/// is left in place.
pub fn train_run(cfg: &RunConfig, data: &[(Tensor, Tensor)], out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(RwfError::Data("training set is empty".into()));
    }
    fs::create_dir_all(out).map_err(|e| RwfError::io(out, e))?;
    let header = out.join(HEADER_FILE);
    fs::write(&header, cfg.render()).map_err(|e| RwfError::io(&header, e))?;

    let log_path = out.join(LOG_FILE);
    let mut writer = csv::Writer::from_path(&log_path).map_err(|e| RwfError::Data(format!("{}: {e}", log_path.display())))?;
    let csv_err = |e: csv::Error| RwfError::Data(format!("{}: {e}", log_path.display()));
    writer.write_record(LOG_HEADER).map_err(csv_err)?;

    let mut state = ModelState::init(cfg.model.clone(), cfg.init_seed)?;
    let mut opt = OptimState::new(&state.params, cfg.train.weight_decay);
    let (psnr_initial, psnr_identity) = evaluate_psnr(&state, data)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let every = cfg.train.checkpoint_every;
    let steps = cfg.train.steps;

    let result = train_loop(&mut state, &mut opt, data, &cfg.train, |e, s, o| {
        writer
            .write_record(log_row(e))
            .and_then(|_| writer.flush().map_err(csv::Error::from))
            .map_err(|err| rwf_core::Error::config(format!("{}: {err}", log_path.display())))?;
        if e.step % every == 0 || e.step == steps {
            save_checkpoint(s, Some(o), &ckpt, DType::F64).map_err(|err| rwf_core::Error::config(err.to_string()))?;
        }
        Ok(())
    });
    writer.flush().map_err(|e| RwfError::io(&log_path, e))?;
    let log = result?;
    if steps == 0 {
        save_checkpoint(&state, Some(&opt), &ckpt, DType::F64)?;
    }
    let (psnr_final, _) = evaluate_psnr(&state, data)?;
    Ok(RunSummary {
        state,
        log,
        checkpoint: ckpt,
        psnr_identity,
        psnr_initial,
        psnr_final,
    })
}

/// Parses a step log written by [`train_run`].
pub fn read_log(path: &Path) -> Result<Vec<StepLog>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| RwfError::Data(format!("{}: {e}", path.display())))?;
    let bad = |what: String| RwfError::Data(format!("{}: {what}", path.display()));
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| -> Result<f64> { rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("bad field {i}"))) };
        out.push(StepLog {
            step: rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad step".into()))?,
            lr: f(1)?,
            loss: rwf_core::objective::LossReport {
                total: f(2)?,
                l1: f(3)?,
                fft: f(4)?,
                msr: [f(5)?, f(6)?, f(7)?],
            },
            grad_norm: f(8)?,
        });
    }
    Ok(out)
}
