//! Run configuration: a flat `key = value` text file.
//!
//! ```text
//! # desk-scale run
//! preset = RWF-desk
//! steps = 500
//! lambda = 0.1
//! ```
//!
//! `preset` fills every model field; later keys override single fields.
//! Lists are comma separated. Unknown or repeated keys are errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rwf_core::attention::QkvMode;
use rwf_core::network::{ModelConfig, SCALES};
use rwf_core::objective::SpectrumDistance;
use rwf_core::train::TrainConfig;

use crate::error::{Result, RwfError};

pub const KEYS: &[&str] = &[
    "preset",
    "depths",
    "channels",
    "window",
    "heads",
    "select",
    "radius",
    "ffn_expansion",
    "msr",
    "qkv",
    "init_seed",
    "seed",
    "steps",
    "batch",
    "patch",
    "alpha",
    "lambda",
    "spectrum",
    "lr_start",
    "lr_end",
    "weight_decay",
    "clip",
    "checkpoint_every",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            init_seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| RwfError::Config(format!("line {line}: invalid value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str, line: usize) -> Result<[usize; SCALES]> {
    let items: Vec<usize> = value
        .split(',')
        .map(|v| parse(key, v.trim(), line))
        .collect::<Result<_>>()?;
    items
        .try_into()
        .map_err(|_| RwfError::Config(format!("line {line}: {key} needs {SCALES} comma-separated values")))
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(RwfError::Config(format!("line {line}: invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| RwfError::Config(format!("line {line}: expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(RwfError::Config(format!("line {line}: unknown key {key:?}")));
            }
            if !seen.insert(key.to_string()) {
                return Err(RwfError::Config(format!("line {line}: duplicate key {key:?}")));
            }
            pairs.push((line, key.to_string(), value.to_string()));
        }

        let mut cfg = RunConfig::default();
        if let Some((line, _, name)) = pairs.iter().find(|(_, k, _)| k == "preset") {
            cfg.model = ModelConfig::by_name(name)
                .ok_or_else(|| RwfError::Config(format!("line {line}: unknown preset {name:?}")))?;
        }
        let (m, t) = (&mut cfg.model, &mut cfg.train);
        for (line, key, v) in &pairs {
            let (line, v) = (*line, v.as_str());
            match key.as_str() {
                "preset" => {}
                "depths" => m.depths = parse_list(key, v, line)?,
                "channels" => m.channels = parse(key, v, line)?,
                "window" => m.window = parse(key, v, line)?,
                "heads" => m.heads = parse_list(key, v, line)?,
                "select" => m.select = parse_list(key, v, line)?,
                "radius" => m.radius = parse(key, v, line)?,
                "ffn_expansion" => m.ffn_expansion = parse(key, v, line)?,
                "msr" => m.msr = parse_bool(key, v, line)?,
                "qkv" => {
                    m.qkv = match v {
                        "project" => QkvMode::Project,
                        "split" => QkvMode::Split,
                        _ => return Err(RwfError::Config(format!("line {line}: qkv must be project or split"))),
                    }
                }
                "init_seed" => cfg.init_seed = parse(key, v, line)?,
                "seed" => t.seed = parse(key, v, line)?,
                "steps" => t.steps = parse(key, v, line)?,
                "batch" => t.batch = parse(key, v, line)?,
                "patch" => t.patch = parse(key, v, line)?,
                "alpha" => t.weights.alpha = parse(key, v, line)?,
                "lambda" => t.weights.lambda = parse(key, v, line)?,
                "spectrum" => {
                    t.weights.spectrum = match v {
                        "components" => SpectrumDistance::Components,
                        "modulus" => SpectrumDistance::Modulus,
                        _ => return Err(RwfError::Config(format!("line {line}: spectrum must be components or modulus"))),
                    }
                }
                "lr_start" => t.lr_start = parse(key, v, line)?,
                "lr_end" => t.lr_end = parse(key, v, line)?,
                "weight_decay" => t.weight_decay = parse(key, v, line)?,
                "clip" => t.clip = parse(key, v, line)?,
                "checkpoint_every" => t.checkpoint_every = parse(key, v, line)?,
                _ => unreachable!("key list and match arms disagree"),
            }
        }
        let base = ModelConfig::by_name(&cfg.model.name);
        if base.as_ref() != Some(&cfg.model) {
            cfg.model.name = String::from("custom");
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RwfError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| RwfError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| RwfError::Config(e.to_string()))?;
        if self.train.checkpoint_every == 0 {
            return Err(RwfError::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its effective value, parseable by [`RunConfig::parse`].
    pub fn render(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let list = |v: &[usize; SCALES]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        if ModelConfig::by_name(&m.name).is_some() {
            let _ = writeln!(s, "preset = {}", m.name);
        }
        let _ = writeln!(s, "depths = {}", list(&m.depths));
        let _ = writeln!(s, "channels = {}", m.channels);
        let _ = writeln!(s, "window = {}", m.window);
        let _ = writeln!(s, "heads = {}", list(&m.heads));
        let _ = writeln!(s, "select = {}", list(&m.select));
        let _ = writeln!(s, "radius = {}", m.radius);
        let _ = writeln!(s, "ffn_expansion = {}", m.ffn_expansion);
        let _ = writeln!(s, "msr = {}", m.msr);
        let qkv = match m.qkv {
            QkvMode::Project => "project",
            QkvMode::Split => "split",
        };
        let _ = writeln!(s, "qkv = {qkv}");
        let _ = writeln!(s, "init_seed = {}", self.init_seed);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "steps = {}", t.steps);
        let _ = writeln!(s, "batch = {}", t.batch);
        let _ = writeln!(s, "patch = {}", t.patch);
        let _ = writeln!(s, "alpha = {:?}", t.weights.alpha);
        let _ = writeln!(s, "lambda = {:?}", t.weights.lambda);
        let spectrum = match t.weights.spectrum {
            SpectrumDistance::Components => "components",
            SpectrumDistance::Modulus => "modulus",
        };
        let _ = writeln!(s, "spectrum = {spectrum}");
        let _ = writeln!(s, "lr_start = {:?}", t.lr_start);
        let _ = writeln!(s, "lr_end = {:?}", t.lr_end);
        let _ = writeln!(s, "weight_decay = {:?}", t.weight_decay);
        let _ = writeln!(s, "clip = {:?}", t.clip);
        let _ = writeln!(s, "checkpoint_every = {}", t.checkpoint_every);
        s
    }
}
