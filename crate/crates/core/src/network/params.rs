//! Parameter naming, storage and initialization.
//!
//! Names follow `module.block.submodule.tensor`, for example
//! `enc1.b0.rwam.qkv.weight` or `dec0.b1.ffn.sca.bias`. Top-level layers
//! are `intro`, `down{s}`, `up{s}`, `fuse{s}`, `ending` and `msr{1,2,3}`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, SCALES};
use crate::attention::{table_len, QkvMode};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation of the relative position bias tables.
pub const BIAS_TABLE_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±1/√fan_in`.
    FanIn(usize),
    /// Normal truncated at two standard deviations.
    TruncNormal,
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: &[usize], init: Init) {
        self.0.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
    }

    fn conv(&mut self, prefix: &str, cout: usize, cin_per_group: usize, kh: usize, kw: usize) {
        let fan_in = cin_per_group * kh * kw;
        self.push(format!("{prefix}.weight"), &[cout, cin_per_group, kh, kw], Init::FanIn(fan_in));
        self.push(format!("{prefix}.bias"), &[cout], Init::FanIn(fan_in));
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.weight"), &[c], Init::Ones);
        self.push(format!("{prefix}.bias"), &[c], Init::Zeros);
    }

    fn block(&mut self, cfg: &ModelConfig, prefix: &str, scale: usize, block: usize) {
        let c = cfg.width(scale);
        let half = c / 2;
        let m = cfg.heads[scale];
        let len = table_len(cfg.window);
        let d = match cfg.qkv {
            QkvMode::Project => half,
            QkvMode::Split => half / 3,
        };
        self.norm(&format!("{prefix}.norm1"), c);
        for branch in ["rwam", "swam"] {
            if cfg.qkv == QkvMode::Project {
                self.conv(&format!("{prefix}.{branch}.qkv"), 3 * half, half, 1, 1);
            }
            self.conv(&format!("{prefix}.{branch}.proj"), half, d, 1, 1);
        }
        let r_n = cfg.region(block).candidate_count();
        self.push(format!("{prefix}.rwam.bias_table"), &[r_n, m, len], Init::TruncNormal);
        self.push(format!("{prefix}.rwam.center_bias"), &[m, len], Init::TruncNormal);
        self.push(format!("{prefix}.swam.bias_table"), &[m, len], Init::TruncNormal);
        self.conv(&format!("{prefix}.fuse"), c, c, 1, 1);
        let ec = cfg.ffn_expansion * c;
        self.norm(&format!("{prefix}.norm2"), c);
        self.conv(&format!("{prefix}.ffn.conv1"), 2 * ec, c, 1, 1);
        self.conv(&format!("{prefix}.ffn.dwconv"), ec, 1, 3, 3);
        self.conv(&format!("{prefix}.ffn.sca"), ec, ec, 1, 1);
        self.conv(&format!("{prefix}.ffn.conv2"), c, ec, 1, 1);
    }
}

/// Every parameter of a model, in construction order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Specs(Vec::new());
    let c = cfg.channels;
    s.conv("intro", c, 3, 3, 3);
    for scale in 0..SCALES {
        for b in 0..cfg.depths[scale] {
            s.block(cfg, &format!("enc{scale}.b{b}"), scale, b);
        }
        if scale + 1 < SCALES {
            s.conv(&format!("down{scale}"), cfg.width(scale + 1), cfg.width(scale), 2, 2);
        }
    }
    for scale in (0..SCALES - 1).rev() {
        s.conv(&format!("up{scale}"), 2 * cfg.width(scale + 1), cfg.width(scale + 1), 1, 1);
        s.conv(&format!("fuse{scale}"), cfg.width(scale), 2 * cfg.width(scale), 1, 1);
        for b in 0..cfg.depths[scale] {
            s.block(cfg, &format!("dec{scale}.b{b}"), scale, b);
        }
    }
    s.conv("ending", 3, c, 3, 3);
    for j in 1..SCALES {
        s.conv(&format!("msr{j}"), 3, cfg.width(j), 3, 3);
    }
    s.0
}

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map.get(name).ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.map.get_mut(name).ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            map: self.map.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect(),
        }
    }
}

/// Model configuration plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn sample(init: Init, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match init {
        Init::Ones => vec![1.0; n],
        Init::Zeros => vec![0.0; n],
        Init::FanIn(fan_in) => {
            let b = 1.0 / libm::sqrt(fan_in as f64);
            (0..n).map(|_| rng.random_range(-b..b)).collect()
        }
        Init::TruncNormal => {
            let normal = Normal::new(0.0, BIAS_TABLE_STD).expect("valid std");
            (0..n)
                .map(|_| loop {
                    let v: f64 = normal.sample(rng);
                    if libm::fabs(v) <= 2.0 * BIAS_TABLE_STD {
                        break v;
                    }
                })
                .collect()
        }
    }
}

impl ModelState {
    /// Deterministic initialization from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for spec in param_specs(&config) {
            let n = spec.shape.iter().product();
            params.insert(spec.name, Tensor::new(&spec.shape, sample(spec.init, n, &mut rng))?);
        }
        Ok(ModelState { config, params })
    }

    /// Checks that the parameter set matches the configuration exactly.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let specs = param_specs(&self.config);
        if specs.len() != self.params.len() {
            return Err(Error::config("parameter count does not match the configuration"));
        }
        for spec in specs {
            if self.params.get(&spec.name)?.shape() != spec.shape.as_slice() {
                return Err(Error::config(format!("parameter {} has the wrong shape", spec.name)));
            }
        }
        if !self.params.is_finite() {
            return Err(Error::numeric("model parameters"));
        }
        Ok(())
    }

    /// Puts every parameter on `tape`, as trainable leaves or constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| {
                let v = if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters placed on a tape.
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars.get(name).copied().ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }
}

impl<'t> FromIterator<(String, Var<'t>)> for Bound<'t> {
    fn from_iter<I: IntoIterator<Item = (String, Var<'t>)>>(iter: I) -> Self {
        Bound { vars: iter.into_iter().collect() }
    }
}

/// Coordinates of parameter `name` whose gradient is identically zero: the
/// key third of a Q/K/V projection bias adds one constant to every logit of
/// a softmax row. Empty for every other parameter.
pub fn softmax_invariant_coords(name: &str, numel: usize) -> core::ops::Range<usize> {
    if name.ends_with("rwam.qkv.bias") || name.ends_with("swam.qkv.bias") {
        numel / 3..2 * numel / 3
    } else {
        0..0
    }
}
