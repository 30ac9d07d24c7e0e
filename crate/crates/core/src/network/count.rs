//! Analytic parameter and multiply-accumulate counts.
//!
//! MACs follow the usual profiler convention: one per multiply-add in
//! convolutions and attention products, one per element for LayerNorm's
//! affine step and for elementwise gating products. Additions, GELU and
//! softmax are free.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::{ModelConfig, SCALES};
use super::params::param_specs;
use crate::attention::{count_attention_macs, count_window_attention_macs};
use crate::error::Result;
use crate::windowing::round_up;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountItem {
    pub name: String,
    pub params: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountReport {
    pub items: Vec<CountItem>,
    pub params: usize,
    pub macs: u64,
    /// Working size after padding.
    pub padded: (usize, usize),
}

struct Tally {
    params: BTreeMap<String, usize>,
    items: Vec<CountItem>,
}

impl Tally {
    fn add(&mut self, layer: String, macs: u64) {
        let params = self.params.remove(&layer).unwrap_or(0);
        self.items.push(CountItem { name: layer, params, macs });
    }

    fn block(&mut self, cfg: &ModelConfig, prefix: &str, scale: usize, block: usize, h: usize, w: usize) {
        let hw = (h * w) as u64;
        let c = cfg.width(scale) as u64;
        let half = c / 2;
        let att = cfg.attention(scale, block);
        let d = att.qkv_width(half as usize).unwrap_or(half as usize);
        let ec = cfg.ffn_expansion as u64 * c;
        let windows = ((h / cfg.window) * (w / cfg.window)) as u64;
        let r_n = att.region.candidate_count() as u64;

        self.add(format!("{prefix}.norm1"), c * hw);
        for branch in ["rwam", "swam"] {
            if self.params.contains_key(&format!("{prefix}.{branch}.qkv")) {
                self.add(format!("{prefix}.{branch}.qkv"), 3 * half * half * hw);
            }
        }
        self.add(format!("{prefix}.rwam.router"), windows * r_n * d as u64);
        self.add(format!("{prefix}.rwam.bias_table"), 0);
        self.add(format!("{prefix}.rwam.center_bias"), 0);
        self.add(format!("{prefix}.rwam.attention"), count_attention_macs(&att, d, h, w));
        self.add(format!("{prefix}.swam.bias_table"), 0);
        self.add(format!("{prefix}.swam.attention"), count_window_attention_macs(&att, d, h, w));
        for branch in ["rwam", "swam"] {
            self.add(format!("{prefix}.{branch}.proj"), half * d as u64 * hw);
        }
        self.add(format!("{prefix}.fuse"), c * c * hw);
        self.add(format!("{prefix}.norm2"), c * hw);
        self.add(format!("{prefix}.ffn.conv1"), 2 * ec * c * hw);
        self.add(format!("{prefix}.ffn.dwconv"), ec * 9 * hw);
        self.add(format!("{prefix}.ffn.gate"), ec * hw);
        self.add(format!("{prefix}.ffn.sca"), ec * ec + ec * hw);
        self.add(format!("{prefix}.ffn.conv2"), c * ec * hw);
    }
}

fn layer_of(name: &str) -> String {
    let cut = name.rfind('.').unwrap_or(name.len());
    let layer = &name[..cut];
    // bias tables are layers of their own
    if name.ends_with("bias_table") || name.ends_with("center_bias") {
        return String::from(name);
    }
    String::from(layer)
}

/// Per-layer counts of `cfg` on an `h × w` input (padded as in the forward
/// pass). Heads used only for training (`msr*`) are included.
pub fn count_params_flops(cfg: &ModelConfig, h: usize, w: usize) -> Result<CountReport> {
    cfg.validate()?;
    let mut params = BTreeMap::new();
    for spec in param_specs(cfg) {
        *params.entry(layer_of(&spec.name)).or_insert(0) += spec.shape.iter().product::<usize>();
    }
    let mult = cfg.pad_multiple();
    let (ph, pw) = (round_up(h, mult), round_up(w, mult));
    let mut t = Tally { params, items: Vec::new() };
    let c = cfg.channels as u64;
    let dims = |s: usize| (ph >> s, pw >> s);
    let area = |s: usize| ((ph >> s) * (pw >> s)) as u64;

    t.add("intro".into(), 3 * c * 9 * area(0));
    for s in 0..SCALES {
        let (hs, ws) = dims(s);
        for b in 0..cfg.depths[s] {
            t.block(cfg, &format!("enc{s}.b{b}"), s, b, hs, ws);
        }
        if s + 1 < SCALES {
            let cs = cfg.width(s) as u64;
            t.add(format!("down{s}"), 2 * cs * cs * 4 * area(s + 1));
        }
    }
    t.add("msr3".into(), 3 * cfg.width(3) as u64 * 9 * area(3));
    for s in (0..SCALES - 1).rev() {
        let (hs, ws) = dims(s);
        let cn = cfg.width(s + 1) as u64;
        t.add(format!("up{s}"), 2 * cn * cn * area(s + 1));
        let cs = cfg.width(s) as u64;
        t.add(format!("fuse{s}"), 2 * cs * cs * area(s));
        for b in 0..cfg.depths[s] {
            t.block(cfg, &format!("dec{s}.b{b}"), s, b, hs, ws);
        }
        if s > 0 {
            t.add(format!("msr{s}"), 3 * cs * 9 * area(s));
        }
    }
    t.add("ending".into(), 3 * c * 9 * area(0));
    debug_assert!(t.params.is_empty(), "uncounted layers: {:?}", t.params);
    let params = t.items.iter().map(|i| i.params).sum();
    let macs = t.items.iter().map(|i| i.macs).sum();
    Ok(CountReport {
        items: t.items,
        params,
        macs,
        padded: (ph, pw),
    })
}

/// Parameters of a dense convolution.
pub fn conv_params(cin: usize, cout: usize, kh: usize, kw: usize, bias: bool) -> usize {
    cin * cout * kh * kw + if bias { cout } else { 0 }
}
