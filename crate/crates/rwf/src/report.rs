//! Human-readable parameter/MAC report.

use std::fmt::Write as _;

use rwf_core::network::{count_params_flops, CountReport, ModelConfig};

use crate::error::Result;

/// Published sizes at 256×256: `(preset, params, MACs)`.
pub const REFERENCE: &[(&str, f64, f64)] = &[("RWF-T", 11.15e6, 25.29e9)];

/// Relative deviation allowed before the per-layer table is flagged.
pub const TOLERANCE: f64 = 0.25;

pub fn reference_for(name: &str) -> Option<(f64, f64)> {
    REFERENCE.iter().find(|r| r.0 == name).map(|r| (r.1, r.2))
}

#[derive(Debug, Clone)]
pub struct CountSummary {
    pub report: CountReport,
    pub hw: (usize, usize),
    /// `(params, MACs)` relative deviation from the reference, if any.
    pub deviation: Option<(f64, f64)>,
}

impl CountSummary {
    pub fn within_tolerance(&self) -> Option<bool> {
        self.deviation.map(|(p, m)| p.abs() <= TOLERANCE && m.abs() <= TOLERANCE)
    }
}

pub fn count(cfg: &ModelConfig, h: usize, w: usize) -> Result<CountSummary> {
    let report = count_params_flops(cfg, h, w)?;
    let deviation = reference_for(&cfg.name)
        .filter(|_| (h, w) == (256, 256))
        .map(|(p, m)| (report.params as f64 / p - 1.0, report.macs as f64 / m - 1.0));
    Ok(CountSummary { report, hw: (h, w), deviation })
}

/// Totals, the reference comparison, and one line per layer.
pub fn render(cfg: &ModelConfig, s: &CountSummary) -> String {
    let r = &s.report;
    let mut out = String::new();
    let _ = writeln!(out, "model {} at {}x{} (padded {}x{})", cfg.name, s.hw.0, s.hw.1, r.padded.0, r.padded.1);
    let _ = writeln!(out, "params {} ({:.3} M)", r.params, r.params as f64 / 1e6);
    let _ = writeln!(out, "macs {} ({:.3} G)", r.macs, r.macs as f64 / 1e9);
    if let (Some((rp, rm)), Some((dp, dm))) = (reference_for(&cfg.name), s.deviation) {
        let verdict = if s.within_tolerance() == Some(true) { "within" } else { "outside" };
        let _ = writeln!(
            out,
            "reference {:.2} M / {:.2} G: params {:+.1}%, macs {:+.1}% ({verdict} ±{:.0}%)",
            rp / 1e6,
            rm / 1e9,
            100.0 * dp,
            100.0 * dm,
            100.0 * TOLERANCE
        );
    }
    let _ = writeln!(out, "{:<32} {:>12} {:>16}", "layer", "params", "macs");
    for item in &r.items {
        let _ = writeln!(out, "{:<32} {:>12} {:>16}", item.name, item.params, item.macs);
    }
    out
}
