//! One line per acceptance criterion; exits non-zero if any fails.

use std::time::Instant;

use rwf::rwf_core::network::ModelConfig;
use rwf::rwf_core::train::{cosine_lr, Schedule};
use rwf::verify::*;

struct Tally {
    failed: Vec<usize>,
}

impl Tally {
    fn report(&mut self, n: usize, title: &str, start: Instant, result: Result<(bool, String), String>) {
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            self.failed.push(n);
        }
        println!("{} criterion {n:>2} {title}: {detail} [{secs:.1} s]", if ok { "PASS" } else { "FAIL" });
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut t = Tally { failed: Vec::new() };

    let start = Instant::now();
    let r = rwam_loop_oracle(100, 1).map_err(s).map(|e| {
        let secs = start.elapsed().as_secs_f64();
        (e <= 1e-10 && secs < 60.0, format!("100 configs, max abs error {e:.2e} (limit 1e-10), {secs:.1} s (limit 60 s)"))
    });
    t.report(1, "routed attention vs loop oracle", start, r);

    let start = Instant::now();
    let r = rwam_dense_coverage(10, 2)
        .map_err(s)
        .map(|e| (e <= 1e-10, format!("10 configs, max abs error {e:.2e} (limit 1e-10)")));
    t.report(2, "full coverage vs dense attention", start, r);

    let start = Instant::now();
    let r = (|| {
        let ops = op_grad_checks(4).map_err(s)?;
        let branches = branch_grad_checks(5).map_err(s)?;
        let model = model_loss_grad_check(ModelConfig::desk(), 16, 16, 3, 6).map_err(s)?;
        let worst = ops.iter().chain(&branches).map(|r| r.1).fold(0.0f64, f64::max);
        let secs = start.elapsed().as_secs_f64();
        let ok = worst <= 1e-4 && model.max_rel_error <= 1e-4 && secs < 300.0;
        Ok((
            ok,
            format!(
                "{} ops and {} branches worst {worst:.2e}; RWF-desk loss on 3x16x16, {} coordinates, max rel error {:.2e} (limit 1e-4), {secs:.1} s (limit 300 s)",
                ops.len(),
                branches.len(),
                model.checked,
                model.max_rel_error
            ),
        ))
    })();
    t.report(3, "gradient fidelity", start, r);

    let start = Instant::now();
    let r = mac_scaling(&[16, 32, 64], 7).map_err(s).map(|m| {
        let ok = m.formula_exact() && m.linear_error() < 0.01 && m.quadratic_error() < 0.01;
        (
            ok,
            format!(
                "routed MACs {:?} vs formula {:?} (exact {}), linear ratio error {:.2e}, dense {:?} quadratic ratio error {:.2e}",
                m.routed,
                m.formula,
                m.formula_exact(),
                m.linear_error(),
                m.dense,
                m.quadratic_error()
            ),
        )
    });
    t.report(4, "attention complexity", start, r);

    let start = Instant::now();
    let sched = Schedule::new(500);
    let (a, b) = (cosine_lr(0, &sched), cosine_lr(500, &sched));
    t.report(5, "schedule endpoints", start, Ok((a == 1e-3 && b == 1e-7, format!("lr(0) = {a:e}, lr(T) = {b:e}"))));

    let start = Instant::now();
    let r = rwf::report::count(&ModelConfig::tiny(), 256, 256).map_err(s).map(|c| {
        let (dp, dm) = c.deviation.unwrap_or((f64::NAN, f64::NAN));
        let itemized = !c.report.items.is_empty() && c.report.items.iter().map(|i| i.params).sum::<usize>() == c.report.params;
        (
            itemized,
            format!(
                "RWF-T 256x256 {:.3} M params ({:+.1}%), {:.3} G MACs ({:+.1}%), {} itemized layers, within 25%: {}",
                c.report.params as f64 / 1e6,
                100.0 * dp,
                c.report.macs as f64 / 1e9,
                100.0 * dm,
                c.report.items.len(),
                c.within_tolerance() == Some(true)
            ),
        )
    });
    t.report(6, "parameter and MAC report", start, r);

    let start = Instant::now();
    let smoke = smoke_training(500, 0).map_err(s);
    let r = smoke.as_ref().map_err(Clone::clone).map(|r| {
        let ok = r.loss_ratio() <= 0.1 && r.psnr_gain() >= 5.0 && r.seconds < 600.0;
        (
            ok,
            format!(
                "loss {:.5} -> {:.5}, ratio {:.4} (limit 0.1); psnr {:.2} -> {:.2} dB, gain {:.2} (limit 5); {:.0} s (limit 600 s)",
                r.log[0].loss.total,
                r.log.last().unwrap().loss.total,
                r.loss_ratio(),
                r.psnr_identity,
                r.psnr_final,
                r.psnr_gain(),
                r.seconds
            ),
        )
    });
    t.report(7, "overfit smoke run", start, r);

    let start = Instant::now();
    let r = smoke.map(|r| {
        let d = r.msr_decrease();
        let (a, b) = (r.log[0].loss.msr, r.log.last().unwrap().loss.msr);
        (
            d.iter().all(|&v| v >= 0.5),
            format!("msr terms {a:.4?} -> {b:.4?}, decrease {d:.3?} (limit 0.5 each)"),
        )
    });
    t.report(8, "multi-scale terms decrease", start, r);

    let start = Instant::now();
    let r = attn_distance_examples(200, 10).map_err(s).map(|(id, uni, lo, hi)| {
        (
            id == 0.0 && (uni - 0.30178).abs() <= 1e-5 && lo >= 0.0 && hi <= 1.0,
            format!("identity {id}, uniform 2x2 {uni:.6} (want 0.30178 +- 1e-5), random range [{lo:.4}, {hi:.4}]"),
        )
    });
    t.report(9, "attention distance", start, r);

    let start = Instant::now();
    let r = checkpoint_roundtrip(11)
        .map_err(s)
        .map(|(bitwise, rejected)| (bitwise && rejected, format!("RWF-desk bitwise roundtrip {bitwise}, corrupted CRC rejected {rejected}")));
    t.report(10, "checkpoint persistence", start, r);

    if t.failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
    } else {
        println!("acceptance: failed criteria {:?}", t.failed);
        std::process::exit(1);
    }
}
