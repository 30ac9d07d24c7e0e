//! Attention-distance analysis and its CSV form.

use std::path::Path;

use rwf_core::attention::{attn_distance_components, AttnRecord};
use rwf_core::network::{model_forward, ModelState};
use rwf_core::{Tape, Tensor};

use crate::error::{Result, RwfError};

pub const CSV_HEADER: [&str; 5] = ["scale", "block", "branch", "head", "distance"];

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub scale: usize,
    pub block: String,
    pub branch: String,
    pub head: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    pub rows: Vec<DistanceRow>,
    /// Unweighted mean of `rows`.
    pub aggregate: f64,
}

/// Runs the model on `img` and records every attention map.
pub fn record_attention(state: &ModelState, img: &Tensor) -> Result<(AttnRecord, (usize, usize))> {
    let tape = Tape::new();
    let params = state.bind(&tape, false);
    let out = model_forward(tape.constant(img.clone()), &params, &state.config, true)?;
    let rec = out.record.expect("recording was requested");
    Ok((rec, out.padded))
}

/// Per-entry distances of `rec` on an `h × w` working image.
pub fn distance_report(rec: &AttnRecord, h: usize, w: usize) -> Result<DistanceReport> {
    let (per, aggregate) = attn_distance_components(rec, h, w)?;
    let rows = rec
        .entries
        .iter()
        .zip(per)
        .map(|(e, distance)| DistanceRow {
            scale: e.scale,
            block: e.block.clone(),
            branch: e.branch.name().to_string(),
            head: e.head,
            distance,
        })
        .collect();
    Ok(DistanceReport { rows, aggregate })
}

pub fn analyze(state: &ModelState, img: &Tensor) -> Result<DistanceReport> {
    let (rec, (h, w)) = record_attention(state, img)?;
    distance_report(&rec, h, w)
}

fn csv_error(path: &Path, e: csv::Error) -> RwfError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => RwfError::io(path, io),
        other => RwfError::Data(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_csv<W: std::io::Write>(report: &DistanceReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &report.rows {
        w.write_record([r.scale.to_string(), r.block.clone(), r.branch.clone(), r.head.to_string(), r.distance.to_string()])?;
    }
    w.write_record(["ALL", "ALL", "ALL", "ALL", &report.aggregate.to_string()])?;
    w.flush()?;
    Ok(())
}

pub fn save_csv(report: &DistanceReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| RwfError::io(path, e))?;
    write_csv(report, file).map_err(|e| csv_error(path, e))
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<DistanceReport> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(|e| RwfError::Data(e.to_string()))?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(RwfError::Data(format!("unexpected CSV header {headers:?}")));
    }
    let mut rows = Vec::new();
    let mut aggregate = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| RwfError::Data(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = || RwfError::Data(format!("malformed CSV row {:?}", rec));
        let distance: f64 = field(4).parse().map_err(|_| bad())?;
        if field(0) == "ALL" {
            aggregate = Some(distance);
            continue;
        }
        rows.push(DistanceRow {
            scale: field(0).parse().map_err(|_| bad())?,
            block: field(1).to_string(),
            branch: field(2).to_string(),
            head: field(3).parse().map_err(|_| bad())?,
            distance,
        });
    }
    let aggregate = aggregate.ok_or_else(|| RwfError::Data("CSV has no aggregate row".into()))?;
    Ok(DistanceReport { rows, aggregate })
}

pub fn load_csv(path: &Path) -> Result<DistanceReport> {
    let file = std::fs::File::open(path).map_err(|e| RwfError::io(path, e))?;
    read_csv(file)
}
