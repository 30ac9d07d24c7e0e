//! Attention records and the normalized average attention distance.

use alloc::string::String;
use alloc::vec::Vec;

use super::AttnTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Routed,
    Shifted,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Routed => "rwam",
            Branch::Shifted => "swam",
        }
    }
}

/// Attention of one head of one branch, over every window of the map.
///
/// Queries are grouped in windows of `queries_per_window`; every query of a
/// window shares the window's `keys_per_window` keys. Positions are
/// `(y, x)` in image pixels; the closed box `[0, h] × [0, w]` is in bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnEntry {
    pub scale: usize,
    pub block: String,
    pub branch: Branch,
    pub head: usize,
    pub queries_per_window: usize,
    pub keys_per_window: usize,
    pub query_pos: Vec<(f64, f64)>,
    pub key_pos: Vec<(f64, f64)>,
    /// Row-major `[windows, queries_per_window, keys_per_window]`.
    pub weights: Vec<f64>,
}

impl AttnEntry {
    pub fn windows(&self) -> usize {
        self.query_pos.len() / self.queries_per_window.max(1)
    }

    /// Checks shapes, bounds and row sums.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        let (t, l) = (self.queries_per_window, self.keys_per_window);
        if t == 0 || l == 0 || self.query_pos.is_empty() || self.query_pos.len() % t != 0 {
            return Err(Error::config("attention entry has no queries or keys"));
        }
        let win = self.windows();
        if self.key_pos.len() != win * l || self.weights.len() != win * t * l {
            return Err(Error::config("attention entry shapes disagree"));
        }
        let inside = |&(y, x): &(f64, f64)| (0.0..=h as f64).contains(&y) && (0.0..=w as f64).contains(&x);
        if !self.query_pos.iter().all(inside) || !self.key_pos.iter().all(inside) {
            return Err(Error::config("attention coordinates outside the image"));
        }
        for row in self.weights.chunks(l) {
            let s: f64 = row.iter().sum();
            if libm::fabs(s - 1.0) > 1e-6 || row.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::config("attention rows must be stochastic"));
            }
        }
        Ok(())
    }

    /// Mean over queries of `Σ_k A(q, k) · |q - k|`, in pixels.
    pub fn mean_distance(&self) -> f64 {
        let (t, l) = (self.queries_per_window, self.keys_per_window);
        let mut total = 0.0;
        for win in 0..self.windows() {
            let keys = &self.key_pos[win * l..(win + 1) * l];
            for q in 0..t {
                let (qy, qx) = self.query_pos[win * t + q];
                let row = &self.weights[(win * t + q) * l..(win * t + q + 1) * l];
                total += row
                    .iter()
                    .zip(keys)
                    .map(|(a, &(ky, kx))| a * libm::hypot(qy - ky, qx - kx))
                    .sum::<f64>();
            }
        }
        total / self.query_pos.len() as f64
    }

    /// Splits a branch trace into per-head entries. Feature coordinates are
    /// scaled by `2^scale` to image pixels.
    pub fn from_trace(trace: &AttnTrace, scale: usize, block: &str, branch: Branch) -> Vec<AttnEntry> {
        let f = (1usize << scale) as f64;
        let pos = |p: usize| (((p / trace.width) as f64) * f, ((p % trace.width) as f64) * f);
        let query_pos: Vec<(f64, f64)> = trace.query_pixels.iter().map(|&p| pos(p)).collect();
        let key_pos: Vec<(f64, f64)> = trace.key_pixels.iter().map(|&p| pos(p)).collect();
        let (t, l, m) = (trace.queries, trace.keys, trace.heads);
        let probs = trace.probs.data();
        (0..m)
            .map(|head| {
                let mut weights = Vec::with_capacity(trace.windows * t * l);
                for win in 0..trace.windows {
                    let base = (win * m + head) * t * l;
                    weights.extend_from_slice(&probs[base..base + t * l]);
                }
                AttnEntry {
                    scale,
                    block: String::from(block),
                    branch,
                    head,
                    queries_per_window: t,
                    keys_per_window: l,
                    query_pos: query_pos.clone(),
                    key_pos: key_pos.clone(),
                    weights,
                }
            })
            .collect()
    }
}

/// All attention entries captured from one forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttnRecord {
    pub entries: Vec<AttnEntry>,
}

/// Per-entry normalized distances and their unweighted mean.
pub fn attn_distance_components(rec: &AttnRecord, h: usize, w: usize) -> Result<(Vec<f64>, f64)> {
    if rec.entries.is_empty() || h == 0 || w == 0 {
        return Err(Error::config("empty attention record"));
    }
    let diag = libm::sqrt((h * h + w * w) as f64);
    let mut parts = Vec::with_capacity(rec.entries.len());
    for e in &rec.entries {
        e.validate(h, w)?;
        parts.push(e.mean_distance() / diag);
    }
    let mean = parts.iter().sum::<f64>() / parts.len() as f64;
    Ok((parts, mean))
}

/// Normalized average attention distance of a record over an `h × w` image.
pub fn attn_distance(rec: &AttnRecord, h: usize, w: usize) -> Result<f64> {
    Ok(attn_distance_components(rec, h, w)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid(h: usize, w: usize) -> Vec<(f64, f64)> {
        (0..h * w).map(|p| ((p / w) as f64, (p % w) as f64)).collect()
    }

    fn single(h: usize, w: usize, weights: Vec<f64>) -> AttnRecord {
        let n = h * w;
        AttnRecord {
            entries: vec![AttnEntry {
                scale: 0,
                block: "b".into(),
                branch: Branch::Shifted,
                head: 0,
                queries_per_window: n,
                keys_per_window: n,
                query_pos: grid(h, w),
                key_pos: grid(h, w),
                weights,
            }],
        }
    }

    #[test]
    fn identity_is_zero() {
        let w = (0..16).flat_map(|q| (0..16).map(move |k| if q == k { 1.0 } else { 0.0 })).collect();
        assert_eq!(attn_distance(&single(4, 4, w), 4, 4).unwrap(), 0.0);
    }

    #[test]
    fn uniform_two_by_two() {
        let d = attn_distance(&single(2, 2, vec![0.25; 16]), 2, 2).unwrap();
        let want = (2.0 + core::f64::consts::SQRT_2) / 4.0 / 8f64.sqrt();
        assert!((d - want).abs() < 1e-15);
        assert!((d - 0.30178).abs() < 1e-5);
    }

    #[test]
    fn farthest_corner_is_one() {
        let rec = AttnRecord {
            entries: vec![AttnEntry {
                scale: 0,
                block: "b".into(),
                branch: Branch::Routed,
                head: 0,
                queries_per_window: 1,
                keys_per_window: 1,
                query_pos: vec![(0.0, 0.0)],
                key_pos: vec![(3.0, 4.0)],
                weights: vec![1.0],
            }],
        };
        assert_eq!(attn_distance(&rec, 3, 4).unwrap(), 1.0);
        assert!(attn_distance(&rec, 2, 4).is_err());
    }

    #[test]
    fn empty_and_bad_rows_rejected() {
        assert!(attn_distance(&AttnRecord::default(), 2, 2).is_err());
        assert!(attn_distance(&single(2, 2, vec![0.3; 16]), 2, 2).is_err());
    }
}
