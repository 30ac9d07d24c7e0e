//! Brute-force reference implementations used by the test suites.
//!
//! Everything here is written with explicit loops over pixels and does not
//! call into the windowing, routing or gather machinery it is compared
//! against.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{AttentionConfig, QkvMode};
use crate::tensor::Tensor;
use crate::windowing::{RegionKind, RegionShape};

/// Plain-tensor attention branch parameters. `candidate_bias` is empty for
/// shifted window attention, which uses `center_bias` as its only table.
#[derive(Debug, Clone)]
pub struct BranchParams {
    pub qkv: Option<(Tensor, Tensor)>,
    pub proj: (Tensor, Tensor),
    pub candidate_bias: Tensor,
    pub center_bias: Tensor,
}

type Planes = Vec<Vec<f64>>;

fn planes(x: &Tensor) -> Planes {
    let hw = x.shape()[1] * x.shape()[2];
    x.data().chunks(hw).map(|p| p.to_vec()).collect()
}

/// Pointwise convolution, `weight: [cout, cin, 1, 1]`.
fn pointwise(x: &Planes, weight: &Tensor, bias: &Tensor) -> Planes {
    let (cout, cin) = (weight.shape()[0], weight.shape()[1]);
    let hw = x[0].len();
    (0..cout)
        .map(|o| {
            (0..hw)
                .map(|p| bias.data()[o] + (0..cin).map(|i| weight.data()[o * cin + i] * x[i][p]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn qkv_planes(x: &Tensor, p: &BranchParams, cfg: &AttentionConfig) -> (Planes, Planes, Planes) {
    let xp = planes(x);
    let c = xp.len();
    let (all, d) = match (cfg.qkv, &p.qkv) {
        (QkvMode::Project, Some((w, b))) => (pointwise(&xp, w, b), c),
        (QkvMode::Split, _) => (xp, c / 3),
        _ => panic!("projection weights missing"),
    };
    (all[..d].to_vec(), all[d..2 * d].to_vec(), all[2 * d..3 * d].to_vec())
}

fn offsets(shape: RegionShape) -> Vec<(isize, isize)> {
    let r = shape.radius as isize;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let on_axis = dy == 0 || dx == 0;
            let wanted = match shape.kind {
                RegionKind::Cross => on_axis,
                RegionKind::Rectangle => true,
            };
            if wanted && (dy, dx) != (0, 0) {
                v.push((dy, dx));
            }
        }
    }
    v
}

fn softmax(v: &mut [f64]) {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for a in v.iter_mut() {
        *a = libm::exp(*a - mx);
        z += *a;
    }
    for a in v.iter_mut() {
        *a /= z;
    }
}

fn rel_entry(k: usize, q: (usize, usize), p: (usize, usize)) -> usize {
    let ry = q.0 + k - 1 - p.0;
    let rx = q.1 + k - 1 - p.1;
    ry * (2 * k - 1) + rx
}

struct Routed {
    /// Per window: `(selected slot, source window (i, j))`, best first.
    picks: Vec<Vec<(usize, (usize, usize))>>,
}

fn route_loops(q: &Planes, kp: &Planes, h: usize, w: usize, cfg: &AttentionConfig) -> Routed {
    let k = cfg.window;
    let (sh, sw) = (h / k, w / k);
    let d = q.len();
    let desc = |src: &Planes, i: usize, j: usize| -> Vec<f64> {
        (0..d)
            .map(|c| {
                let mut s = 0.0;
                for y in 0..k {
                    for x in 0..k {
                        s += src[c][(i * k + y) * w + j * k + x];
                    }
                }
                s / (k * k) as f64
            })
            .collect()
    };
    let offs = offsets(cfg.region);
    let mut picks = Vec::new();
    for i in 0..sh {
        for j in 0..sw {
            let qd = desc(q, i, j);
            let cands: Vec<(usize, usize)> = offs
                .iter()
                .map(|&(dy, dx)| {
                    let ci = (i as isize + dy).max(0).min(sh as isize - 1) as usize;
                    let cj = (j as isize + dx).max(0).min(sw as isize - 1) as usize;
                    (ci, cj)
                })
                .collect();
            let mut sim: Vec<f64> = cands
                .iter()
                .map(|&(ci, cj)| {
                    let kd = desc(kp, ci, cj);
                    qd.iter().zip(&kd).map(|(a, b)| a * b).sum()
                })
                .collect();
            softmax(&mut sim);
            let mut order: Vec<usize> = (0..cands.len()).collect();
            // stable: equal similarities keep ascending slot order
            order.sort_by(|&a, &b| sim[b].partial_cmp(&sim[a]).unwrap());
            picks.push(order[..cfg.select].iter().map(|&s| (s, cands[s])).collect());
        }
    }
    Routed { picks }
}

/// Keys of one query: `(pixel, bias)` pairs.
type KeyList = Vec<(usize, f64)>;

fn attend_loops<F>(q: &Planes, kp: &Planes, v: &Planes, m: usize, hw: usize, keys_of: F) -> Planes
where
    F: Fn(usize, usize) -> KeyList,
{
    let d = q.len();
    let n = d / m;
    let scale = 1.0 / libm::sqrt(n as f64);
    let mut out = vec![vec![0.0; hw]; d];
    for head in 0..m {
        for qp in 0..hw {
            let keys = keys_of(head, qp);
            let mut logits: Vec<f64> = keys
                .iter()
                .map(|&(kpix, b)| {
                    let dot: f64 = (0..n).map(|e| q[head * n + e][qp] * kp[head * n + e][kpix]).sum();
                    dot * scale + b
                })
                .collect();
            softmax(&mut logits);
            for e in 0..n {
                out[head * n + e][qp] = keys.iter().zip(&logits).map(|(&(kpix, _), a)| a * v[head * n + e][kpix]).sum();
            }
        }
    }
    out
}

fn finish(o: &Planes, p: &BranchParams, h: usize, w: usize) -> Tensor {
    let y = pointwise(o, &p.proj.0, &p.proj.1);
    Tensor::new(&[y.len(), h, w], y.concat()).unwrap()
}

/// Routed window attention by explicit routing, key gathering and softmax.
pub fn rwam_loops(x: &Tensor, p: &BranchParams, cfg: &AttentionConfig) -> Tensor {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let k = cfg.window;
    let (q, kp, v) = qkv_planes(x, p, cfg);
    let routed = route_loops(&q, &kp, h, w, cfg);
    let len = (2 * k - 1) * (2 * k - 1);
    let m = cfg.heads;
    let o = attend_loops(&q, &kp, &v, m, h * w, |head, qp| {
        let (y, x) = (qp / w, qp % w);
        let (i, j) = (y / k, x / k);
        let local = (y % k, x % k);
        let mut keys = Vec::new();
        let mut push_window = |ci: usize, cj: usize, table: &[f64]| {
            for py in 0..k {
                for px in 0..k {
                    let pix = (ci * k + py) * w + cj * k + px;
                    keys.push((pix, table[rel_entry(k, local, (py, px))]));
                }
            }
        };
        for &(slot, (ci, cj)) in &routed.picks[i * (w / k) + j] {
            let off = (slot * m + head) * len;
            push_window(ci, cj, &p.candidate_bias.data()[off..off + len]);
        }
        push_window(i, j, &p.center_bias.data()[head * len..(head + 1) * len]);
        keys
    });
    finish(&o, p, h, w)
}

/// Whole-image formulation of routed attention: every query scores every
/// pixel of the image once, and a key window reached through several routes
/// gets the log-sum-exp of those routes' biases. Windows reached by no route
/// are skipped.
pub fn rwam_dense(x: &Tensor, p: &BranchParams, cfg: &AttentionConfig) -> Tensor {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let k = cfg.window;
    let (q, kp, v) = qkv_planes(x, p, cfg);
    let routed = route_loops(&q, &kp, h, w, cfg);
    let len = (2 * k - 1) * (2 * k - 1);
    let m = cfg.heads;
    let o = attend_loops(&q, &kp, &v, m, h * w, |head, qp| {
        let (y, x) = (qp / w, qp % w);
        let (i, j) = (y / k, x / k);
        let local = (y % k, x % k);
        let picks = &routed.picks[i * (w / k) + j];
        let mut keys = Vec::new();
        for kpix in 0..h * w {
            let (ky, kx) = (kpix / w, kpix % w);
            let (ui, uj) = (ky / k, kx / k);
            let e = rel_entry(k, local, (ky % k, kx % k));
            let mut routes: Vec<f64> = picks
                .iter()
                .filter(|&&(_, src)| src == (ui, uj))
                .map(|&(slot, _)| p.candidate_bias.data()[(slot * m + head) * len + e])
                .collect();
            if (ui, uj) == (i, j) {
                routes.push(p.center_bias.data()[head * len + e]);
            }
            if routes.is_empty() {
                continue;
            }
            let mx = routes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + libm::log(routes.iter().map(|b| libm::exp(b - mx)).sum::<f64>());
            keys.push((kpix, lse));
        }
        keys
    });
    finish(&o, p, h, w)
}

/// Shifted window attention by explicit roll, per-window loops with a
/// slice-labelled mask, and inverse roll.
pub fn swam_loops(x: &Tensor, p: &BranchParams, cfg: &AttentionConfig) -> Tensor {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let (k, s, m) = (cfg.window, cfg.shift, cfg.heads);
    let (q, kp, v) = qkv_planes(x, p, cfg);
    let roll = |src: &Planes| -> Planes {
        src.iter()
            .map(|pl| (0..h * w).map(|i| pl[((i / w + s) % h) * w + (i % w + s) % w]).collect())
            .collect()
    };
    let (qr, kr, vr) = (roll(&q), roll(&kp), roll(&v));
    let label = |pos: usize, n: usize| -> usize {
        if s == 0 || pos < n - k {
            0
        } else if pos < n - s {
            1
        } else {
            2
        }
    };
    let len = (2 * k - 1) * (2 * k - 1);
    let o = attend_loops(&qr, &kr, &vr, m, h * w, |head, qp| {
        let (y, x) = (qp / w, qp % w);
        let (i, j) = (y / k, x / k);
        let ql = (label(y, h), label(x, w));
        let mut keys = Vec::new();
        for py in 0..k {
            for px in 0..k {
                let (ky, kx) = (i * k + py, j * k + px);
                let mut b = p.center_bias.data()[head * len + rel_entry(k, (y % k, x % k), (py, px))];
                if (label(ky, h), label(kx, w)) != ql {
                    b += -100.0;
                }
                keys.push((ky * w + kx, b));
            }
        }
        keys
    });
    let mut back = vec![vec![0.0; h * w]; o.len()];
    for (c, pl) in o.iter().enumerate() {
        for (i, &val) in pl.iter().enumerate() {
            back[c][((i / w + s) % h) * w + (i % w + s) % w] = val;
        }
    }
    finish(&back, p, h, w)
}
