//! Routed window attention (RWAM) and shifted window attention (SWAM).
//!
//! Both branches share one attention core: queries come from a window of
//! `k²` tokens, keys/values from a list of key tokens per window, and the
//! per-head logits `Q·Kᵀ/√n + B` are softmax-normalized row-wise. The only
//! difference is how the key list and bias are assembled.

pub mod bias;
pub mod record;
pub mod routing;

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::ops::Conv2dSpec;
use crate::tensor::Tensor;
use crate::windowing::{self, build_index_table, RegionShape, WindowGrid};

pub use bias::{build_bias_matrix, gather_bias, relative_position_index, table_len};
pub use record::{attn_distance, attn_distance_components, AttnEntry, AttnRecord, Branch};
pub use routing::{regional_similarity, remap_indices, route, topk_select, window_descriptors, RouterSelection};

/// Logit added between tokens that come from different regions of the
/// cyclically shifted map.
pub const SHIFT_MASK_VALUE: f64 = -100.0;

/// How queries, keys and values are derived from a branch input of `c`
/// channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QkvMode {
    /// 1×1 projection to `3c` channels, chunked; head width sums to `c`.
    Project,
    /// Split the input channels into three equal chunks (`d = c/3`).
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub window: usize,
    pub heads: usize,
    /// Number of routed windows `r_i` (RWAM only).
    pub select: usize,
    /// Candidate neighbourhood (RWAM only).
    pub region: RegionShape,
    /// Cyclic shift (SWAM only); `0` or `window / 2`.
    pub shift: usize,
    pub qkv: QkvMode,
}

impl AttentionConfig {
    /// Width `d` of Q/K/V for a branch of `channels` inputs.
    pub fn qkv_width(&self, channels: usize) -> Result<usize> {
        match self.qkv {
            QkvMode::Project => Ok(channels),
            QkvMode::Split if channels % 3 == 0 => Ok(channels / 3),
            QkvMode::Split => Err(Error::config("split Q/K/V needs channels divisible by 3")),
        }
    }

    fn check(&self, channels: usize, h: usize, w: usize, routed: bool) -> Result<(usize, WindowGrid)> {
        let d = self.qkv_width(channels)?;
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::config("head count must divide the attention width"));
        }
        if routed && (self.select == 0 || self.select > self.region.candidate_count()) {
            return Err(Error::config("selected window count must satisfy 1 <= r_i <= r_n"));
        }
        if !routed && self.shift != 0 && self.shift != self.window / 2 {
            return Err(Error::config("shift must be 0 or window/2"));
        }
        let grid = WindowGrid::new(h, w, self.window).map_err(|_| Error::config("feature map not divisible by the window size"))?;
        Ok((d, grid))
    }
}

/// Branch parameters on the tape. `qkv` is `None` in [`QkvMode::Split`].
#[derive(Clone, Copy)]
pub struct RwamWeights<'t> {
    pub qkv: Option<(Var<'t>, Var<'t>)>,
    pub proj: (Var<'t>, Var<'t>),
    /// `[r_n, m, (2k-1)²]`
    pub candidate_bias: Var<'t>,
    /// `[m, (2k-1)²]`
    pub center_bias: Var<'t>,
}

#[derive(Clone, Copy)]
pub struct SwamWeights<'t> {
    pub qkv: Option<(Var<'t>, Var<'t>)>,
    pub proj: (Var<'t>, Var<'t>),
    /// `[m, (2k-1)²]`
    pub bias: Var<'t>,
}

/// Attention weights of one branch evaluation, for analysis.
#[derive(Debug, Clone)]
pub struct AttnTrace {
    pub heads: usize,
    pub windows: usize,
    pub queries: usize,
    pub keys: usize,
    /// Width of the feature map; pixel ids below are `y·width + x`.
    pub width: usize,
    pub query_pixels: Vec<usize>,
    pub key_pixels: Vec<usize>,
    /// `[windows, heads, queries, keys]`
    pub probs: Rc<Tensor>,
}

/// Result of an attention branch.
pub struct BranchOutput<'t> {
    pub out: Var<'t>,
    pub trace: AttnTrace,
    pub selection: Option<RouterSelection>,
}

fn qkv<'t>(x: Var<'t>, w: Option<(Var<'t>, Var<'t>)>, d: usize) -> Result<[Var<'t>; 3]> {
    let src = match w {
        Some((wt, b)) => x.conv2d(wt, Some(b), Conv2dSpec::default())?,
        None => x,
    };
    Ok([src.narrow0(0, d)?, src.narrow0(d, d)?, src.narrow0(2 * d, d)?])
}

/// `[d, h·w]` -> `[windows, m, per_window, n]` index for token pixel lists.
fn head_index(d: usize, hw: usize, m: usize, pixels: &[usize], per_window: usize) -> Vec<usize> {
    let n = d / m;
    let windows = pixels.len() / per_window;
    let mut idx = Vec::with_capacity(windows * d * per_window);
    for win in 0..windows {
        let px = &pixels[win * per_window..(win + 1) * per_window];
        for head in 0..m {
            for &p in px {
                idx.extend((0..n).map(|e| (head * n + e) * hw + p));
            }
        }
    }
    idx
}

/// Inverse of [`head_index`] for query tokens covering every pixel once.
fn merge_index(d: usize, hw: usize, m: usize, pixels: &[usize], per_window: usize) -> Vec<usize> {
    let n = d / m;
    let mut idx = vec![0; d * hw];
    for (slot, &p) in pixels.iter().enumerate() {
        let (win, t) = (slot / per_window, slot % per_window);
        for head in 0..m {
            for e in 0..n {
                idx[(head * n + e) * hw + p] = ((win * m + head) * per_window + t) * n + e;
            }
        }
    }
    idx
}

#[allow(clippy::too_many_arguments)]
fn attend<'t>(
    [q, k, v]: [Var<'t>; 3],
    m: usize,
    grid: &WindowGrid,
    query_pixels: Vec<usize>,
    key_pixels: Vec<usize>,
    bias: Var<'t>,
    proj: (Var<'t>, Var<'t>),
) -> Result<(Var<'t>, AttnTrace)> {
    let d = q.shape()[0];
    let n = d / m;
    let (hw, windows, t) = (grid.h * grid.w, grid.num_windows(), grid.tokens());
    let l = key_pixels.len() / windows;
    let qh = q.gather(head_index(d, hw, m, &query_pixels, t), &[windows, m, t, n])?;
    let kidx = head_index(d, hw, m, &key_pixels, l);
    let kg = k.gather(kidx.clone(), &[windows, m, l, n])?;
    let vg = v.gather(kidx, &[windows, m, l, n])?;
    let logits = qh.matmul_nt(kg)?.scale(1.0 / libm::sqrt(n as f64)).add(bias)?;
    let probs = logits.softmax_last()?;
    let o = probs.matmul(vg)?;
    let merged = o.gather(merge_index(d, hw, m, &query_pixels, t), &[d, grid.h, grid.w])?;
    let out = merged.conv2d(proj.0, Some(proj.1), Conv2dSpec::default())?;
    let trace = AttnTrace {
        heads: m,
        windows,
        queries: t,
        keys: l,
        width: grid.w,
        query_pixels,
        key_pixels,
        probs: probs.value(),
    };
    Ok((out, trace))
}

fn window_pixels(grid: &WindowGrid, win: usize) -> impl Iterator<Item = usize> + '_ {
    (0..grid.tokens()).map(move |t| {
        let (y, x) = grid.pixel(win, t);
        y * grid.w + x
    })
}

/// Routes every window of `q`/`k` (`[d, h, w]` values) to its neighbours.
pub fn route_feature_map(q: &Tensor, k: &Tensor, cfg: &AttentionConfig) -> Result<RouterSelection> {
    let grid = WindowGrid::new(q.shape()[1], q.shape()[2], cfg.window)?;
    let table = build_index_table(&grid, cfg.region);
    let qw = windowing::partition(q, cfg.window)?;
    let kw = windowing::partition(k, cfg.window)?;
    route(&qw, &kw, &table, cfg.select)
}

/// Routed window attention on a branch input `[c, h, w]`.
pub fn rwam_forward<'t>(x: Var<'t>, w: &RwamWeights<'t>, cfg: &AttentionConfig) -> Result<Var<'t>> {
    Ok(rwam_apply(x, w, cfg, None)?.out)
}

/// Routed window attention; when `selection` is given it replaces the
/// router's own choice.
pub fn rwam_apply<'t>(x: Var<'t>, w: &RwamWeights<'t>, cfg: &AttentionConfig, selection: Option<RouterSelection>) -> Result<BranchOutput<'t>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::dim("rwam", &shape, &[0, 0, 0]));
    }
    let (d, grid) = cfg.check(shape[0], shape[1], shape[2], true)?;
    let m = cfg.heads;
    let parts = qkv(x, w.qkv, d)?;
    let sel = match selection {
        Some(s) => s,
        None => route_feature_map(&parts[0].value(), &parts[1].value(), cfg)?,
    };
    let r_i = sel.r_i;
    let r_n = cfg.region.candidate_count();
    let windows = grid.num_windows();
    if sel.relative.len() != windows * r_i {
        return Err(Error::config("router selection does not match the window grid"));
    }

    let query_pixels: Vec<usize> = (0..windows).flat_map(|win| window_pixels(&grid, win)).collect();
    let mut key_pixels = Vec::with_capacity(windows * (r_i + 1) * grid.tokens());
    for win in 0..windows {
        for &src in sel.absolute_of(win) {
            key_pixels.extend(window_pixels(&grid, src));
        }
        key_pixels.extend(window_pixels(&grid, win));
    }

    let flat_tables = Var::cat0(&[
        w.candidate_bias.reshape(&[r_n * m * table_len(cfg.window)])?,
        w.center_bias.reshape(&[m * table_len(cfg.window)])?,
    ])?;
    let bidx = bias::gather_bias_index(r_n, m, cfg.window, &sel.relative, r_i);
    let kk = grid.tokens();
    let bg = flat_tables.gather(bidx, &[windows, m, kk, (r_i + 1) * kk])?;

    let (out, trace) = attend(parts, m, &grid, query_pixels, key_pixels, bg, w.proj)?;
    Ok(BranchOutput {
        out,
        trace,
        selection: Some(sel),
    })
}

/// Region label of each position along one axis of the shifted map.
fn shift_region(pos: usize, len: usize, k: usize, shift: usize) -> usize {
    if pos + k < len {
        0
    } else if pos + shift < len {
        1
    } else {
        2
    }
}

/// Mask `[windows, k², k²]` for shifted windows: 0 within a region,
/// [`SHIFT_MASK_VALUE`] across regions.
pub fn shift_mask(grid: &WindowGrid, shift: usize) -> Tensor {
    let kk = grid.tokens();
    let mut data = Vec::with_capacity(grid.num_windows() * kk * kk);
    for win in 0..grid.num_windows() {
        let labels: Vec<usize> = (0..kk)
            .map(|t| {
                let (y, x) = grid.pixel(win, t);
                shift_region(y, grid.h, grid.k, shift) * 3 + shift_region(x, grid.w, grid.k, shift)
            })
            .collect();
        for &a in &labels {
            data.extend(labels.iter().map(|&b| if a == b { 0.0 } else { SHIFT_MASK_VALUE }));
        }
    }
    Tensor::new(&[grid.num_windows(), kk, kk], data).expect("mask shape")
}

/// Shifted window self-attention on a branch input `[c, h, w]`.
pub fn swam_forward<'t>(x: Var<'t>, w: &SwamWeights<'t>, cfg: &AttentionConfig) -> Result<Var<'t>> {
    Ok(swam_apply(x, w, cfg)?.out)
}

pub fn swam_apply<'t>(x: Var<'t>, w: &SwamWeights<'t>, cfg: &AttentionConfig) -> Result<BranchOutput<'t>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::dim("swam", &shape, &[0, 0, 0]));
    }
    let (d, grid) = cfg.check(shape[0], shape[1], shape[2], false)?;
    let m = cfg.heads;
    let s = cfg.shift;
    let parts = qkv(x, w.qkv, d)?;
    let windows = grid.num_windows();
    let kk = grid.tokens();
    // Token (win, t) of the shifted map sits at original pixel (y+s, x+s) mod (h, w).
    let pixels: Vec<usize> = (0..windows)
        .flat_map(|win| {
            (0..kk).map(move |t| {
                let (y, xx) = grid.pixel(win, t);
                ((y + s) % grid.h) * grid.w + (xx + s) % grid.w
            })
        })
        .collect();

    let len = table_len(cfg.window);
    let rel = relative_position_index(cfg.window);
    let mut bidx = Vec::with_capacity(windows * m * kk * kk);
    for _ in 0..windows {
        for head in 0..m {
            bidx.extend(rel.iter().map(|&r| head * len + r));
        }
    }
    let mut bias = w.bias.gather(bidx, &[windows, m, kk, kk])?;
    if s > 0 {
        let mask = shift_mask(&grid, s);
        let mut full = Vec::with_capacity(windows * m * kk * kk);
        for win in 0..windows {
            let blk = &mask.data()[win * kk * kk..(win + 1) * kk * kk];
            for _ in 0..m {
                full.extend_from_slice(blk);
            }
        }
        let mask = x.tape().constant(Tensor::new(&[windows, m, kk, kk], full)?);
        bias = bias.add(mask)?;
    }
    let (out, trace) = attend(parts, m, &grid, pixels.clone(), pixels, bias, w.proj)?;
    Ok(BranchOutput {
        out,
        trace,
        selection: None,
    })
}

/// Multiply-accumulates of the routed attention core (`Q·Kᵀ` and `A·V`)
/// for a branch of attention width `d` on an `h × w` map:
/// `2·(r_i+1)·k²·h·w·d`.
pub fn count_attention_macs(cfg: &AttentionConfig, d: usize, h: usize, w: usize) -> u64 {
    let k2 = (cfg.window * cfg.window) as u64;
    2 * (cfg.select as u64 + 1) * k2 * (h * w) as u64 * d as u64
}

/// Same count for shifted window attention, whose key set is one window.
pub fn count_window_attention_macs(cfg: &AttentionConfig, d: usize, h: usize, w: usize) -> u64 {
    2 * (cfg.window * cfg.window) as u64 * (h * w) as u64 * d as u64
}
