//! Non-overlapping window partitioning and the candidate-window index table.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tiling of an `h × w` plane into `k × k` windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGrid {
    pub k: usize,
    pub s_h: usize,
    pub s_w: usize,
    pub h: usize,
    pub w: usize,
}

impl WindowGrid {
    pub fn new(h: usize, w: usize, k: usize) -> Result<Self> {
        if k == 0 || h == 0 || w == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::dim("window grid", &[h, w], &[k]));
        }
        Ok(WindowGrid {
            k,
            s_h: h / k,
            s_w: w / k,
            h,
            w,
        })
    }

    pub fn num_windows(&self) -> usize {
        self.s_h * self.s_w
    }

    pub fn tokens(&self) -> usize {
        self.k * self.k
    }

    pub fn flat(&self, i: usize, j: usize) -> usize {
        i * self.s_w + j
    }

    pub fn coords(&self, flat: usize) -> (usize, usize) {
        (flat / self.s_w, flat % self.s_w)
    }

    /// Pixel `(y, x)` of token `t` in window `win`.
    pub fn pixel(&self, win: usize, t: usize) -> (usize, usize) {
        let (i, j) = self.coords(win);
        (i * self.k + t / self.k, j * self.k + t % self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Cross,
    Rectangle,
}

/// Neighbourhood of candidate windows around a center window, in window units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionShape {
    pub kind: RegionKind,
    pub radius: usize,
}

impl RegionShape {
    pub fn new(kind: RegionKind, radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(Error::config("region radius must be at least 1"));
        }
        Ok(RegionShape { kind, radius })
    }

    pub fn cross(radius: usize) -> Self {
        RegionShape {
            kind: RegionKind::Cross,
            radius,
        }
    }

    pub fn rectangle(radius: usize) -> Self {
        RegionShape {
            kind: RegionKind::Rectangle,
            radius,
        }
    }

    /// Number of candidate windows `r_n`.
    pub fn candidate_count(&self) -> usize {
        match self.kind {
            RegionKind::Cross => 4 * self.radius,
            RegionKind::Rectangle => (2 * self.radius + 1) * (2 * self.radius + 1) - 1,
        }
    }
}

/// Window offsets `(dy, dx)` of the candidates, sorted by `(dy, dx)`,
/// never including `(0, 0)`.
pub fn candidate_offsets(shape: RegionShape) -> Vec<(isize, isize)> {
    let r = shape.radius as isize;
    let mut out = Vec::with_capacity(shape.candidate_count());
    for dy in -r..=r {
        for dx in -r..=r {
            if (dy, dx) == (0, 0) {
                continue;
            }
            let keep = match shape.kind {
                RegionKind::Cross => dy == 0 || dx == 0,
                RegionKind::Rectangle => true,
            };
            if keep {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Absolute flat window index for every `(center window, candidate slot)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTable {
    pub s_h: usize,
    pub s_w: usize,
    pub r_n: usize,
    entries: Vec<usize>,
}

impl IndexTable {
    pub fn get(&self, i: usize, j: usize, slot: usize) -> usize {
        self.entries[(i * self.s_w + j) * self.r_n + slot]
    }

    /// Candidate windows of center window `flat`.
    pub fn row(&self, flat: usize) -> &[usize] {
        &self.entries[flat * self.r_n..(flat + 1) * self.r_n]
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }
}

/// Candidate coordinates are clamped to the grid, so windows near a border
/// may list the same neighbour (or themselves) more than once.
pub fn build_index_table(grid: &WindowGrid, shape: RegionShape) -> IndexTable {
    let offsets = candidate_offsets(shape);
    let mut entries = Vec::with_capacity(grid.num_windows() * offsets.len());
    for i in 0..grid.s_h {
        for j in 0..grid.s_w {
            for &(dy, dx) in &offsets {
                let ci = (i as isize + dy).clamp(0, grid.s_h as isize - 1) as usize;
                let cj = (j as isize + dx).clamp(0, grid.s_w as isize - 1) as usize;
                entries.push(grid.flat(ci, cj));
            }
        }
    }
    IndexTable {
        s_h: grid.s_h,
        s_w: grid.s_w,
        r_n: offsets.len(),
        entries,
    }
}

/// Flat source index (into `[c, h, w]`) for each element of the
/// `[s_h, s_w, c, k²]` window layout.
pub fn partition_index(c: usize, grid: &WindowGrid) -> Vec<usize> {
    let kk = grid.tokens();
    let mut idx = Vec::with_capacity(c * grid.h * grid.w);
    for win in 0..grid.num_windows() {
        for ch in 0..c {
            for t in 0..kk {
                let (y, x) = grid.pixel(win, t);
                idx.push((ch * grid.h + y) * grid.w + x);
            }
        }
    }
    idx
}

/// `[c, h, w] -> [s_h, s_w, c, k²]`; window `(i, j)` holds rows
/// `[i·k, (i+1)·k)` and columns `[j·k, (j+1)·k)` flattened row-major.
pub fn partition(x: &Tensor, k: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::dim("partition", x.shape(), &[k]));
    }
    let c = x.shape()[0];
    let grid = WindowGrid::new(x.shape()[1], x.shape()[2], k)?;
    let data = partition_index(c, &grid).iter().map(|&i| x.data()[i]).collect();
    Tensor::new(&[grid.s_h, grid.s_w, c, k * k], data)
}

/// Inverse of [`partition`].
pub fn merge(windows: &Tensor, k: usize, h: usize, w: usize) -> Result<Tensor> {
    let grid = WindowGrid::new(h, w, k)?;
    let s = windows.shape();
    if s.len() != 4 || s[0] != grid.s_h || s[1] != grid.s_w || s[3] != k * k {
        return Err(Error::dim("merge", s, &[grid.s_h, grid.s_w, 0, k * k]));
    }
    let c = s[2];
    let mut out = vec![0.0; c * h * w];
    for (src, &dst) in windows.data().iter().zip(&partition_index(c, &grid)) {
        out[dst] = *src;
    }
    Tensor::new(&[c, h, w], out)
}

/// Source index map for edge-replication padding of `[c, h, w]` up to
/// `[c, ph, pw]` (padding on the bottom and right).
pub fn pad_edge_index(c: usize, h: usize, w: usize, ph: usize, pw: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                idx.push((ch * h + y.min(h - 1)) * w + x.min(w - 1));
            }
        }
    }
    idx
}

/// Index map for a top-left crop of `[c, h, w]` to `[c, oh, ow]`.
pub fn crop_index(c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<usize> {
    debug_assert!(oh <= h && ow <= w);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                idx.push((ch * h + y) * w + x);
            }
        }
    }
    idx
}

/// Smallest multiple of `m` that is `>= n`.
pub fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}
