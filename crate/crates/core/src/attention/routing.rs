//! Window router: window descriptors, regional similarity, top-k selection
//! and relative-to-absolute index remapping.
//!
//! Routing is hard: selection is computed from detached values and the
//! similarity matrix never enters the tape.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;
use crate::windowing::IndexTable;

/// Output of the router for one feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterSelection {
    pub s_h: usize,
    pub s_w: usize,
    pub r_n: usize,
    pub r_i: usize,
    /// Regional similarity, `[s_h, s_w, r_n]`.
    pub similarity: Tensor,
    /// Selected candidate slots per window, `s_h·s_w·r_i`, best first.
    pub relative: Vec<usize>,
    /// Selected absolute window indices, same layout as `relative`.
    pub absolute: Vec<usize>,
}

impl RouterSelection {
    pub fn relative_of(&self, win: usize) -> &[usize] {
        &self.relative[win * self.r_i..(win + 1) * self.r_i]
    }

    pub fn absolute_of(&self, win: usize) -> &[usize] {
        &self.absolute[win * self.r_i..(win + 1) * self.r_i]
    }
}

fn mean_last(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim("window_descriptors", s, &[0, 0, 0, 0]));
    }
    let n = s[3];
    let data = x.data().chunks(n).map(|c| c.iter().sum::<f64>() / n as f64).collect();
    Tensor::new(&s[..3], data)
}

/// Mean over the token axis of `[s_h, s_w, d, k²]` window tensors.
pub fn window_descriptors(q_windows: &Tensor, k_windows: &Tensor) -> Result<(Tensor, Tensor)> {
    if q_windows.shape() != k_windows.shape() {
        return Err(Error::dim("window_descriptors", q_windows.shape(), k_windows.shape()));
    }
    Ok((mean_last(q_windows)?, mean_last(k_windows)?))
}

/// `H(i,j,·) = softmax over candidates of ⟨Q_r(i,j), K_r(candidate)⟩`.
pub fn regional_similarity(q_r: &Tensor, k_r: &Tensor, table: &IndexTable) -> Result<Tensor> {
    let s = q_r.shape();
    if s.len() != 3 || k_r.shape() != s || s[0] != table.s_h || s[1] != table.s_w {
        return Err(Error::dim("regional_similarity", s, k_r.shape()));
    }
    let d = s[2];
    let windows = s[0] * s[1];
    let mut logits = Vec::with_capacity(windows * table.r_n);
    for win in 0..windows {
        let q = &q_r.data()[win * d..(win + 1) * d];
        for &cand in table.row(win) {
            let k = &k_r.data()[cand * d..(cand + 1) * d];
            logits.push(q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("regional similarity"));
    }
    Tensor::new(&[s[0], s[1], table.r_n], kernels::softmax_rows(&logits, table.r_n))
}

/// Per window, the `r_i` slots with the largest similarity, ordered by
/// descending similarity with ties going to the lower slot.
pub fn topk_select(similarity: &Tensor, r_i: usize) -> Result<Vec<usize>> {
    let s = similarity.shape();
    if s.len() != 3 {
        return Err(Error::dim("topk_select", s, &[0, 0, 0]));
    }
    let r_n = s[2];
    if r_i == 0 || r_i > r_n {
        return Err(Error::config("selected window count must satisfy 1 <= r_i <= r_n"));
    }
    let mut out = Vec::with_capacity(s[0] * s[1] * r_i);
    let mut order: Vec<usize> = Vec::with_capacity(r_n);
    for row in similarity.data().chunks(r_n) {
        order.clear();
        order.extend(0..r_n);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        out.extend_from_slice(&order[..r_i]);
    }
    Ok(out)
}

/// `J(win, t) = table(win, I(win, t))`.
pub fn remap_indices(relative: &[usize], r_i: usize, table: &IndexTable) -> Vec<usize> {
    relative
        .chunks(r_i)
        .enumerate()
        .flat_map(|(win, slots)| slots.iter().map(move |&s| table.row(win)[s]))
        .collect()
}

/// Full routing step from window-partitioned queries and keys.
pub fn route(q_windows: &Tensor, k_windows: &Tensor, table: &IndexTable, r_i: usize) -> Result<RouterSelection> {
    let (q_r, k_r) = window_descriptors(q_windows, k_windows)?;
    let similarity = regional_similarity(&q_r, &k_r, table)?;
    let relative = topk_select(&similarity, r_i)?;
    let absolute = remap_indices(&relative, r_i, table);
    Ok(RouterSelection {
        s_h: table.s_h,
        s_w: table.s_w,
        r_n: table.r_n,
        r_i,
        similarity,
        relative,
        absolute,
    })
}
