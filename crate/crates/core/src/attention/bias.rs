//! Relative position bias tables and their expansion into per-window
//! bias matrices.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side of a relative-coordinate table: `(2k - 1)²` entries.
pub fn table_len(k: usize) -> usize {
    (2 * k - 1) * (2 * k - 1)
}

/// For every `(query token q, key token p)` of a `k × k` window pair, the
/// table entry at `((q_y - p_y) + k - 1, (q_x - p_x) + k - 1)`.
pub fn relative_position_index(k: usize) -> Vec<usize> {
    let kk = k * k;
    let side = 2 * k - 1;
    let mut idx = Vec::with_capacity(kk * kk);
    for q in 0..kk {
        let (qy, qx) = (q / k, q % k);
        for p in 0..kk {
            let (py, px) = (p / k, p % k);
            idx.push((qy + k - 1 - py) * side + (qx + k - 1 - px));
        }
    }
    idx
}

/// `[m, (2k-1)²]` table -> `[m, k², k²]` bias matrix.
pub fn build_bias_matrix(table: &Tensor, k: usize) -> Result<Tensor> {
    let len = table_len(k);
    if table.rank() != 2 || table.shape()[1] != len {
        return Err(Error::dim("build_bias_matrix", table.shape(), &[0, len]));
    }
    let m = table.shape()[0];
    let rel = relative_position_index(k);
    let mut data = Vec::with_capacity(m * rel.len());
    for head in 0..m {
        data.extend(rel.iter().map(|&r| table.data()[head * len + r]));
    }
    Tensor::new(&[m, k * k, k * k], data)
}

/// Index into `concat(flat(B̂), flat(B̂_c))` for every element of
/// `B_g: [windows, m, k², (r_i+1)·k²]`. Key blocks follow the selected slots
/// in order, then the center window.
pub fn gather_bias_index(r_n: usize, m: usize, k: usize, relative: &[usize], r_i: usize) -> Vec<usize> {
    let len = table_len(k);
    let kk = k * k;
    let windows = if r_i == 0 { 0 } else { relative.len() / r_i };
    let rel = relative_position_index(k);
    let center_base = r_n * m * len;
    let keys = (r_i + 1) * kk;
    let mut idx = Vec::with_capacity(windows * m * kk * keys);
    for win in 0..windows {
        let slots = &relative[win * r_i..(win + 1) * r_i];
        for head in 0..m {
            for q in 0..kk {
                for &slot in slots {
                    let base = (slot * m + head) * len;
                    idx.extend(rel[q * kk..(q + 1) * kk].iter().map(|&r| base + r));
                }
                let base = center_base + head * len;
                idx.extend(rel[q * kk..(q + 1) * kk].iter().map(|&r| base + r));
            }
        }
    }
    idx
}

/// Combined bias `B_g: [s_h, s_w, m, k², (r_i+1)·k²]` for routed attention.
pub fn gather_bias(
    candidate_tables: &Tensor,
    center_table: &Tensor,
    relative: &[usize],
    s_h: usize,
    s_w: usize,
    r_i: usize,
    k: usize,
) -> Result<Tensor> {
    let cs = candidate_tables.shape();
    let len = table_len(k);
    if cs.len() != 3 || cs[2] != len || center_table.shape() != [cs[1], len] {
        return Err(Error::dim("gather_bias", cs, center_table.shape()));
    }
    if r_i == 0 || relative.len() != s_h * s_w * r_i || relative.iter().any(|&s| s >= cs[0]) {
        return Err(Error::config("gather_bias: selection does not match the grid"));
    }
    let (r_n, m) = (cs[0], cs[1]);
    let mut flat = candidate_tables.data().to_vec();
    flat.extend_from_slice(center_table.data());
    let idx = gather_bias_index(r_n, m, k, relative, r_i);
    let data = idx.iter().map(|&i| flat[i]).collect();
    Tensor::new(&[s_h, s_w, m, k * k, (r_i + 1) * k * k], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn k1_is_single_value() {
        let t = Tensor::new(&[2, 1], vec![0.3, -0.7]).unwrap();
        let b = build_bias_matrix(&t, 1).unwrap();
        assert_eq!(b.shape(), &[2, 1, 1]);
        assert_eq!(b.data(), &[0.3, -0.7]);
    }

    #[test]
    fn constant_table_constant_matrix() {
        let b = build_bias_matrix(&Tensor::full(&[3, 25], 1.25), 3).unwrap();
        assert!(b.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn k2_matches_coordinate_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Tensor::from_fn(&[2, 9], |_| rng.random_range(-1.0..1.0));
        let b = build_bias_matrix(&t, 2).unwrap();
        let coords = [(0usize, 0usize), (0, 1), (1, 0), (1, 1)];
        for head in 0..2 {
            for (q, &(qy, qx)) in coords.iter().enumerate() {
                for (p, &(py, px)) in coords.iter().enumerate() {
                    let ry = qy as isize - py as isize + 1;
                    let rx = qx as isize - px as isize + 1;
                    let want = t.at(&[head, (ry * 3 + rx) as usize]);
                    assert_eq!(b.at(&[head, q, p]), want);
                }
            }
        }
    }

    #[test]
    fn gather_bias_single_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = 2;
        let cand = Tensor::from_fn(&[4, 1, 9], |_| rng.random_range(-1.0..1.0));
        let center = Tensor::from_fn(&[1, 9], |_| rng.random_range(-1.0..1.0));
        let bg = gather_bias(&cand, &center, &[2], 1, 1, 1, k).unwrap();
        let b2 = build_bias_matrix(&cand.slice0(2, 3).reshape(&[1, 9]).unwrap(), k).unwrap();
        let bc = build_bias_matrix(&center, k).unwrap();
        for q in 0..4 {
            for p in 0..4 {
                assert_eq!(bg.at(&[0, 0, 0, q, p]), b2.at(&[0, q, p]));
                assert_eq!(bg.at(&[0, 0, 0, q, 4 + p]), bc.at(&[0, q, p]));
            }
        }
    }

    #[test]
    fn zero_tables_zero_bias() {
        let bg = gather_bias(&Tensor::zeros(&[4, 2, 9]), &Tensor::zeros(&[2, 9]), &[0, 1, 2, 3], 2, 2, 1, 2).unwrap();
        assert!(bg.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gather_bias_matches_index_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let k = rng.random_range(1..4);
            let (r_n, m) = (rng.random_range(1..9), rng.random_range(1..3));
            let r_i = rng.random_range(1..=r_n);
            let (sh, sw) = (rng.random_range(1..3), rng.random_range(1..3));
            let len = table_len(k);
            let cand = Tensor::from_fn(&[r_n, m, len], |_| rng.random_range(-1.0..1.0));
            let center = Tensor::from_fn(&[m, len], |_| rng.random_range(-1.0..1.0));
            let rel: Vec<usize> = (0..sh * sw * r_i).map(|_| rng.random_range(0..r_n)).collect();
            let bg = gather_bias(&cand, &center, &rel, sh, sw, r_i, k).unwrap();
            let kk = k * k;
            for i in 0..sh {
                for j in 0..sw {
                    let win = i * sw + j;
                    for head in 0..m {
                        for q in 0..kk {
                            for blk in 0..=r_i {
                                for p in 0..kk {
                                    let ry = (q / k) as isize - (p / k) as isize + k as isize - 1;
                                    let rx = (q % k) as isize - (p % k) as isize + k as isize - 1;
                                    let e = (ry * (2 * k as isize - 1) + rx) as usize;
                                    let want = if blk < r_i {
                                        cand.at(&[rel[win * r_i + blk], head, e])
                                    } else {
                                        center.at(&[head, e])
                                    };
                                    assert_eq!(bg.at(&[i, j, head, q, blk * kk + p]), want);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
