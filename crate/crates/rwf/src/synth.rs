//! Synthetic degraded/clean pairs for smoke runs and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwf_core::Tensor;

/// Clean image: per channel, 0.5 plus three random low-frequency,
/// low-contrast plane waves, clamped to `[0, 1]`.
pub fn smooth_image(h: usize, w: usize, rng: &mut impl Rng) -> Tensor {
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            [
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.005..0.0375),
            ]
        })
        .collect();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        let mut v = 0.5;
        for [fy, fx, phase, amp] in waves.iter().skip(c).step_by(3) {
            let t = std::f64::consts::TAU * (fy * y as f64 / h as f64 + fx * x as f64 / w as f64);
            v += amp * (t + phase).sin();
        }
        v.clamp(0.0, 1.0)
    })
}

/// 3×3 box blur with edge replication.
pub fn box_blur(t: &Tensor) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let p = t.plane(ch);
        let mut s = 0.0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                s += p[clamp(y as isize + dy, h) * w + clamp(x as isize + dx, w)];
            }
        }
        s / 9.0
    })
}

/// Blur then halve the contrast around mid-grey.
pub fn degrade(clean: &Tensor) -> Tensor {
    box_blur(clean).map(|v| 0.5 * v + 0.25)
}

/// `n` pairs `(degraded, clean)` of size `size × size`.
pub fn synthetic_pairs(n: usize, size: usize, seed: u64) -> Vec<(Tensor, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let clean = smooth_image(size, size, &mut rng);
            (degrade(&clean), clean)
        })
        .collect()
}
