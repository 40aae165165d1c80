//! Independent reference implementations shared by the integration tests and
//! the acceptance suite. Each one is the slow, obvious version of a library
//! routine.
#![allow(dead_code)]

use layerlens::image::{Connectivity, Image};
use layerlens::BinaryMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pixels on a 1/4096 grid in `[0, levels/4096)`, so sums are exact.
pub fn grid_image(h: usize, w: usize, levels: u32, r: &mut ChaCha8Rng) -> Image {
    Image::from_fn(h, w, |_, _| r.random_range(0..levels) as f32 / 4096.0)
}

pub fn random_mask(h: usize, w: usize, density: f64, r: &mut ChaCha8Rng) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| r.random_bool(density))
}

/// Otsu by trying every interior edge and partitioning the pixel list
/// directly. Ties go to the smallest edge.
pub fn otsu_exhaustive(img: &Image, bins: usize) -> Option<f64> {
    let px: Vec<f64> = img.pixels().iter().map(|&v| v as f64).collect();
    let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return None;
    }
    let delta = (hi - lo) / bins as f64;
    let mut best: Option<(f64, f64)> = None;
    for k in 1..bins {
        let t = lo + k as f64 * delta;
        let (bg, fg): (Vec<f64>, Vec<f64>) = px.iter().partition(|&&v| v <= t);
        if bg.is_empty() || fg.is_empty() {
            continue;
        }
        let n = px.len() as f64;
        let m0 = bg.iter().sum::<f64>() / bg.len() as f64;
        let m1 = fg.iter().sum::<f64>() / fg.len() as f64;
        let var = (bg.len() as f64 / n) * (fg.len() as f64 / n) * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(v, _)| var > v) {
            best = Some((var, t));
        }
    }
    best.map(|(_, t)| t)
}

/// Between-class variance of the split at `t`.
pub fn between_class_variance(img: &Image, t: f64) -> f64 {
    let px: Vec<f64> = img.pixels().iter().map(|&v| v as f64).collect();
    let (bg, fg): (Vec<f64>, Vec<f64>) = px.iter().partition(|&&v| v <= t);
    if bg.is_empty() || fg.is_empty() {
        return 0.0;
    }
    let n = px.len() as f64;
    let m0 = bg.iter().sum::<f64>() / bg.len() as f64;
    let m1 = fg.iter().sum::<f64>() / fg.len() as f64;
    (bg.len() as f64 / n) * (fg.len() as f64 / n) * (m0 - m1) * (m0 - m1)
}

/// Stack-based flood fill, labels in raster order of first pixel.
pub fn flood_fill_labels(mask: &BinaryMask, conn: Connectivity) -> (Vec<u32>, usize) {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    };
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) || labels[r * w + c] != 0 {
                continue;
            }
            next += 1;
            let mut stack = vec![(r, c)];
            labels[r * w + c] = next;
            while let Some((y, x)) = stack.pop() {
                for &(dy, dx) in offsets {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let (ny, nx) = (ny as usize, nx as usize);
                    if mask.get(ny, nx) && labels[ny * w + nx] == 0 {
                        labels[ny * w + nx] = next;
                        stack.push((ny, nx));
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Per-pixel median by sorting the pixel's values across frames.
pub fn median_by_sort(frames: &[Image]) -> Image {
    let (h, w) = frames[0].dims();
    Image::from_fn(h, w, |r, c| {
        let mut v: Vec<f32> = frames.iter().map(|f| f.get(r, c)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            ((v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0) as f32
        }
    })
}

/// Local mean threshold in exact integer arithmetic. Pixels and `offset` must
/// be multiples of 1/4096; borders replicate the edge pixel.
pub fn local_threshold_exact(img: &Image, window: usize, offset: f64) -> BinaryMask {
    let (h, w) = img.dims();
    let q = |v: f64| -> i64 {
        let s = v * 4096.0;
        assert_eq!(s, s.round(), "value not on the 1/4096 grid");
        s as i64
    };
    let half = (window / 2) as isize;
    let n = (window * window) as i64;
    let off = q(offset);
    BinaryMask::from_fn(h, w, |r, c| {
        let mut sum = 0i64;
        for dr in -half..=half {
            for dc in -half..=half {
                let rr = (r as isize + dr).clamp(0, h as isize - 1) as usize;
                let cc = (c as isize + dc).clamp(0, w as isize - 1) as usize;
                sum += q(img.get(rr, cc) as f64);
            }
        }
        q(img.get(r, c) as f64) * n > sum + off * n
    })
}

/// Size of a maximum one-to-one matching by exhaustive search.
pub fn max_matching(n_pred: usize, n_truth: usize, allowed: &[(usize, usize)]) -> usize {
    let mut adj = vec![vec![false; n_truth]; n_pred];
    for &(i, j) in allowed {
        adj[i][j] = true;
    }
    fn go(i: usize, adj: &[Vec<bool>], used: &mut Vec<bool>) -> usize {
        if i == adj.len() {
            return 0;
        }
        let mut best = go(i + 1, adj, used);
        for j in 0..used.len() {
            if adj[i][j] && !used[j] {
                used[j] = true;
                best = best.max(1 + go(i + 1, adj, used));
                used[j] = false;
            }
        }
        best
    }
    go(0, &adj, &mut vec![false; n_truth])
}

/// Two-sided permutation test on the absolute mean difference.
pub fn permutation_pvalue(a: &[f64], b: &[f64], rounds: usize, r: &mut ChaCha8Rng) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let observed = (mean(a) - mean(b)).abs();
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut hits = 0usize;
    for _ in 0..rounds {
        for i in (1..pooled.len()).rev() {
            let j = r.random_range(0..=i);
            pooled.swap(i, j);
        }
        let d = (mean(&pooled[..a.len()]) - mean(&pooled[a.len()..])).abs();
        if d >= observed - 1e-12 {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (rounds + 1) as f64
}

/// Mean and sample standard deviation by Welford's update.
pub fn welford(xs: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    (mean, (m2 / (xs.len() - 1) as f64).sqrt())
}

pub fn standard_normal(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = r.random_range(f64::EPSILON..1.0);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
