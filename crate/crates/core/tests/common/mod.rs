//! Brute-force reference implementations shared by the integration tests.
//! Levels are passed as `k / 1000` so the order index is computed in integer
//! arithmetic, independently of the library's floating-point snapping.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One-based `min(floor(n k / 1000) + 1, n)`.
pub fn order_index_per_mille(n: usize, k: usize) -> usize {
    (n * k / 1000 + 1).min(n)
}

pub fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s
}

/// Positions whose value is at or below the j-th smallest value.
pub fn tail_positions(v: &[f64], k: usize) -> Vec<usize> {
    let s = sorted(v);
    let threshold = s[order_index_per_mille(v.len(), k) - 1];
    (0..v.len()).filter(|&p| v[p] <= threshold).collect()
}

pub fn brute_var(v: &[f64], k: usize) -> f64 {
    -sorted(v)[order_index_per_mille(v.len(), k) - 1]
}

pub fn brute_es(v: &[f64], k: usize) -> f64 {
    let tail = tail_positions(v, k);
    -tail.iter().map(|&p| v[p]).sum::<f64>() / tail.len() as f64
}

/// Minus the column averages over the rows whose row sum is in the tail.
pub fn brute_tail_columns(rows: &[Vec<f64>], k: usize) -> (Vec<f64>, usize) {
    let sums: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    let tail = tail_positions(&sums, k);
    let d = rows[0].len();
    let cols = (0..d)
        .map(|i| tail.iter().map(|&p| rows[p][i]).sum::<f64>())
        .collect();
    (cols, tail.len())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random panel; `ties` draws from a coarse grid so that row sums collide.
pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, ties: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if ties {
                        rng.random_range(-3i32..=3) as f64 * 0.5
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

/// Relative error against the L1 size of the summed terms.
pub fn rel_err(sum: f64, target: f64, terms: &[f64]) -> f64 {
    let scale = terms
        .iter()
        .map(|t| t.abs())
        .sum::<f64>()
        .max(target.abs())
        .max(f64::MIN_POSITIVE);
    (sum - target).abs() / scale
}

/// Standard normal distribution function by composite Simpson integration of
/// the density from 0.
pub fn normal_cdf_by_quadrature(x: f64) -> f64 {
    let steps = 20_000;
    let h = x / steps as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = f(0.0) + f(x);
    for s in 1..steps {
        let w = if s % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(s as f64 * h);
    }
    0.5 + acc * h / 3.0
}

/// `phi(Phi^-1(alpha)) / alpha` with the quantile found by bisection.
pub fn normal_es_constant(alpha: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0, 0.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf_by_quadrature(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    (-0.5 * q * q).exp() / (2.0 * std::f64::consts::PI).sqrt() / alpha
}

pub fn reference_mu() -> Vec<f64> {
    vec![0.000786, 0.001549, 0.001660, 0.000195, 0.000650, 0.000413, -0.000401, -0.001146]
}

pub fn reference_sigma() -> Vec<Vec<f64>> {
    vec![
        vec![0.000226, 0.000174, 0.000104, 0.000066, 0.000069, 0.000019, -0.000077, -0.000135],
        vec![0.000174, 0.000346, 0.000135, 0.000068, 0.000091, 0.000022, -0.000082, -0.000195],
        vec![0.000104, 0.000135, 0.000257, 0.000065, 0.000084, 0.000034, -0.000093, -0.000111],
        vec![0.000066, 0.000068, 0.000065, 0.000133, 0.000048, 0.000025, -0.000058, -0.000064],
        vec![0.000069, 0.000091, 0.000084, 0.000048, 0.000137, 0.000034, -0.000065, -0.000081],
        vec![0.000019, 0.000022, 0.000034, 0.000025, 0.000034, 0.000061, -0.000022, -0.000031],
        vec![-0.000077, -0.000082, -0.000093, -0.000058, -0.000065, -0.000022, 0.000149, 0.000085],
        vec![-0.000135, -0.000195, -0.000111, -0.000064, -0.000081, -0.000031, 0.000085, 0.000202],
    ]
}
