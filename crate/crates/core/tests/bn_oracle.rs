//! `b_n` checked against a deterministic quadrature of the same root
//! condition: `Y = G + b V` with `G ~ N(0, 1 + 1/n)` and
//! `V = sqrt(chi2_{n-1} / n)` independent. Conditioning on `V` turns the
//! distribution function and the tail expectation of `Y` into one-dimensional
//! integrals over the chi-square density. A second, cruder check simulates
//! `(G, V)` pairs directly and takes the empirical ES of `G + b V`.

use fairalloc::bn::solve_bn;
use fairalloc::stats::empirical_es;
use fairalloc::RiskLevel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn big_phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Simpson nodes and weights for `V`, integrating the chi-square density of
/// `n V^2` over mean +- 14 standard deviations.
fn v_nodes(n: usize) -> Vec<(f64, f64)> {
    let k = (n - 1) as f64;
    let sd = (2.0 * k).sqrt();
    let lo = (k - 14.0 * sd).max(0.0);
    let hi = k + 14.0 * sd;
    let steps = 4000;
    let h = (hi - lo) / steps as f64;
    let log_norm = -0.5 * k * 2f64.ln() - ln_gamma(0.5 * k);
    (0..=steps)
        .filter_map(|s| {
            let w = lo + s as f64 * h;
            if w <= 0.0 {
                return None;
            }
            let dens = ((0.5 * k - 1.0) * w.ln() - 0.5 * w + log_norm).exp();
            let simpson = if s == 0 || s == steps {
                1.0
            } else if s % 2 == 1 {
                4.0
            } else {
                2.0
            };
            Some(((w / n as f64).sqrt(), dens * simpson * h / 3.0))
        })
        .collect()
}

fn es_of_secured(b: f64, n: usize, alpha: f64, nodes: &[(f64, f64)]) -> f64 {
    let s = (1.0 + 1.0 / n as f64).sqrt();
    let cdf = |y: f64| nodes.iter().map(|(v, w)| w * big_phi((y - b * v) / s)).sum::<f64>();
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    let partial: f64 = nodes
        .iter()
        .map(|(v, w)| {
            let z = (q - b * v) / s;
            w * (b * v * big_phi(z) - s * phi(z))
        })
        .sum();
    -partial / alpha
}

fn bn_by_quadrature(n: usize, alpha: f64) -> f64 {
    let nodes = v_nodes(n);
    let (mut lo, mut hi) = (1.0, 4.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if es_of_secured(mid, n, alpha, &nodes) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn quadrature_weights_integrate_to_one() {
    for n in [5, 50, 5000] {
        let total: f64 = v_nodes(n).iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-7, "n={n}: {total}");
    }
}

#[test]
fn monte_carlo_root_matches_quadrature() {
    let alpha = RiskLevel::new(0.05).unwrap();
    for n in [10, 50, 250] {
        let exact = bn_by_quadrature(n, 0.05);
        let mc = solve_bn(n, alpha, 1_000_000, 5e-4, 17).unwrap();
        let err = (mc.value - exact).abs();
        eprintln!("n={n} quadrature={exact:.6} mc={:.6} precision={:.2e}", mc.value, mc.precision);
        assert!(err < 4.0 * mc.precision, "n={n}: |{} - {exact}| = {err}", mc.value);
    }
}

#[test]
fn quadrature_root_decreases_to_normal_constant() {
    let c = bn_by_quadrature(20, 0.05);
    let d = bn_by_quadrature(200, 0.05);
    let e = bn_by_quadrature(5000, 0.05);
    eprintln!("b_20={c:.6} b_200={d:.6} b_5000={e:.6}");
    assert!(c > d && d > e);
    assert!((e - 2.062712807507).abs() < 1e-3);
}

#[test]
fn simulated_pairs_have_zero_expected_shortfall_at_root() {
    let n = 50;
    let alpha = RiskLevel::new(0.05).unwrap();
    let b = solve_bn(n, alpha, 1_000_000, 5e-4, 23).unwrap().value;
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    let chi = ChiSquared::new((n - 1) as f64).unwrap();
    let s = (1.0 + 1.0 / n as f64).sqrt();
    let pairs = 4_000_000;
    let y: Vec<f64> = (0..pairs)
        .map(|_| {
            let g: f64 = rng.sample(StandardNormal);
            let v = (chi.sample(&mut rng) / n as f64).sqrt();
            s * g + b * v
        })
        .collect();
    let es = empirical_es(&y, alpha);
    // tail of ~2e5 points with spread near 0.5: SE of the ES is about 1.5e-3
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let tail = &sorted[..(pairs as f64 * 0.05) as usize];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let var = tail.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / tail.len() as f64;
    let q = *tail.last().unwrap();
    let se = ((var + 0.95 * (q - mean).powi(2)) / (pairs as f64 * 0.05)).sqrt();
    eprintln!("b_50={b:.6} pair ES={es:.2e} SE={se:.2e}");
    assert!(es.abs() < 3.0 * se);
}
