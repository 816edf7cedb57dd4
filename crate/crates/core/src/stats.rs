//! Sample moments, order statistics and the empirical VaR / ES primitives.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::types::{PanelView, PortfolioStats, RiskLevel};

/// Row sums `S^j = sum_i X_i^j`.
pub fn aggregate(sample: PanelView<'_>) -> Vec<f64> {
    sample.rows().map(|r| r.iter().sum()).collect()
}

/// Sample means, aggregate variance and constituent/aggregate covariances,
/// all normalised by `1/n`.
pub fn portfolio_stats(sample: PanelView<'_>) -> PortfolioStats {
    let n = sample.n();
    let d = sample.d();
    let nf = n as f64;
    let s = aggregate(sample);

    let mut mu = vec![0.0; d];
    for row in sample.rows() {
        for (m, x) in mu.iter_mut().zip(row) {
            *m += x;
        }
    }
    mu.iter_mut().for_each(|m| *m /= nf);
    let mu_s = s.iter().sum::<f64>() / nf;

    let mut var_s = 0.0;
    let mut cov = vec![0.0; d];
    for (row, &sj) in sample.rows().zip(&s) {
        let ds = sj - mu_s;
        var_s += ds * ds;
        for ((c, x), m) in cov.iter_mut().zip(row).zip(&mu) {
            *c += (x - m) * ds;
        }
    }
    var_s /= nf;
    cov.iter_mut().for_each(|c| *c /= nf);

    PortfolioStats {
        mu,
        mu_s,
        var_s,
        cov,
        n,
    }
}

/// The `j`-th smallest value (one-based). Ties resolve to the same value
/// whatever the sort strategy, so the result is deterministic.
pub fn order_statistic(values: &[f64], j: usize) -> f64 {
    assert!(j >= 1 && j <= values.len(), "order statistic index out of range");
    let mut buf = values.to_vec();
    let (_, v, _) = buf.select_nth_unstable_by(j - 1, f64::total_cmp);
    *v
}

/// Empirical value-at-risk `-v^(j)` with `j = min(floor(n beta) + 1, n)`.
pub fn empirical_var(values: &[f64], beta: RiskLevel) -> f64 {
    assert!(!values.is_empty(), "empirical_var of an empty vector");
    -order_statistic(values, beta.order_index(values.len()))
}

/// Empirical expected shortfall: minus the average of all observations at or
/// below the `j`-th order statistic. Ties at the threshold all enter.
pub fn empirical_es(values: &[f64], alpha: RiskLevel) -> f64 {
    assert!(!values.is_empty(), "empirical_es of an empty vector");
    let threshold = order_statistic(values, alpha.order_index(values.len()));
    tail_mean(values, values, threshold).map_or(f64::NAN, |m| -m)
}

/// Mean of `target[k]` over the `k` with `key[k] <= threshold`, summed in
/// input order. `None` when no key is in the tail.
pub(crate) fn tail_mean(key: &[f64], target: &[f64], threshold: f64) -> Option<f64> {
    let (sum, count) = key
        .iter()
        .zip(target)
        .filter(|(k, _)| **k <= threshold)
        .fold((0.0, 0usize), |(s, c), (_, t)| (s + t, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn standard_normal() -> Normal {
    Normal::standard()
}

pub fn std_normal_pdf(x: f64) -> f64 {
    standard_normal().pdf(x)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// `phi(Phi^-1(alpha)) / alpha`, the expected shortfall of a standard normal.
/// Zero at `alpha = 1`.
pub fn std_normal_es(alpha: RiskLevel) -> f64 {
    let a = alpha.value();
    if a >= 1.0 {
        return 0.0;
    }
    std_normal_pdf(std_normal_quantile(a)) / a
}

/// Delete-a-group jackknife standard error of a statistic of `n` ordered
/// observations. `stat` receives the indices kept in each replicate.
pub fn grouped_jackknife_se<F>(n: usize, groups: usize, stat: F) -> f64
where
    F: Fn(&[usize]) -> f64,
{
    let g = groups.clamp(2, n.max(2));
    let bounds: Vec<usize> = (0..=g).map(|b| b * n / g).collect();
    let reps: Vec<f64> = (0..g)
        .map(|b| {
            let keep: Vec<usize> = (0..bounds[b]).chain(bounds[b + 1]..n).collect();
            stat(&keep)
        })
        .collect();
    let mean = reps.iter().sum::<f64>() / g as f64;
    let ss: f64 = reps.iter().map(|r| (r - mean).powi(2)).sum();
    ((g as f64 - 1.0) / g as f64 * ss).sqrt()
}
