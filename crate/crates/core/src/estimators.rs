//! Allocation estimators for expected shortfall and the exact Gaussian
//! allocation used as ground truth.
//!
//! Every estimator maps an `n x d` sample to `d` capital amounts whose sum is
//! the matching aggregate risk estimate:
//!
//! | estimator        | sum of allocations                         |
//! |------------------|--------------------------------------------|
//! | mean             | `-mu_S`                                    |
//! | gaussian-fair    | `-mu_S + sigma_S * b_n` (unbiased ES)      |
//! | gaussian-plugin  | `-mu_S + sigma_S * phi(Phi^-1(a)) / a`     |
//! | np-hat           | empirical ES of the aggregate              |
//! | np-check         | tail sum of the aggregate over `n a`       |
//!
//! The Gaussian estimators split the aggregate along the regression of each
//! constituent on the aggregate, so they need a non-constant aggregate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{aggregate, order_statistic, portfolio_stats, std_normal_es};
use crate::types::{AllocationVector, EstimatorId, GaussianModel, PanelView, PortfolioStats, RiskLevel};

/// Slope and intercept of each constituent regressed on the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCoefficients {
    pub beta: Vec<f64>,
    pub alpha_reg: Vec<f64>,
}

pub fn regression_coeffs(stats: &PortfolioStats) -> Result<RegressionCoefficients> {
    if !(stats.var_s > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let beta: Vec<f64> = stats.cov.iter().map(|c| c / stats.var_s).collect();
    let alpha_reg = stats
        .mu
        .iter()
        .zip(&beta)
        .map(|(m, b)| m - b * stats.mu_s)
        .collect();
    Ok(RegressionCoefficients { beta, alpha_reg })
}

/// `-alpha_i + beta_i * total`: splits an aggregate capital figure along the
/// regression decomposition.
pub fn regression_split(coeffs: &RegressionCoefficients, total: f64) -> Vec<f64> {
    coeffs
        .alpha_reg
        .iter()
        .zip(&coeffs.beta)
        .map(|(a, b)| -a + b * total)
        .collect()
}

/// Negated sample means. Fair for the expectation measure, i.e. ES at level 1,
/// which is the level recorded on the result.
pub fn mean_allocation(sample: PanelView<'_>) -> AllocationVector {
    let stats = portfolio_stats(sample);
    let a = stats.mu.iter().map(|m| -m).collect();
    AllocationVector {
        a,
        estimator: EstimatorId::Mean,
        alpha: RiskLevel::new(1.0).expect("1 is a valid level"),
        window: sample.n(),
    }
}

/// Closed-form ES of the aggregate of a Gaussian population.
pub fn gaussian_true_es(model: &GaussianModel, alpha: RiskLevel) -> f64 {
    -model.mean_aggregate() + model.var_aggregate().max(0.0).sqrt() * std_normal_es(alpha)
}

/// Closed-form fair (Euler) ES allocation of a Gaussian population.
pub fn gaussian_true_allocation(model: &GaussianModel, alpha: RiskLevel) -> Result<AllocationVector> {
    let var = model.var_aggregate();
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let scale = std_normal_es(alpha) / var.sqrt();
    let a = model
        .mu()
        .iter()
        .zip(model.cov_with_aggregate())
        .map(|(m, c)| -m + c * scale)
        .collect();
    AllocationVector::new(a, EstimatorId::GaussianTrue, alpha, 0)
}

/// Gaussian plug-in ES estimate `-mu_S + sigma_S * phi(Phi^-1(a)) / a`.
pub fn plugin_gaussian_es(stats: &PortfolioStats, alpha: RiskLevel) -> f64 {
    -stats.mu_s + stats.sigma_s() * std_normal_es(alpha)
}

/// ES estimate `-mu_S + sigma_S * b_n`; with `b_n` from [`crate::bn`] it is
/// unbiased in the risk sense for Gaussian samples of size `n`.
pub fn unbiased_gaussian_es(stats: &PortfolioStats, _alpha: RiskLevel, bn: f64) -> f64 {
    -stats.mu_s + stats.sigma_s() * bn
}

fn covariance_scaled(stats: &PortfolioStats, multiplier: f64) -> Result<Vec<f64>> {
    if !(stats.var_s > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let sigma = stats.sigma_s();
    Ok(stats
        .mu
        .iter()
        .zip(&stats.cov)
        .map(|(m, c)| -m + c / sigma * multiplier)
        .collect())
}

/// Fair Gaussian allocation `-mu_i + Cov(X_i, S) / sigma_S * b_n`.
pub fn estimator_b(sample: PanelView<'_>, alpha: RiskLevel, bn: f64) -> Result<AllocationVector> {
    let stats = portfolio_stats(sample);
    let a = covariance_scaled(&stats, bn)?;
    AllocationVector::new(a, EstimatorId::GaussianFair, alpha, sample.n())
}

/// Plug-in Gaussian allocation, [`estimator_b`] with `b_n` replaced by its
/// large-sample limit `phi(Phi^-1(a)) / a`.
pub fn estimator_c(sample: PanelView<'_>, alpha: RiskLevel) -> Result<AllocationVector> {
    let stats = portfolio_stats(sample);
    let a = covariance_scaled(&stats, std_normal_es(alpha))?;
    AllocationVector::new(a, EstimatorId::GaussianPlugin, alpha, sample.n())
}

/// Per-constituent sums over the tail rows `S^k <= S^(j)` and the row count.
fn tail_sums(sample: PanelView<'_>, alpha: RiskLevel) -> (Vec<f64>, usize) {
    let s = aggregate(sample);
    let threshold = order_statistic(&s, alpha.order_index(s.len()));
    let mut sums = vec![0.0; sample.d()];
    let mut count = 0;
    for (row, sk) in sample.rows().zip(&s) {
        if *sk <= threshold {
            count += 1;
            for (acc, x) in sums.iter_mut().zip(row) {
                *acc += x;
            }
        }
    }
    (sums, count)
}

/// Non-parametric allocation: minus the average of each constituent over the
/// rows where the aggregate is at or below its empirical VaR.
pub fn estimator_d_hat(sample: PanelView<'_>, alpha: RiskLevel) -> AllocationVector {
    let (sums, count) = tail_sums(sample, alpha);
    let a = sums.iter().map(|t| -t / count as f64).collect();
    AllocationVector {
        a,
        estimator: EstimatorId::NpHat,
        alpha,
        window: sample.n(),
    }
}

/// Non-parametric allocation normalised by `n * alpha` instead of the tail
/// count.
pub fn estimator_d_check(sample: PanelView<'_>, alpha: RiskLevel) -> AllocationVector {
    let (sums, _) = tail_sums(sample, alpha);
    let denom = sample.n() as f64 * alpha.value();
    let a = sums.iter().map(|t| -t / denom).collect();
    AllocationVector {
        a,
        estimator: EstimatorId::NpCheck,
        alpha,
        window: sample.n(),
    }
}

/// An allocation methodology that can be re-run on any window.
#[derive(Debug, Clone)]
pub enum Estimator {
    Mean,
    /// Fair Gaussian estimator with a precomputed `b_n` for the window size.
    GaussianFair { bn: f64 },
    GaussianPlugin,
    NpHat,
    NpCheck,
    /// Ignores the data and returns the closed-form allocation of the model.
    GaussianTrue(GaussianModel),
}

impl Estimator {
    pub fn id(&self) -> EstimatorId {
        match self {
            Estimator::Mean => EstimatorId::Mean,
            Estimator::GaussianFair { .. } => EstimatorId::GaussianFair,
            Estimator::GaussianPlugin => EstimatorId::GaussianPlugin,
            Estimator::NpHat => EstimatorId::NpHat,
            Estimator::NpCheck => EstimatorId::NpCheck,
            Estimator::GaussianTrue(_) => EstimatorId::GaussianTrue,
        }
    }

    pub fn allocate(&self, sample: PanelView<'_>, alpha: RiskLevel) -> Result<AllocationVector> {
        match self {
            Estimator::Mean => Ok(mean_allocation(sample)),
            Estimator::GaussianFair { bn } => estimator_b(sample, alpha, *bn),
            Estimator::GaussianPlugin => estimator_c(sample, alpha),
            Estimator::NpHat => Ok(estimator_d_hat(sample, alpha)),
            Estimator::NpCheck => Ok(estimator_d_check(sample, alpha)),
            Estimator::GaussianTrue(model) => {
                if model.d() != sample.d() {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{} constituents", model.d()),
                        actual: format!("{} constituents", sample.d()),
                    });
                }
                let mut a = gaussian_true_allocation(model, alpha)?;
                a.window = sample.n();
                Ok(a)
            }
        }
    }
}
