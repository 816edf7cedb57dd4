//! Seeded scenario generators and the nested Monte Carlo fairness check.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::rng::{substream, CHUNK};
use crate::stats::{empirical_es, grouped_jackknife_se, order_statistic};
use crate::types::{GaussianModel, PanelView, PnlSample, RiskLevel};

/// Multivariate t population whose covariance equals `sigma` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentTModel {
    base: GaussianModel,
    nu: f64,
}

impl StudentTModel {
    pub fn new(mu: Vec<f64>, sigma: Vec<Vec<f64>>, nu: f64) -> Result<Self> {
        Self::from_gaussian(GaussianModel::new(mu, sigma)?, nu)
    }

    /// Same mean and covariance as `base`, with `nu` degrees of freedom.
    pub fn from_gaussian(base: GaussianModel, nu: f64) -> Result<Self> {
        if !(nu > 2.0) || !nu.is_finite() {
            return Err(Error::InvalidInput(format!(
                "degrees of freedom must be finite and > 2, got {nu}"
            )));
        }
        Ok(StudentTModel { base, nu })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn d(&self) -> usize {
        self.base.d()
    }

    pub fn mu(&self) -> &[f64] {
        self.base.mu()
    }

    /// Target covariance.
    pub fn sigma(&self) -> &DMatrix<f64> {
        self.base.sigma()
    }

    /// Scale matrix `(nu - 2) / nu * sigma` of the normal numerator.
    pub fn scale_matrix(&self) -> DMatrix<f64> {
        self.base.sigma() * ((self.nu - 2.0) / self.nu)
    }

    pub fn gaussian(&self) -> &GaussianModel {
        &self.base
    }
}

/// Model parameter file: `{"mu": [...], "sigma": [[...], ...], "nu": 5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

impl ModelParams {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn gaussian(&self) -> Result<GaussianModel> {
        GaussianModel::new(self.mu.clone(), self.sigma.clone())
    }

    pub fn student_t(&self) -> Result<StudentTModel> {
        let nu = self
            .nu
            .ok_or_else(|| Error::InvalidInput("student-t model needs field nu".into()))?;
        StudentTModel::new(self.mu.clone(), self.sigma.clone(), nu)
    }
}

/// Population that training samples and evaluation rows are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioModel {
    Gaussian(GaussianModel),
    StudentT(StudentTModel),
}

impl ScenarioModel {
    pub fn d(&self) -> usize {
        match self {
            ScenarioModel::Gaussian(m) => m.d(),
            ScenarioModel::StudentT(m) => m.d(),
        }
    }

    fn sampler(&self) -> Result<RowSampler> {
        match self {
            ScenarioModel::Gaussian(m) => RowSampler::new(m.mu(), m.sigma(), None),
            ScenarioModel::StudentT(m) => RowSampler::new(m.mu(), &m.scale_matrix(), Some(m.nu)),
        }
    }
}

/// `L` with `L L^T = sigma`, from the symmetric eigendecomposition.
/// Eigenvalues down to `-1e-10 * trace` are treated as zero.
pub fn symmetric_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(Error::FactorizationFailure(format!(
            "{} x {} matrix is not square",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let tol = 1e-10 * sigma.trace().abs();
    let eig = SymmetricEigen::new(sigma.clone());
    let mut roots = DVector::zeros(sigma.nrows());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -tol {
            return Err(Error::FactorizationFailure(format!(
                "covariance has eigenvalue {lambda:e}"
            )));
        }
        roots[k] = lambda.max(0.0).sqrt();
    }
    Ok(eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

struct RowSampler {
    mu: Vec<f64>,
    factor: DMatrix<f64>,
    chi2: Option<(ChiSquared<f64>, f64)>,
}

impl RowSampler {
    fn new(mu: &[f64], scale: &DMatrix<f64>, nu: Option<f64>) -> Result<Self> {
        let chi2 = match nu {
            Some(nu) => Some((
                ChiSquared::new(nu).map_err(|e| Error::InvalidInput(e.to_string()))?,
                nu,
            )),
            None => None,
        };
        Ok(RowSampler {
            mu: mu.to_vec(),
            factor: symmetric_factor(scale)?,
            chi2,
        })
    }

    fn d(&self) -> usize {
        self.mu.len()
    }

    /// Writes one row into `out`; `z` is scratch space of length `d`.
    fn draw(&self, rng: &mut ChaCha8Rng, z: &mut [f64], out: &mut [f64]) {
        let d = self.d();
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let scale = match &self.chi2 {
            Some((dist, nu)) => 1.0 / (dist.sample(rng) / nu).sqrt(),
            None => 1.0,
        };
        for i in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += self.factor[(i, k)] * z[k];
            }
            out[i] = self.mu[i] + scale * acc;
        }
    }

    /// `rows` rows, chunk `c` of `CHUNK` rows drawn from substream `c`.
    fn panel(&self, rows: usize, seed: u64) -> Result<PnlSample> {
        let d = self.d();
        let mut values = vec![0.0; rows * d];
        if d > 0 {
            values
                .par_chunks_mut(CHUNK * d)
                .enumerate()
                .for_each(|(c, block)| {
                    let mut rng = substream(seed, c as u64);
                    let mut z = vec![0.0; d];
                    for row in block.chunks_mut(d) {
                        self.draw(&mut rng, &mut z, row);
                    }
                });
        }
        PnlSample::from_row_major(values, rows, d)
    }
}

/// I.i.d. multivariate normal rows.
pub fn mvn_sample(model: &GaussianModel, rows: usize, seed: u64) -> Result<PnlSample> {
    RowSampler::new(model.mu(), model.sigma(), None)?.panel(rows, seed)
}

/// I.i.d. rows `mu + Z / sqrt(Q / nu)` with `Z ~ N(0, (nu - 2) / nu * sigma)`
/// and `Q ~ chi2(nu)`, so that the covariance is `sigma`.
pub fn mvt_sample(model: &StudentTModel, rows: usize, seed: u64) -> Result<PnlSample> {
    RowSampler::new(model.mu(), &model.scale_matrix(), Some(model.nu))?.panel(rows, seed)
}

pub fn sample(model: &ScenarioModel, rows: usize, seed: u64) -> Result<PnlSample> {
    model.sampler()?.panel(rows, seed)
}

/// Jackknife groups used for the standard errors of [`verify_fairness`].
pub const JACKKNIFE_GROUPS: usize = 50;

/// Minimum number of replications accepted by [`verify_fairness`].
pub const MIN_REPLICATIONS: usize = 10_000;

/// Outcome of the nested Monte Carlo fairness check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessCheck {
    /// Estimated ES contribution of each secured constituent; zero for a
    /// fair estimator.
    pub residuals: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Empirical ES of the secured aggregate; equals the sum of `residuals`.
    pub aggregate: f64,
    pub aggregate_se: f64,
    pub replications: usize,
}

/// Nested Monte Carlo estimate of the fairness residuals of an estimator.
///
/// Replication `r` draws a training sample of `n` rows and one fresh row `X`
/// from substream `r` of `seed`, estimates `A` from the training sample, and
/// records the secured margins `X_i + A_i`. The tail is the set of
/// replications whose secured aggregate is at or below its empirical
/// `alpha`-quantile; `residual_i` is minus the average of `X_i + A_i` over
/// that tail. Standard errors come from a grouped jackknife over
/// replications.
pub fn verify_fairness(
    estimator: &Estimator,
    model: &ScenarioModel,
    n: usize,
    alpha: RiskLevel,
    replications: usize,
    seed: u64,
) -> Result<FairnessCheck> {
    if replications < MIN_REPLICATIONS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_REPLICATIONS} replications, got {replications}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidN(n));
    }
    let sampler = model.sampler()?;
    let d = sampler.d();

    let secured: Vec<Vec<f64>> = (0..replications)
        .into_par_iter()
        .map_init(
            || (vec![0.0; (n + 1) * d], vec![0.0; d]),
            |(buf, z), r| {
                let mut rng = substream(seed, r as u64);
                for row in buf.chunks_mut(d) {
                    sampler.draw(&mut rng, z, row);
                }
                let training = PanelView::new(&buf[..n * d], n, d)?;
                let a = estimator.allocate(training, alpha)?;
                Ok(buf[n * d..].iter().zip(&a.a).map(|(x, a)| x + a).collect())
            },
        )
        .collect::<Result<_>>()?;

    let v: Vec<f64> = secured.iter().map(|y| y.iter().sum()).collect();
    let tail_average = |keep: &[usize], col: usize| {
        let vk: Vec<f64> = keep.iter().map(|&r| v[r]).collect();
        let threshold = order_statistic(&vk, alpha.order_index(vk.len()));
        let (mut sum, mut count) = (0.0, 0usize);
        for &r in keep {
            if v[r] <= threshold {
                sum += if col == d { v[r] } else { secured[r][col] };
                count += 1;
            }
        }
        -sum / count as f64
    };

    let all: Vec<usize> = (0..replications).collect();
    let columns: Vec<(f64, f64)> = (0..=d)
        .into_par_iter()
        .map(|col| {
            let value = tail_average(&all, col);
            let se = grouped_jackknife_se(replications, JACKKNIFE_GROUPS, |keep| tail_average(keep, col));
            (value, se)
        })
        .collect();

    Ok(FairnessCheck {
        residuals: columns[..d].iter().map(|c| c.0).collect(),
        std_errors: columns[..d].iter().map(|c| c.1).collect(),
        aggregate: empirical_es(&v, alpha),
        aggregate_se: columns[d].1,
        replications,
    })
}
