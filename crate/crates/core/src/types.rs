//! Domain types shared by the estimators, the backtest and the simulators.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A reference level for ES / VaR.
///
/// Levels live in `(0, 1]`. The closed upper end is needed by the backtest
/// curves (`β = 1` is the whole-sample mean) and by the expectation measure,
/// which is ES at level one.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RiskLevel(f64);

impl RiskLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 && alpha <= 1.0 {
            Ok(RiskLevel(alpha))
        } else {
            Err(Error::InvalidInput(format!(
                "risk level must lie in (0, 1], got {alpha}"
            )))
        }
    }

    /// Like [`RiskLevel::new`] but also rejects `alpha = 1`.
    pub fn open(alpha: f64) -> Result<Self> {
        if alpha >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "risk level must lie in (0, 1), got {alpha}"
            )));
        }
        Self::new(alpha)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// One-based order-statistic index `min(floor(n * alpha) + 1, n)`.
    ///
    /// Products that land within 1e-9 (relative) of an integer are snapped to
    /// it, so decimal levels such as 0.29 with n = 100 give 29 and not 28.
    pub fn order_index(self, n: usize) -> usize {
        order_index(self.0, n)
    }
}

/// [`RiskLevel::order_index`] for any level in `[0, 1]`; levels below `1/n`
/// select the minimum.
pub fn order_index(level: f64, n: usize) -> usize {
    assert!(n >= 1, "order_index needs at least one observation");
    let x = n as f64 * level;
    let r = x.round();
    let fl = if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r
    } else {
        x.floor()
    };
    ((fl.max(0.0) as usize) + 1).min(n)
}

impl TryFrom<f64> for RiskLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        RiskLevel::new(v)
    }
}

impl From<RiskLevel> for f64 {
    fn from(r: RiskLevel) -> f64 {
        r.0
    }
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Borrowed row-major view of an `n x d` P&L panel.
#[derive(Debug, Clone, Copy)]
pub struct PanelView<'a> {
    values: &'a [f64],
    n: usize,
    d: usize,
}

impl<'a> PanelView<'a> {
    pub fn new(values: &'a [f64], n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput(format!(
                "panel must have n >= 1 and d >= 1, got {n} x {d}"
            )));
        }
        if values.len() != n * d {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({n} x {d})", n * d),
                actual: format!("{} values", values.len()),
            });
        }
        Ok(PanelView { values, n, d })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, j: usize) -> &'a [f64] {
        &self.values[j * self.d..(j + 1) * self.d]
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.d + i]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &'a [f64]> + 'a {
        self.values.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.values
    }
}

/// An `n x d` panel of P&L observations; rows are days, columns constituents.
#[derive(Debug, Clone, PartialEq)]
pub struct PnlSample {
    values: Vec<f64>,
    n: usize,
    d: usize,
    dates: Option<Vec<NaiveDate>>,
}

impl PnlSample {
    /// Builds a sample from row-major values.
    pub fn from_row_major(values: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        PanelView::new(&values, n, d)?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite P&L value at row {}, column {}",
                pos / d + 1,
                pos % d + 1
            )));
        }
        Ok(PnlSample {
            values,
            n,
            d,
            dates: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(n * d);
        for (j, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: format!("{d} columns"),
                    actual: format!("{} columns in row {}", r.len(), j + 1),
                });
            }
            values.extend_from_slice(r);
        }
        Self::from_row_major(values, n, d)
    }

    /// Attaches row dates, which must be strictly increasing; the error
    /// names the one-based row of the first out-of-order date.
    pub fn with_dates(mut self, dates: Vec<NaiveDate>) -> Result<Self> {
        if dates.len() != self.n {
            return Err(Error::ShapeMismatch {
                expected: format!("{} dates", self.n),
                actual: format!("{} dates", dates.len()),
            });
        }
        if let Some(k) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::NonMonotoneDates { line: k + 2 });
        }
        self.dates = Some(dates);
        Ok(self)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dates(&self) -> Option<&[NaiveDate]> {
        self.dates.as_deref()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn view(&self) -> PanelView<'_> {
        PanelView {
            values: &self.values,
            n: self.n,
            d: self.d,
        }
    }

    /// Rows `start..start + len` as a view.
    pub fn window(&self, start: usize, len: usize) -> Result<PanelView<'_>> {
        if len == 0 || start + len > self.n {
            return Err(Error::InvalidInput(format!(
                "window {start}..{} outside sample of {} rows",
                start + len,
                self.n
            )));
        }
        Ok(PanelView {
            values: &self.values[start * self.d..(start + len) * self.d],
            n: len,
            d: self.d,
        })
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        self.view().row(j)
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<PnlSample> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.d) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                d: self.d,
            });
        }
        let values = self
            .view()
            .rows()
            .flat_map(|r| columns.iter().map(move |&c| r[c]))
            .collect();
        let mut out = PnlSample::from_row_major(values, self.n, columns.len())?;
        out.dates = self.dates.clone();
        Ok(out)
    }
}

impl<'a> From<&'a PnlSample> for PanelView<'a> {
    fn from(s: &'a PnlSample) -> Self {
        s.view()
    }
}

/// Sample moments of a panel (all with `1/n` divisors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioStats {
    /// Sample mean of each constituent.
    pub mu: Vec<f64>,
    /// Sample mean of the aggregate.
    pub mu_s: f64,
    /// Sample variance of the aggregate.
    pub var_s: f64,
    /// Sample covariance of each constituent with the aggregate.
    pub cov: Vec<f64>,
    pub n: usize,
}

impl PortfolioStats {
    #[inline]
    pub fn sigma_s(&self) -> f64 {
        self.var_s.sqrt()
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorId {
    Mean,
    GaussianFair,
    GaussianPlugin,
    NpHat,
    NpCheck,
    GaussianTrue,
    External,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 7] = [
        EstimatorId::Mean,
        EstimatorId::GaussianFair,
        EstimatorId::GaussianPlugin,
        EstimatorId::NpHat,
        EstimatorId::NpCheck,
        EstimatorId::GaussianTrue,
        EstimatorId::External,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::Mean => "mean",
            EstimatorId::GaussianFair => "gaussian-fair",
            EstimatorId::GaussianPlugin => "gaussian-plugin",
            EstimatorId::NpHat => "np-hat",
            EstimatorId::NpCheck => "np-check",
            EstimatorId::GaussianTrue => "gaussian-true",
            EstimatorId::External => "external",
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown estimator '{s}'")))
    }
}

/// Allocated capital per constituent, tagged with how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationVector {
    pub a: Vec<f64>,
    pub estimator: EstimatorId,
    pub alpha: RiskLevel,
    /// Number of observations the estimate used.
    pub window: usize,
}

impl AllocationVector {
    pub fn new(a: Vec<f64>, estimator: EstimatorId, alpha: RiskLevel, window: usize) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidInput("empty allocation vector".into()));
        }
        if let Some(i) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite allocation for constituent {}",
                i + 1
            )));
        }
        Ok(AllocationVector {
            a,
            estimator,
            alpha,
            window,
        })
    }

    pub fn d(&self) -> usize {
        self.a.len()
    }

    /// Aggregate capital, the sum of the per-constituent allocations.
    pub fn total(&self) -> f64 {
        self.a.iter().sum()
    }
}

/// Multivariate normal population with mean `mu` and covariance `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    mu: Vec<f64>,
    sigma: DMatrix<f64>,
}

impl GaussianModel {
    pub fn new(mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::InvalidInput("model dimension must be >= 1".into()));
        }
        if sigma.len() != d || sigma.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch {
                expected: format!("{d} x {d} covariance"),
                actual: format!(
                    "{} rows with lengths {:?}",
                    sigma.len(),
                    sigma.iter().map(Vec::len).collect::<Vec<_>>()
                ),
            });
        }
        let m = DMatrix::from_fn(d, d, |i, j| sigma[i][j]);
        Self::from_matrix(mu, m)
    }

    pub fn from_matrix(mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::ShapeMismatch {
                expected: format!("{d} x {d} covariance"),
                actual: format!("{} x {}", sigma.nrows(), sigma.ncols()),
            });
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        check_symmetric_psd(&sigma)?;
        Ok(GaussianModel { mu, sigma })
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// `Cov(X_i, S)`, the row sums of the covariance matrix.
    pub fn cov_with_aggregate(&self) -> Vec<f64> {
        self.sigma.row_iter().map(|r| r.sum()).collect()
    }

    /// `Var(S)`, the sum of all covariance entries.
    pub fn var_aggregate(&self) -> f64 {
        self.sigma.sum()
    }

    pub fn mean_aggregate(&self) -> f64 {
        self.mu.iter().sum()
    }

    /// Keeps only the listed constituents.
    pub fn marginal(&self, columns: &[usize]) -> Result<GaussianModel> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.d()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                d: self.d(),
            });
        }
        let k = columns.len();
        let mu = columns.iter().map(|&c| self.mu[c]).collect();
        let sigma = DMatrix::from_fn(k, k, |i, j| self.sigma[(columns[i], columns[j])]);
        GaussianModel::from_matrix(mu, sigma)
    }
}

/// Symmetric with eigenvalues no lower than `-1e-10 * ||sigma||` (Frobenius).
pub(crate) fn check_symmetric_psd(sigma: &DMatrix<f64>) -> Result<()> {
    let norm = sigma.norm();
    let d = sigma.nrows();
    for i in 0..d {
        for j in 0..i {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * norm.max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidInput(format!(
                    "covariance not symmetric at ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-10 * norm {
        return Err(Error::InvalidInput(format!(
            "covariance not positive semidefinite (smallest eigenvalue {min:e})"
        )));
    }
    Ok(())
}
