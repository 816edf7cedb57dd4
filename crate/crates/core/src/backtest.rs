//! Rolling-window allocation backtests.
//!
//! On each backtest day the allocation is estimated from the `n` preceding
//! observations and added to the realised P&L, giving secured margins
//! `y_i = x_i + a_i` and the secured aggregate `xi = sum_i y_i`. Two families
//! of statistics judge the allocations:
//!
//! * deviation from fairness: `G_beta`, the empirical ES of `xi`, and
//!   `G^i_beta`, the average of `y_i` over the same tail days (negated);
//! * risk level shifts: `Upsilon`, the smallest level at which the secured
//!   aggregate is acceptable, and `W^i`, the smallest move away from `alpha`
//!   that flips the sign of `G^i`.
//!
//! `G` and `G^i` only change when `floor(m beta)` does, so level searches run
//! either on a fixed grid or, in exact mode, on the step boundaries `k / m`.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::format::{fmt12, round_sig, SIG_DIGITS};
use crate::stats::{empirical_es, grouped_jackknife_se, order_statistic};
use crate::types::{order_index, AllocationVector, EstimatorId, PanelView, PnlSample, RiskLevel};

pub const DEFAULT_GRID_STEP: f64 = 1e-3;

/// Secured margins and the secured aggregate over `m` backtest days.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestSeries {
    y: Vec<f64>,
    xi: Vec<f64>,
    m: usize,
    d: usize,
    pub estimator: EstimatorId,
    pub alpha: RiskLevel,
    pub window: usize,
    pub dates: Option<Vec<NaiveDate>>,
}

impl BacktestSeries {
    /// Builds a series from secured margins given row-major (`m x d`).
    pub fn from_secured(
        y: Vec<f64>,
        m: usize,
        d: usize,
        estimator: EstimatorId,
        alpha: RiskLevel,
        window: usize,
    ) -> Result<Self> {
        let view = PanelView::new(&y, m, d)?;
        let xi = view.rows().map(|r| r.iter().sum()).collect();
        Ok(BacktestSeries {
            y,
            xi,
            m,
            d,
            estimator,
            alpha,
            window,
            dates: None,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Secured aggregate `xi^k`.
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// Secured margins of day `k`.
    pub fn y_row(&self, k: usize) -> &[f64] {
        &self.y[k * self.d..(k + 1) * self.d]
    }

    pub fn y(&self) -> PanelView<'_> {
        PanelView::new(&self.y, self.m, self.d).expect("validated at construction")
    }

    /// Aggregate and per-margin tail averages over the days with
    /// `xi^k <= threshold`, summed in day order and negated.
    fn tail_values(&self, threshold: f64) -> (f64, Vec<f64>) {
        let mut sum_xi = 0.0;
        let mut sums = vec![0.0; self.d];
        let mut count = 0usize;
        for (k, &x) in self.xi.iter().enumerate() {
            if x <= threshold {
                count += 1;
                sum_xi += x;
                for (s, v) in sums.iter_mut().zip(self.y_row(k)) {
                    *s += v;
                }
            }
        }
        let c = count as f64;
        (-sum_xi / c, sums.into_iter().map(|s| -s / c).collect())
    }
}

/// Allocations for each backtest day.
///
/// Day `k` (zero-based) uses rows `k..k + n` and is evaluated against row
/// `k + n`, so a panel of `n + m` rows yields `m` allocations. Days run in
/// parallel; the first failing day aborts the run.
pub fn rolling_allocations(
    data: &PnlSample,
    estimator: &Estimator,
    alpha: RiskLevel,
    n: usize,
) -> Result<Vec<AllocationVector>> {
    if n == 0 || data.n() <= n {
        return Err(Error::InvalidInput(format!(
            "need more than {n} rows for a window of {n}, got {}",
            data.n()
        )));
    }
    let m = data.n() - n;
    let results: Vec<Result<AllocationVector>> = (0..m)
        .into_par_iter()
        .map(|k| estimator.allocate(data.window(k, n)?, alpha))
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            r.map_err(|e| Error::EstimatorFailed {
                day: k + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

/// `y_i^k = x_i^k + a_i^k` and `xi^k = sum_i y_i^k`.
pub fn secured_positions(x: PanelView<'_>, allocs: &[AllocationVector]) -> Result<BacktestSeries> {
    if allocs.len() != x.n() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} allocation vectors", x.n()),
            actual: format!("{}", allocs.len()),
        });
    }
    let mut y = Vec::with_capacity(x.n() * x.d());
    for (k, (row, a)) in x.rows().zip(allocs).enumerate() {
        if a.d() != x.d() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} allocations on day {}", x.d(), k + 1),
                actual: format!("{}", a.d()),
            });
        }
        y.extend(row.iter().zip(&a.a).map(|(xi, ai)| xi + ai));
    }
    let first = &allocs[0];
    BacktestSeries::from_secured(y, x.n(), x.d(), first.estimator, first.alpha, first.window)
}

/// Rolls `estimator` over `data` and pairs each allocation with the realised
/// P&L of the following day.
pub fn run_backtest(
    data: &PnlSample,
    estimator: &Estimator,
    alpha: RiskLevel,
    n: usize,
) -> Result<(Vec<AllocationVector>, BacktestSeries)> {
    let allocs = rolling_allocations(data, estimator, alpha, n)?;
    let m = allocs.len();
    let mut series = secured_positions(data.window(n, m)?, &allocs)?;
    series.dates = data.dates().map(|d| d[n..].to_vec());
    Ok((allocs, series))
}

/// Aggregate deviation from fairness `G_beta`: the empirical ES of `xi`.
pub fn g_total(series: &BacktestSeries, beta: RiskLevel) -> f64 {
    empirical_es(&series.xi, beta)
}

/// Margin deviation from fairness `G^i_beta` (zero-based `i`). The tail days
/// are chosen on `xi`; the average is taken over `y_i`.
pub fn g_margin(series: &BacktestSeries, i: usize, beta: RiskLevel) -> Result<f64> {
    if i >= series.d {
        return Err(Error::IndexOutOfRange { index: i, d: series.d });
    }
    let threshold = order_statistic(&series.xi, beta.order_index(series.m));
    Ok(series.tail_values(threshold).1[i])
}

/// `G_beta` and all `G^i_beta` in one pass.
pub fn g_all(series: &BacktestSeries, beta: RiskLevel) -> (f64, Vec<f64>) {
    let threshold = order_statistic(&series.xi, beta.order_index(series.m));
    series.tail_values(threshold)
}

/// Jackknife standard errors of `G_beta` and each `G^i_beta`, deleting
/// contiguous blocks of days.
pub fn g_standard_errors(series: &BacktestSeries, beta: RiskLevel, groups: usize) -> (f64, Vec<f64>) {
    let stat = |keep: &[usize], col: Option<usize>| {
        let xi: Vec<f64> = keep.iter().map(|&k| series.xi[k]).collect();
        let threshold = order_statistic(&xi, beta.order_index(xi.len()));
        let (mut sum, mut count) = (0.0, 0usize);
        for &k in keep {
            if series.xi[k] <= threshold {
                count += 1;
                sum += match col {
                    Some(i) => series.y_row(k)[i],
                    None => series.xi[k],
                };
            }
        }
        -sum / count as f64
    };
    let total = grouped_jackknife_se(series.m, groups, |keep| stat(keep, None));
    let margins = (0..series.d)
        .map(|i| grouped_jackknife_se(series.m, groups, |keep| stat(keep, Some(i))))
        .collect();
    (total, margins)
}

/// Levels `step, 2 step, ...` below one, then one itself.
pub fn beta_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidInput(format!("grid step must lie in (0, 1], got {step}")));
    }
    let mut grid = Vec::new();
    let mut k = 1u64;
    loop {
        let b = k as f64 * step;
        if b >= 1.0 - 1e-9 {
            break;
        }
        grid.push(b);
        k += 1;
    }
    grid.push(1.0);
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Upsilon {
    pub value: f64,
    pub attained: bool,
}

/// Smallest grid level with `G_beta <= 0`; 1 with `attained = false` when the
/// secured aggregate is unacceptable at every level.
pub fn upsilon(series: &BacktestSeries, grid_step: f64) -> Result<Upsilon> {
    for beta in beta_grid(grid_step)? {
        if g_total(series, RiskLevel::new(beta)?) <= 0.0 {
            return Ok(Upsilon {
                value: beta,
                attained: true,
            });
        }
    }
    Ok(Upsilon {
        value: 1.0,
        attained: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shifts {
    pub w_minus: f64,
    pub w_plus: f64,
    pub w: f64,
}

impl Shifts {
    fn combine(w_minus: f64, w_plus: f64) -> Self {
        let w = if w_minus < w_plus { -w_minus } else { w_plus };
        Shifts { w_minus, w_plus, w }
    }
}

fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Left, right and combined level shifts for margin `i` (zero-based),
/// searched over `epsilon in {0, step, 2 step, ...}`. Levels below `1/m`
/// (including 0) select the minimum of `xi`.
pub fn w_shifts(series: &BacktestSeries, i: usize, alpha: RiskLevel, grid_step: f64) -> Result<Shifts> {
    if i >= series.d {
        return Err(Error::IndexOutOfRange { index: i, d: series.d });
    }
    if !(grid_step > 0.0) {
        return Err(Error::InvalidInput(format!("grid step must be positive, got {grid_step}")));
    }
    Ok(grid_shifts(&TailProfile::new(series), series.m, i, alpha, grid_step))
}

fn grid_shifts(profile: &TailProfile, m: usize, i: usize, alpha: RiskLevel, grid_step: f64) -> Shifts {
    let a = alpha.value();
    let g = |beta: f64| profile.margins[order_index(beta, m) - 1][i];
    let g_alpha = g(a);
    let search = |limit: f64, dir: f64| -> f64 {
        let mut k = 0u64;
        loop {
            let eps = k as f64 * grid_step;
            if eps > limit + 1e-12 {
                return limit;
            }
            if g_alpha * g((a + dir * eps).clamp(0.0, 1.0)) <= 0.0 {
                return eps.min(limit);
            }
            k += 1;
        }
    };
    Shifts::combine(search(a, -1.0), search(1.0 - a, 1.0))
}

/// Tail averages for every order index `j = 1..=m`, accumulated over days
/// sorted by `xi` (ties share one tail set).
struct TailProfile {
    g: Vec<f64>,
    margins: Vec<Vec<f64>>,
}

impl TailProfile {
    fn new(series: &BacktestSeries) -> Self {
        let m = series.m;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&p, &q| series.xi[p].total_cmp(&series.xi[q]));
        let mut g = vec![0.0; m];
        let mut margins = vec![vec![0.0; series.d]; m];
        let mut sum_xi = 0.0;
        let mut sums = vec![0.0; series.d];
        let mut pos = 0;
        while pos < m {
            let value = series.xi[order[pos]];
            let mut end = pos;
            while end < m && series.xi[order[end]] == value {
                let k = order[end];
                sum_xi += series.xi[k];
                for (s, v) in sums.iter_mut().zip(series.y_row(k)) {
                    *s += v;
                }
                end += 1;
            }
            let c = end as f64;
            for j in pos..end {
                g[j] = -sum_xi / c;
                margins[j] = sums.iter().map(|s| -s / c).collect();
            }
            pos = end;
        }
        TailProfile { g, margins }
    }
}

/// `Upsilon` at the exact infimum: `(j - 1) / m` for the first order index
/// `j` with `G <= 0`.
pub fn upsilon_exact(series: &BacktestSeries) -> Upsilon {
    let profile = TailProfile::new(series);
    match profile.g.iter().position(|&g| g <= 0.0) {
        Some(j0) => Upsilon {
            value: j0 as f64 / series.m as f64,
            attained: true,
        },
        None => Upsilon {
            value: 1.0,
            attained: false,
        },
    }
}

/// Level shifts at their exact infima, which sit on the boundaries `k / m`.
pub fn w_shifts_exact(series: &BacktestSeries, i: usize, alpha: RiskLevel) -> Result<Shifts> {
    if i >= series.d {
        return Err(Error::IndexOutOfRange { index: i, d: series.d });
    }
    let profile = TailProfile::new(series);
    Ok(shifts_from_profile(&profile, series.m, i, alpha))
}

fn shifts_from_profile(profile: &TailProfile, m: usize, i: usize, alpha: RiskLevel) -> Shifts {
    let a = alpha.value();
    let mf = m as f64;
    let j_alpha = alpha.order_index(m);
    let g = |j: usize| profile.margins[j - 1][i];
    let g_alpha = g(j_alpha);
    if g_alpha == 0.0 {
        return Shifts::combine(0.0, 0.0);
    }
    // below alpha, index j covers levels up to j/m (exclusive)
    let w_minus = (1..j_alpha)
        .rev()
        .find(|&j| g_alpha * g(j) <= 0.0)
        .map_or(a, |j| (a - j as f64 / mf).max(0.0));
    // above alpha, index j starts at level (j - 1)/m
    let w_plus = (j_alpha + 1..=m)
        .find(|&j| g_alpha * g(j) <= 0.0)
        .map_or(1.0 - a, |j| ((j - 1) as f64 / mf - a).max(0.0));
    Shifts::combine(w_minus, w_plus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JarqueBera {
    pub statistic: f64,
    pub exceeds_1pct: bool,
}

/// 99% quantile of the chi-square distribution with two degrees of freedom.
pub const CHI2_2_Q99: f64 = 9.210340371976184;

/// Jarque-Bera normality statistic `m/6 (skew^2 + (kurt - 3)^2 / 4)` with
/// `1/m` moments, compared against [`CHI2_2_Q99`].
pub fn jarque_bera(xi: &[f64]) -> Result<JarqueBera> {
    let m = xi.len();
    if m < 8 {
        return Err(Error::InvalidInput(format!(
            "Jarque-Bera needs at least 8 observations, got {m}"
        )));
    }
    let mf = m as f64;
    let mean = xi.iter().sum::<f64>() / mf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xi {
        let c = x - mean;
        let c2 = c * c;
        m2 += c2;
        m3 += c2 * c;
        m4 += c2 * c2;
    }
    m2 /= mf;
    m3 /= mf;
    m4 /= mf;
    if !(m2 > 0.0) {
        return Err(Error::InvalidInput("Jarque-Bera of a constant series".into()));
    }
    let skew = m3 / m2.powf(1.5);
    let excess = m4 / (m2 * m2) - 3.0;
    let statistic = mf / 6.0 * (skew * skew + excess * excess / 4.0);
    Ok(JarqueBera {
        statistic,
        exceeds_1pct: statistic > CHI2_2_Q99,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    Grid,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Diagnostic {
    UpsilonNotAttained,
    JarqueBeraRejectsNormality,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub grid_step: f64,
    pub mode: SearchMode,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            grid_step: DEFAULT_GRID_STEP,
            mode: SearchMode::Grid,
        }
    }
}

/// Every backtest statistic for one series, plus the `beta` curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub estimator: EstimatorId,
    pub alpha: f64,
    pub window: usize,
    pub m: usize,
    pub d: usize,
    pub grid_step: f64,
    pub mode: SearchMode,
    pub g_total_at_alpha: f64,
    pub g_margin_at_alpha: Vec<f64>,
    pub upsilon: f64,
    pub w_minus: Vec<f64>,
    pub w_plus: Vec<f64>,
    pub w: Vec<f64>,
    /// `(beta, G_beta)` at every grid level.
    pub g_curve: Vec<(f64, f64)>,
    /// Per constituent, `(beta, G^i_beta)` at every grid level.
    pub g_margin_curves: Vec<Vec<(f64, f64)>>,
    pub jarque_bera: Option<JarqueBera>,
    pub flags: Vec<Diagnostic>,
}

pub fn fairness_report(series: &BacktestSeries, alpha: RiskLevel, grid_step: f64) -> Result<FairnessReport> {
    fairness_report_with(
        series,
        alpha,
        ReportOptions {
            grid_step,
            mode: SearchMode::Grid,
        },
    )
}

pub fn fairness_report_with(
    series: &BacktestSeries,
    alpha: RiskLevel,
    options: ReportOptions,
) -> Result<FairnessReport> {
    let grid = beta_grid(options.grid_step)?;
    let sorted = sorted_copy(&series.xi);
    let curve_points: Vec<(f64, f64, Vec<f64>)> = grid
        .par_iter()
        .map(|&b| {
            let (g, gi) = series.tail_values(sorted[order_index(b, series.m) - 1]);
            (b, g, gi)
        })
        .collect();
    let g_curve: Vec<(f64, f64)> = curve_points.iter().map(|(b, g, _)| (*b, *g)).collect();
    let g_margin_curves = (0..series.d)
        .map(|i| curve_points.iter().map(|(b, _, gi)| (*b, gi[i])).collect())
        .collect();

    let (g_total_at_alpha, g_margin_at_alpha) = g_all(series, alpha);

    let (ups, shifts): (Upsilon, Vec<Shifts>) = match options.mode {
        SearchMode::Grid => {
            let ups = g_curve
                .iter()
                .find(|(_, g)| *g <= 0.0)
                .map_or(
                    Upsilon {
                        value: 1.0,
                        attained: false,
                    },
                    |(b, _)| Upsilon {
                        value: *b,
                        attained: true,
                    },
                );
            let profile = TailProfile::new(series);
            let shifts = (0..series.d)
                .map(|i| grid_shifts(&profile, series.m, i, alpha, options.grid_step))
                .collect();
            (ups, shifts)
        }
        SearchMode::Exact => {
            let profile = TailProfile::new(series);
            let ups = match profile.g.iter().position(|&g| g <= 0.0) {
                Some(j0) => Upsilon {
                    value: j0 as f64 / series.m as f64,
                    attained: true,
                },
                None => Upsilon {
                    value: 1.0,
                    attained: false,
                },
            };
            let shifts = (0..series.d)
                .map(|i| shifts_from_profile(&profile, series.m, i, alpha))
                .collect();
            (ups, shifts)
        }
    };

    let jb = jarque_bera(&series.xi).ok();
    let mut flags = Vec::new();
    if !ups.attained {
        flags.push(Diagnostic::UpsilonNotAttained);
    }
    if jb.is_some_and(|j| j.exceeds_1pct) {
        flags.push(Diagnostic::JarqueBeraRejectsNormality);
    }

    Ok(FairnessReport {
        estimator: series.estimator,
        alpha: alpha.value(),
        window: series.window,
        m: series.m,
        d: series.d,
        grid_step: options.grid_step,
        mode: options.mode,
        g_total_at_alpha,
        g_margin_at_alpha,
        upsilon: ups.value,
        w_minus: shifts.iter().map(|s| s.w_minus).collect(),
        w_plus: shifts.iter().map(|s| s.w_plus).collect(),
        w: shifts.iter().map(|s| s.w).collect(),
        g_curve,
        g_margin_curves,
        jarque_bera: jb,
        flags,
    })
}

impl FairnessReport {
    /// Copy with every real rounded to 12 significant digits.
    pub fn rounded(&self) -> FairnessReport {
        let r = |x: f64| round_sig(x, SIG_DIGITS);
        let rv = |v: &[f64]| v.iter().map(|x| r(*x)).collect::<Vec<_>>();
        let rc = |c: &[(f64, f64)]| c.iter().map(|(b, g)| (r(*b), r(*g))).collect::<Vec<_>>();
        FairnessReport {
            alpha: r(self.alpha),
            grid_step: r(self.grid_step),
            g_total_at_alpha: r(self.g_total_at_alpha),
            g_margin_at_alpha: rv(&self.g_margin_at_alpha),
            upsilon: r(self.upsilon),
            w_minus: rv(&self.w_minus),
            w_plus: rv(&self.w_plus),
            w: rv(&self.w),
            g_curve: rc(&self.g_curve),
            g_margin_curves: self.g_margin_curves.iter().map(|c| rc(c)).collect(),
            jarque_bera: self.jarque_bera.map(|j| JarqueBera {
                statistic: r(j.statistic),
                exceeds_1pct: j.exceeds_1pct,
            }),
            ..self.clone()
        }
    }

    /// Pretty JSON with reals at 12 significant digits.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.rounded())?)
    }

    /// `beta,g_total,g_1,...,g_d`, one row per grid level.
    pub fn write_curves_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("beta,g_total");
        for i in 1..=self.d {
            header.push_str(&format!(",g_{i}"));
        }
        writeln!(out, "{header}")?;
        for (k, (beta, g)) in self.g_curve.iter().enumerate() {
            let mut line = format!("{},{}", fmt12(*beta), fmt12(*g));
            for curve in &self.g_margin_curves {
                line.push(',');
                line.push_str(&fmt12(curve[k].1));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}
