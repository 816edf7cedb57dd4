//! The multiplier `b_n` of the unbiased Gaussian ES estimator
//! `-mu_S + sigma_S * b_n`.
//!
//! For a standard normal population, the secured position of the estimator is
//! `X - mu_hat + sigma_hat * b = G + b V` with `G ~ N(0, 1 + 1/n)` independent
//! of `V = sqrt(chi2_{n-1} / n)`. By location-scale invariance the estimator is
//! unbiased for every Gaussian population iff `ES_alpha(G + b V) = 0`. The map
//! `b -> ES_alpha(G + b V)` is strictly decreasing, so `b_n` is found by
//! bracketed root search on a fixed Monte Carlo sample of `V` (common random
//! numbers: every candidate `b` sees the same draws). `G` is integrated out
//! exactly given `V`, which leaves only the small sampling error of `V`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::format::fmt12;
use crate::rng::{substream, CHUNK};
use crate::stats::{std_normal_cdf, std_normal_es, std_normal_pdf, std_normal_quantile};
use crate::types::RiskLevel;

pub const DEFAULT_MC_SAMPLES: usize = 10_000_000;
pub const DEFAULT_TOL: f64 = 5e-4;
pub const DEFAULT_SEED: u64 = 20_190_101;
const MAX_ITER: usize = 200;

/// Environment variable overriding the cache location.
pub const CACHE_ENV: &str = "FAIRALLOC_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnMethod {
    McRoot,
    ClosedForm,
}

impl BnMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BnMethod::McRoot => "mc-root",
            BnMethod::ClosedForm => "closed-form",
        }
    }
}

impl fmt::Display for BnMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BnMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc-root" => Ok(BnMethod::McRoot),
            "closed-form" => Ok(BnMethod::ClosedForm),
            other => Err(Error::InvalidInput(format!("unknown b_n method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnEntry {
    pub n: usize,
    pub alpha: RiskLevel,
    pub value: f64,
    pub method: BnMethod,
    /// Estimated absolute error of `value`.
    pub precision: f64,
}

impl BnEntry {
    /// `n alpha value precision method`, numbers at 12 significant digits.
    pub fn to_record(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.n,
            fmt12(self.alpha.value()),
            fmt12(self.value),
            fmt12(self.precision),
            self.method
        )
    }

    fn parse_record(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [n, alpha, value, precision, method] = fields[..] else {
            return Err(format!("expected 5 fields, got {}", fields.len()));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("bad number '{s}': {e}"));
        Ok(BnEntry {
            n: n.parse().map_err(|e| format!("bad n '{n}': {e}"))?,
            alpha: RiskLevel::new(num(alpha)?).map_err(|e| e.to_string())?,
            value: num(value)?,
            precision: num(precision)?,
            method: method.parse().map_err(|e: Error| e.to_string())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnSolverConfig {
    pub mc_samples: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for BnSolverConfig {
    fn default() -> Self {
        BnSolverConfig {
            mc_samples: DEFAULT_MC_SAMPLES,
            tol: DEFAULT_TOL,
            seed: DEFAULT_SEED,
        }
    }
}

/// Fixed Monte Carlo sample of `V` for one `n`. Given `V = v`, the secured
/// position is `N(b v, 1 + 1/n)`, so its distribution function and tail
/// expectation are averages of closed-form normal terms over the sample.
pub struct SecuredPositionSample {
    v: Vec<f64>,
    alpha: RiskLevel,
    /// Standard deviation of `G`.
    s: f64,
}

/// ES estimate at one candidate `b`, with the tail summaries needed for the
/// error estimate.
#[derive(Debug, Clone, Copy)]
pub struct EsEvaluation {
    pub es: f64,
    /// Asymptotic standard error of the ES estimate.
    pub std_error: f64,
    /// Tail average of `V`, the magnitude of `d ES / d b`.
    pub tail_mean_v: f64,
    /// `alpha`-quantile of `G + b V`.
    pub quantile: f64,
}

impl SecuredPositionSample {
    pub fn draw(n: usize, alpha: RiskLevel, samples: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidN(n));
        }
        if samples == 0 {
            return Err(Error::InvalidInput("mc_samples must be positive".into()));
        }
        let chi = ChiSquared::new((n - 1) as f64)
            .map_err(|e| Error::InvalidInput(format!("chi-square({}): {e}", n - 1)))?;
        let nf = n as f64;
        let mut v = vec![0.0; samples];
        v.par_chunks_mut(CHUNK).enumerate().for_each(|(k, vc)| {
            let mut rng = substream(seed, k as u64);
            for vi in vc.iter_mut() {
                *vi = (chi.sample(&mut rng) / nf).sqrt();
            }
        });
        Ok(SecuredPositionSample {
            v,
            alpha,
            s: (1.0 + 1.0 / nf).sqrt(),
        })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Sums `f(v)` over the sample in fixed chunks, so the rounding does not
    /// depend on the thread count.
    fn chunked_sum<const K: usize>(&self, f: impl Fn(f64) -> [f64; K] + Sync) -> [f64; K] {
        let parts: Vec<[f64; K]> = self
            .v
            .par_chunks(CHUNK)
            .map(|c| {
                let mut acc = [0.0; K];
                for &v in c {
                    for (a, x) in acc.iter_mut().zip(f(v)) {
                        *a += x;
                    }
                }
                acc
            })
            .collect();
        let mut total = [0.0; K];
        for p in parts {
            for (t, x) in total.iter_mut().zip(p) {
                *t += x;
            }
        }
        total
    }

    /// Distribution function of `G + b V` at `y` and its density.
    fn cdf_and_density(&self, b: f64, y: f64) -> (f64, f64) {
        let s = self.s;
        let [f, d] = self.chunked_sum(|v| {
            let z = (y - b * v) / s;
            [std_normal_cdf(z), std_normal_pdf(z)]
        });
        let m = self.len() as f64;
        (f / m, d / (m * s))
    }

    /// `alpha`-quantile of `G + b V` by safeguarded Newton steps.
    fn quantile(&self, b: f64) -> f64 {
        let a = self.alpha.value();
        let [sv, sv2] = self.chunked_sum(|v| [v, v * v]);
        let m = self.len() as f64;
        let (mean_v, var_v) = (sv / m, (sv2 / m - (sv / m).powi(2)).max(0.0));
        let spread = (self.s * self.s + b * b * var_v).sqrt();
        let mut q = b * mean_v + spread * std_normal_quantile(a);
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..100 {
            let (f, dens) = self.cdf_and_density(b, q);
            if f < a {
                lo = q;
            } else {
                hi = q;
            }
            let mut next = q - (f - a) / dens;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo + spread,
                    _ => hi - spread,
                };
            }
            if (next - q).abs() <= 1e-15 * (1.0 + q.abs()) {
                return next;
            }
            q = next;
        }
        q
    }

    /// ES of `G + b V` under the sample distribution of `V`.
    pub fn evaluate(&self, b: f64) -> EsEvaluation {
        let a = self.alpha.value();
        let s = self.s;
        let q = self.quantile(b);
        // per draw: E[Y; Y <= q | v], P(Y <= q | v) and the influence term
        // of the tail expectation with the quantile estimated
        let term = |v: f64| {
            let z = (q - b * v) / s;
            let cdf = std_normal_cdf(z);
            let h = b * v * cdf - s * std_normal_pdf(z);
            let psi = h - q * cdf;
            [h, v * cdf, psi, psi * psi]
        };
        let [sh, svc, sp, sp2] = self.chunked_sum(term);
        let m = self.len() as f64;
        let var_psi = (sp2 / m - (sp / m).powi(2)).max(0.0);
        EsEvaluation {
            es: -sh / (m * a),
            std_error: (var_psi / m).sqrt() / a,
            tail_mean_v: svc / (m * a),
            quantile: q,
        }
    }
}

/// Solves `ES_alpha(G + b V) = 0` on a common-random-numbers sample.
pub fn solve_bn(n: usize, alpha: RiskLevel, mc_samples: usize, tol: f64, seed: u64) -> Result<BnEntry> {
    if n < 2 {
        return Err(Error::InvalidN(n));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let c_alpha = std_normal_es(alpha);
    if !(c_alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "b_n is undefined at alpha = {alpha}"
        )));
    }
    let sample = SecuredPositionSample::draw(n, alpha, mc_samples, seed)?;

    let (mut lo, mut hi) = (0.5 * c_alpha, 3.0 * c_alpha);
    let mut f_lo = sample.evaluate(lo).es;
    let mut f_hi = sample.evaluate(hi).es;
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::NoConvergence(format!(
            "no sign change on bracket [{lo}, {hi}]: ES = ({f_lo}, {f_hi})"
        )));
    }

    // Illinois variant of regula falsi. The sample ES is smooth in b, so the
    // search continues past `tol` until the residual is negligible next to
    // the Monte Carlo error.
    let mut side = 0i8;
    let mut last: Option<(f64, EsEvaluation)> = None;
    for _ in 0..MAX_ITER {
        let b = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let b = if b > lo && b < hi { b } else { 0.5 * (lo + hi) };
        let eval = sample.evaluate(b);
        last = Some((b, eval));
        if eval.es.abs() < tol && eval.es.abs() <= 0.01 * eval.std_error {
            break;
        }
        if eval.es > 0.0 {
            lo = b;
            f_lo = eval.es;
            if side == 1 {
                f_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = b;
            f_hi = eval.es;
            if side == -1 {
                f_lo *= 0.5;
            }
            side = -1;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    match last {
        Some((b, eval)) if eval.es.abs() < tol => {
            let slope = eval.tail_mean_v.max(f64::MIN_POSITIVE);
            let precision = (eval.std_error.powi(2) + eval.es.powi(2)).sqrt() / slope;
            Ok(BnEntry {
                n,
                alpha,
                value: b,
                method: BnMethod::McRoot,
                precision: precision.max(f64::EPSILON),
            })
        }
        _ => Err(Error::NoConvergence(format!(
            "|ES| >= {tol} after {MAX_ITER} iterations (bracket [{lo}, {hi}])"
        ))),
    }
}

pub fn solve_bn_with(n: usize, alpha: RiskLevel, config: &BnSolverConfig) -> Result<BnEntry> {
    solve_bn(n, alpha, config.mc_samples, config.tol, config.seed)
}

/// Key: `n` and alpha rounded to 1e-6.
type CacheKey = (usize, i64);

fn cache_key(n: usize, alpha: RiskLevel) -> CacheKey {
    (n, (alpha.value() * 1e6).round() as i64)
}

const CACHE_HEADER: &str = "# fairalloc b_n cache v1 sha256=";

/// Plain-text cache of solved `b_n` values, one record per line, guarded by a
/// checksum of the record lines.
#[derive(Debug, Clone)]
pub struct BnCache {
    path: PathBuf,
}

impl BnCache {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        BnCache { path: path.into() }
    }

    /// `$FAIRALLOC_CACHE`, else `$HOME/.cache/fairalloc/bn_cache.txt`, else a
    /// file in the working directory.
    pub fn from_env() -> Self {
        if let Some(p) = std::env::var_os(CACHE_ENV).filter(|p| !p.is_empty()) {
            return BnCache::new(p);
        }
        match std::env::var_os("HOME").filter(|p| !p.is_empty()) {
            Some(home) => BnCache::new(Path::new(&home).join(".cache/fairalloc/bn_cache.txt")),
            None => BnCache::new("fairalloc_bn_cache.txt"),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CorruptCache {
            path: self.path.display().to_string(),
            reason: reason.into(),
        }
    }

    fn load(&self) -> Result<BTreeMap<CacheKey, BnEntry>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
            Err(e) => return Err(e.into()),
        };
        let (header, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
        let expected = header
            .strip_prefix(CACHE_HEADER)
            .ok_or_else(|| self.corrupt("missing header"))?;
        if checksum(body) != expected.trim() {
            return Err(self.corrupt("checksum mismatch"));
        }
        let mut map = BTreeMap::new();
        for (k, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry =
                BnEntry::parse_record(line).map_err(|e| self.corrupt(format!("line {}: {e}", k + 2)))?;
            map.insert(cache_key(entry.n, entry.alpha), entry);
        }
        Ok(map)
    }

    pub fn lookup(&self, n: usize, alpha: RiskLevel) -> Result<Option<BnEntry>> {
        Ok(self.load()?.remove(&cache_key(n, alpha)))
    }

    /// Inserts or replaces the entry for `(n, alpha)`.
    pub fn store(&self, entry: &BnEntry) -> Result<()> {
        let mut map = self.load()?;
        map.insert(cache_key(entry.n, entry.alpha), entry.clone());
        let body: String = map.values().map(|e| e.to_record() + "\n").collect();
        let text = format!("{CACHE_HEADER}{}\n{body}", checksum(&body));
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = self.path.with_extension("tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }

    /// Cached value if present, otherwise solve and persist. The flag is true
    /// when a solve happened.
    pub fn resolve(&self, n: usize, alpha: RiskLevel, config: &BnSolverConfig) -> Result<(BnEntry, bool)> {
        if let Some(hit) = self.lookup(n, alpha)? {
            return Ok((hit, false));
        }
        let entry = solve_bn_with(n, alpha, config)?;
        self.store(&entry)?;
        // hand back what a later lookup will read, so cold and warm runs agree
        let stored = BnEntry::parse_record(&entry.to_record()).map_err(Error::InvalidInput)?;
        Ok((stored, true))
    }
}

fn checksum(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}
