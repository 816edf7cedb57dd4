//! Fair capital allocation under expected shortfall.
//!
//! The crate estimates how the expected shortfall of a portfolio splits into
//! per-constituent capital, checks estimators for fairness by nested Monte
//! Carlo, and backtests any allocation methodology on P&L panels.

pub mod backtest;
pub mod bn;
pub mod error;
pub mod estimators;
pub mod format;
pub mod ingest;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod types;

pub use error::{Error, Result};
pub use types::{AllocationVector, EstimatorId, GaussianModel, PanelView, PnlSample, PortfolioStats, RiskLevel};
