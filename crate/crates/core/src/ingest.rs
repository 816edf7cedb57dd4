//! Daily return panels from CSV, fixed-notional portfolios and date splits.
//!
//! Files are UTF-8, comma-separated, with a `date,<ticker_1>,...,<ticker_d>`
//! header and ISO dates. Line numbers in errors count the header as line 1;
//! column numbers are one-based field positions, so the date is column 1.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::format::fmt12;
use crate::types::PnlSample;

/// Daily simple returns with their dates and ticker labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    returns: Vec<f64>,
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, returns: Vec<f64>) -> Result<Self> {
        let d = tickers.len();
        if d == 0 {
            return Err(Error::InvalidInput("panel needs at least one ticker".into()));
        }
        if returns.len() != dates.len() * d {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", dates.len() * d),
                actual: format!("{}", returns.len()),
            });
        }
        if let Some(k) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotoneDates { line: k + 3 });
        }
        Ok(ReturnPanel {
            dates,
            tickers,
            returns,
        })
    }

    pub fn n(&self) -> usize {
        self.dates.len()
    }

    pub fn d(&self) -> usize {
        self.tickers.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    /// Row-major `n x d` returns.
    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let d = self.d();
        &self.returns[j * d..(j + 1) * d]
    }

    /// The panel as a P&L sample with unit notionals.
    pub fn to_sample(&self) -> Result<PnlSample> {
        PnlSample::from_row_major(self.returns.clone(), self.n(), self.d())?.with_dates(self.dates.clone())
    }

    fn slice(&self, start: usize, end: usize) -> ReturnPanel {
        let d = self.d();
        ReturnPanel {
            dates: self.dates[start..end].to_vec(),
            tickers: self.tickers.clone(),
            returns: self.returns[start * d..end * d].to_vec(),
        }
    }
}

/// Monetary notional per ticker; the sign encodes long or short.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights {
    w: Vec<f64>,
}

impl PortfolioWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite portfolio weight".into()));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidInput("portfolio weights are all zero".into()));
        }
        Ok(PortfolioWeights { w })
    }

    /// Parses a comma-separated list such as `1,1,-1`.
    pub fn parse_list(text: &str) -> Result<Self> {
        let w = text
            .split(',')
            .enumerate()
            .map(|(k, s)| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: 1,
                    column: k + 1,
                    message: format!("invalid weight {:?}", s.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }
}

pub fn load_returns_csv(path: impl AsRef<Path>) -> Result<ReturnPanel> {
    parse_returns_csv(File::open(path)?)
}

/// Parses a return panel from any reader.
pub fn parse_returns_csv<R: Read>(mut reader: R) -> Result<ReturnPanel> {
    let mut data = Vec::new();
    reader.read_to_end(&mut data)?;
    // the reader skips blank lines and may place a record's start on one, so
    // file lines are recovered from byte offsets
    let line_of = |rec: &csv::StringRecord, fallback: usize| {
        rec.position().map_or(fallback, |p| {
            let mut b = p.byte() as usize;
            while b < data.len() && (data[b] == b'\n' || data[b] == b'\r') {
                b += 1;
            }
            1 + data[..b].iter().filter(|&&c| c == b'\n').count()
        })
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(data.as_slice());
    let mut records = rdr.records();

    let header = match records.next() {
        Some(h) => h.map_err(|e| csv_error(e, 1))?,
        None => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "empty file".into(),
            })
        }
    };
    if header.get(0).map(str::trim) != Some("date") {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "header must start with `date`".into(),
        });
    }
    let tickers: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if tickers.is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 2,
            message: "header names no tickers".into(),
        });
    }
    let d = tickers.len();

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut returns = Vec::new();
    for (k, rec) in records.enumerate() {
        let rec = rec.map_err(|e| csv_error(e, k + 2))?;
        let line = line_of(&rec, k + 2);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != d + 1 {
            return Err(Error::Parse {
                line,
                column: if rec.len() <= d { rec.len() + 1 } else { d + 2 },
                message: format!("expected {} fields, found {}", d + 1, rec.len()),
            });
        }
        let raw_date = rec[0].trim();
        if raw_date.is_empty() {
            return Err(Error::MissingValue { line, column: 1 });
        }
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| Error::Parse {
            line,
            column: 1,
            message: format!("invalid date {raw_date:?}"),
        })?;
        if dates.last().is_some_and(|prev| date <= *prev) {
            return Err(Error::NonMonotoneDates { line });
        }
        dates.push(date);
        for (i, cell) in rec.iter().enumerate().skip(1) {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::MissingValue { line, column: i + 1 });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column: i + 1,
                message: format!("invalid number {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: i + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            returns.push(v);
        }
    }
    ReturnPanel::new(dates, tickers, returns)
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    let line = e.position().map_or(line, |p| p.line() as usize);
    Error::Parse {
        line,
        column: 1,
        message: e.to_string(),
    }
}

/// `X_i = w_i * r_i` for every day, keeping the panel's dates.
pub fn build_portfolio(panel: &ReturnPanel, weights: &PortfolioWeights) -> Result<PnlSample> {
    let w = weights.as_slice();
    if w.len() != panel.d() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} weights", panel.d()),
            actual: format!("{}", w.len()),
        });
    }
    let values = panel
        .returns
        .chunks(panel.d())
        .flat_map(|row| row.iter().zip(w).map(|(r, w)| r * w))
        .collect();
    PnlSample::from_row_major(values, panel.n(), panel.d())?.with_dates(panel.dates.clone())
}

/// Rows dated strictly before `boundary`, and the rest. Both parts must be
/// non-empty.
pub fn split_panel(panel: &ReturnPanel, boundary: NaiveDate) -> Result<(ReturnPanel, ReturnPanel)> {
    let cut = panel.dates.partition_point(|d| *d < boundary);
    if cut == 0 || cut == panel.n() {
        return Err(Error::BoundaryOutOfRange(format!(
            "{boundary} leaves one side empty (panel spans {} to {})",
            panel.dates.first().map_or("-".into(), |d| d.to_string()),
            panel.dates.last().map_or("-".into(), |d| d.to_string()),
        )));
    }
    Ok((panel.slice(0, cut), panel.slice(cut, panel.n())))
}

/// Writes `date,<columns...>` rows at 12 significant digits. Undated samples
/// get a `row` index column instead.
pub fn write_sample_csv<W: Write>(sample: &PnlSample, columns: &[String], mut out: W) -> Result<()> {
    if columns.len() != sample.d() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} column names", sample.d()),
            actual: format!("{}", columns.len()),
        });
    }
    let first = if sample.dates().is_some() { "date" } else { "row" };
    writeln!(out, "{first},{}", columns.join(","))?;
    for j in 0..sample.n() {
        let key = match sample.dates() {
            Some(d) => d[j].to_string(),
            None => (j + 1).to_string(),
        };
        let cells: Vec<String> = sample.row(j).iter().map(|v| fmt12(*v)).collect();
        writeln!(out, "{key},{}", cells.join(","))?;
    }
    Ok(())
}

/// Consecutive calendar dates starting at `start`, for simulated panels.
pub fn synthetic_dates(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start.iter_days().take(n).collect()
}
