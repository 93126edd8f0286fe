//! Aggregation of triple influences into stock-to-stock influence
//! `d(X:Z)`, total influence `d(X)` and rankings.
//!
//! `d(X:Z)` is the mean of `d(X,Y:Z)` over the partners `Y`. In filtered
//! mode the mean runs only over triples that survived the significance
//! filter; a cell with no surviving triple is absent, not zero.
//!
//! The total influence can be aggregated in two directions. The written
//! definition averages `d(X:Z)` over the conditioning stocks `Z`, which
//! measures how much `X` is influenced ([`Direction::Incoming`]); the prose
//! describes the influence *of* `X` on the other stocks, which averages over
//! the targets with `X` in the conditioning slot ([`Direction::Outgoing`]).
//! Outgoing is the default.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{visit_conditioning_stock, Cutoff, InfluenceTensor, PartialCorrelationMatrix, StorageMode};
use crate::{Diagnostic, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    /// Average only the triples present in a significance-filtered tensor.
    Filtered,
    /// Average every triple; requires a dense tensor.
    Unfiltered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `d(W)` = mean over targets `X` of `d(X:W)`.
    #[default]
    Outgoing,
    /// `d(W)` = mean over conditioners `Z` of `d(W:Z)`.
    Incoming,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "outgoing" => Ok(Direction::Outgoing),
            "incoming" => Ok(Direction::Incoming),
            other => Err(Error::Config(format!(
                "unknown aggregation direction `{other}` (expected outgoing|incoming)"
            ))),
        }
    }
}

/// `d(X:Z)`: row `X` is the target, column `Z` the conditioning stock.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    tickers: Vec<String>,
    values: Vec<f64>,
    counts: Vec<u32>,
}

impl InfluenceMatrix {
    /// `values` is row-major `N x N` with NaN for absent cells; the
    /// diagonal is forced absent.
    pub fn new(tickers: Vec<String>, mut values: Vec<f64>, mut counts: Vec<u32>) -> Result<Self> {
        let n = tickers.len();
        if values.len() != n * n || counts.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "influence matrix for {n} tickers needs {} cells",
                n * n
            )));
        }
        for i in 0..n {
            values[i * n + i] = f64::NAN;
            counts[i * n + i] = 0;
        }
        Ok(Self {
            tickers,
            values,
            counts,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n(&self) -> usize {
        self.tickers.len()
    }

    /// `d(target:conditioner)`, or `None` on the diagonal and for absent cells.
    pub fn get(&self, target: usize, conditioner: usize) -> Option<f64> {
        let v = self.values[target * self.n() + conditioner];
        (!v.is_nan()).then_some(v)
    }

    /// Number of `(X,Y:Z)` terms averaged into the cell.
    pub fn count(&self, target: usize, conditioner: usize) -> u32 {
        self.counts[target * self.n() + conditioner]
    }

    fn from_columns(tickers: Vec<String>, columns: Vec<(Vec<f64>, Vec<u32>)>) -> Self {
        let n = tickers.len();
        let mut values = vec![f64::NAN; n * n];
        let mut counts = vec![0u32; n * n];
        for (z, (sums, cnt)) in columns.into_iter().enumerate() {
            for x in 0..n {
                if x != z && cnt[x] > 0 {
                    values[x * n + z] = sums[x] / cnt[x] as f64;
                    counts[x * n + z] = cnt[x];
                }
            }
        }
        Self {
            tickers,
            values,
            counts,
        }
    }
}

/// Averages a tensor into `d(X:Z)`.
pub fn stock_influence(tensor: &InfluenceTensor, mode: AggregationMode) -> Result<InfluenceMatrix> {
    if mode == AggregationMode::Unfiltered && tensor.storage() != StorageMode::Dense {
        return Err(Error::InvalidArgument(
            "unfiltered aggregation needs a dense tensor".into(),
        ));
    }
    let n = tensor.tickers().len();
    let mut columns = vec![(vec![0.0; n], vec![0u32; n]); n];
    for e in tensor.entries() {
        let (sums, counts) = &mut columns[e.z as usize];
        for target in [e.x as usize, e.y as usize] {
            sums[target] += e.d;
            counts[target] += 1;
        }
    }
    Ok(InfluenceMatrix::from_columns(tensor.tickers().to_vec(), columns))
}

/// Computes `d(X:Z)` straight from the partial matrix without materializing
/// the tensor. With `cutoff` only passing triples are averaged (filtered
/// mode); without it every non-singular triple is. The summation order is
/// the tensor's, so the result equals [`stock_influence`] on the
/// corresponding tensor bit for bit.
pub fn aggregate_from_partials(partials: &PartialCorrelationMatrix, cutoff: Option<Cutoff>) -> InfluenceMatrix {
    let n = partials.n();
    let columns: Vec<(Vec<f64>, Vec<u32>)> = (0..n)
        .into_par_iter()
        .map(|z| {
            let mut sums = vec![0.0; n];
            let mut counts = vec![0u32; n];
            visit_conditioning_stock(partials, z, |x, y, rho_m, rho_mz| {
                if let Some(rho_mz) = rho_mz {
                    if cutoff.is_none_or(|c| c.passes(rho_m, rho_mz)) {
                        let d = rho_m - rho_mz;
                        sums[x] += d;
                        counts[x] += 1;
                        sums[y] += d;
                        counts[y] += 1;
                    }
                }
            });
            (sums, counts)
        })
        .collect();
    InfluenceMatrix::from_columns(partials.tickers().to_vec(), columns)
}

/// `d(X)` per stock; `None` where every contributing cell is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalInfluence {
    pub tickers: Vec<String>,
    pub values: Vec<Option<f64>>,
    pub direction: Direction,
    pub diagnostics: Vec<Diagnostic>,
}

impl TotalInfluence {
    /// Ranking of the stocks with a defined value.
    pub fn ranking(&self, period: impl Into<String>) -> InfluenceRanking {
        let (tickers, values): (Vec<String>, Vec<f64>) = self
            .tickers
            .iter()
            .zip(&self.values)
            .filter_map(|(t, v)| v.map(|v| (t.clone(), v)))
            .unzip();
        rank_by_influence(&tickers, &values, period).expect("aggregated values are finite")
    }
}

/// Averages the influence matrix into `d(X)`, skipping absent cells.
pub fn total_influence(matrix: &InfluenceMatrix, direction: Direction) -> TotalInfluence {
    let n = matrix.n();
    let mut diagnostics = Vec::new();
    let values = (0..n)
        .map(|w| {
            let cells = (0..n).filter(|&k| k != w).filter_map(|k| match direction {
                Direction::Outgoing => matrix.get(k, w),
                Direction::Incoming => matrix.get(w, k),
            });
            let (sum, count) = cells.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if count == 0 {
                diagnostics.push(Diagnostic::new(
                    "influence",
                    format!("`{}` has no defined influence cells; excluded from ranking", matrix.tickers[w]),
                ));
                None
            } else {
                Some(sum / count as f64)
            }
        })
        .collect();
    TotalInfluence {
        tickers: matrix.tickers.clone(),
        values,
        direction,
        diagnostics,
    }
}

/// Stocks ordered by decreasing `d(X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRanking {
    pub period: String,
    pub tickers: Vec<String>,
    pub d_values: Vec<f64>,
}

impl InfluenceRanking {
    pub fn len(&self) -> usize {
        self.tickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickers.is_empty()
    }

    /// Keeps only the tickers accepted by `keep`, preserving order.
    pub fn restricted_to(&self, mut keep: impl FnMut(&str) -> bool) -> InfluenceRanking {
        let (tickers, d_values) = self
            .tickers
            .iter()
            .zip(&self.d_values)
            .filter(|(t, _)| keep(t))
            .map(|(t, d)| (t.clone(), *d))
            .unzip();
        InfluenceRanking {
            period: self.period.clone(),
            tickers,
            d_values,
        }
    }
}

/// Sorts descending by value; ties are broken by ticker so rankings are
/// reproducible.
pub fn rank_by_influence(tickers: &[String], d_values: &[f64], period: impl Into<String>) -> Result<InfluenceRanking> {
    if tickers.len() != d_values.len() {
        return Err(Error::InvalidArgument("tickers and values differ in length".into()));
    }
    if let Some(v) = d_values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite influence value {v}")));
    }
    let mut order: Vec<usize> = (0..tickers.len()).collect();
    order.sort_by(|&a, &b| d_values[b].total_cmp(&d_values[a]).then_with(|| tickers[a].cmp(&tickers[b])));
    if order.windows(2).any(|w| tickers[w[0]] == tickers[w[1]]) {
        return Err(Error::InvalidArgument("duplicate ticker in ranking".into()));
    }
    Ok(InfluenceRanking {
        period: period.into(),
        tickers: order.iter().map(|&i| tickers[i].clone()).collect(),
        d_values: order.iter().map(|&i| d_values[i]).collect(),
    })
}
