//! Pearson correlations, first- and second-order partial correlations and
//! the influence of a third stock on a pair.
//!
//! The full tensor of `d(X,Y:Z)` values is evaluated from the precomputed
//! index-conditioned partial matrix: each triple needs only three entries of
//! it, so the cost is `O(N^2 T)` for the matrices plus `O(N^3)` for the
//! triples. Enumeration runs in parallel over the conditioning stock `Z`
//! and is merged in `Z` order, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::market_data::ReturnPanel;
use crate::significance::fisher_z_score;
use crate::{Diagnostic, Error, Result};

/// A partial correlation whose magnitude reaches `1 - SINGULAR_TOLERANCE`
/// cannot be conditioned on.
pub const SINGULAR_TOLERANCE: f64 = 1e-12;

/// Largest panel for which a dense tensor may be materialized.
pub const MAX_DENSE_STOCKS: usize = 60;

/// Minimum number of return observations for tensor computation.
pub const MIN_OBSERVATIONS: usize = 10;

/// Centered copy of `x` scaled to unit Euclidean norm, or `None` when `x`
/// has no variation.
fn unit_deviations(x: &[f64]) -> Option<Vec<f64>> {
    let first = *x.first()?;
    if x.iter().all(|&v| v == first) {
        return None;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut dev: Vec<f64> = x.iter().map(|&v| v - mean).collect();
    let norm = dot(&dev, &dev).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    dev.iter_mut().for_each(|v| *v /= norm);
    Some(dev)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn correlation_of_units(u: &[f64], v: &[f64]) -> f64 {
    dot(u, v).clamp(-1.0, 1.0)
}

/// Pearson correlation coefficient. The normalization (1/T or 1/(T-1))
/// cancels; deviations are scaled to unit norm before the inner product.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientSample(format!(
            "pearson needs at least 3 observations, got {}",
            x.len()
        )));
    }
    let u = unit_deviations(x).ok_or_else(|| Error::Degenerate("x has zero variance".into()))?;
    let v = unit_deviations(y).ok_or_else(|| Error::Degenerate("y has zero variance".into()))?;
    Ok(correlation_of_units(&u, &v))
}

/// `(r_xy - r_xc r_yc) / sqrt((1 - r_xc^2)(1 - r_yc^2))`: the correlation
/// of `x` and `y` after removing the conditioning series `c`. The same
/// recursion gives the first-order partial (conditioning on the index) and
/// the second-order one (inputs already conditioned on the index).
#[inline]
fn conditioned(r_xy: f64, r_xc: f64, r_yc: f64) -> f64 {
    ((r_xy - r_xc * r_yc) / ((1.0 - r_xc * r_xc) * (1.0 - r_yc * r_yc)).sqrt()).clamp(-1.0, 1.0)
}

#[inline]
fn conditionable(r: f64) -> bool {
    r.is_finite() && r.abs() < 1.0 - SINGULAR_TOLERANCE
}

fn check_range(what: &'static str, value: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange { what, value })
    }
}

fn check_conditioning(what: &'static str, value: f64) -> Result<()> {
    check_range(what, value)?;
    if conditionable(value) {
        Ok(())
    } else {
        Err(Error::SingularConditioning { what, value })
    }
}

/// `rho(X,Y:M)` from the three raw Pearson coefficients.
pub fn partial_corr_on_index(rho_xy: f64, rho_xm: f64, rho_ym: f64) -> Result<f64> {
    check_range("rho_xy", rho_xy)?;
    check_conditioning("rho_xm", rho_xm)?;
    check_conditioning("rho_ym", rho_ym)?;
    Ok(conditioned(rho_xy, rho_xm, rho_ym))
}

/// `rho(X,Y:M,Z)` from three index-conditioned partial correlations.
pub fn partial_corr_on_index_and_stock(rho_xy_m: f64, rho_xz_m: f64, rho_yz_m: f64) -> Result<f64> {
    check_range("rho_xy_m", rho_xy_m)?;
    check_conditioning("rho_xz_m", rho_xz_m)?;
    check_conditioning("rho_yz_m", rho_yz_m)?;
    Ok(conditioned(rho_xy_m, rho_xz_m, rho_yz_m))
}

/// Influence of `Z` on the pair `(X, Y)`: `d = rho(X,Y:M) - rho(X,Y:M,Z)`.
/// Negative values are legitimate.
pub fn influence_triple(rho_xy_m: f64, rho_xz_m: f64, rho_yz_m: f64) -> Result<f64> {
    Ok(rho_xy_m - partial_corr_on_index_and_stock(rho_xy_m, rho_xz_m, rho_yz_m)?)
}

/// Legacy index-free influence `d*(X,Y:Z) = rho(X,Y) - rho(X,Y:Z)`. In a
/// market dominated by the index this is positive even when `Z` drives `X`
/// and `Y` in opposite directions.
pub fn influence_star_triple(rho_xy: f64, rho_xy_z: f64) -> Result<f64> {
    check_range("rho_xy", rho_xy)?;
    check_range("rho_xy_z", rho_xy_z)?;
    Ok(rho_xy - rho_xy_z)
}

/// Pearson coefficients between every pair of stocks and between each
/// stock and the index.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    tickers: Vec<String>,
    values: Vec<f64>,
    index_correlations: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn compute(panel: &ReturnPanel) -> Result<Self> {
        if panel.n_obs() < 3 {
            return Err(Error::InsufficientSample(format!(
                "{} observations; correlations need at least 3",
                panel.n_obs()
            )));
        }
        let units: Vec<Vec<f64>> = panel
            .columns()
            .par_iter()
            .zip(panel.tickers().par_iter())
            .map(|(col, ticker)| {
                unit_deviations(col)
                    .ok_or_else(|| Error::Degenerate(format!("`{ticker}` has zero variance")))
            })
            .collect::<Result<_>>()?;
        let index = unit_deviations(panel.index_returns()).ok_or_else(|| {
            Error::Degenerate(format!("index `{}` has zero variance", panel.index_ticker()))
        })?;

        let n = units.len();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i + 1..n)
                    .map(|j| correlation_of_units(&units[i], &units[j]))
                    .collect()
            })
            .collect();
        let mut values = vec![0.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            values[i * n + i] = 1.0;
            for (k, &r) in row.iter().enumerate() {
                let j = i + 1 + k;
                values[i * n + j] = r;
                values[j * n + i] = r;
            }
        }
        let index_correlations = units.iter().map(|u| correlation_of_units(u, &index)).collect();
        Ok(Self {
            tickers: panel.tickers().to_vec(),
            values,
            index_correlations,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n(&self) -> usize {
        self.tickers.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    /// `rho(X, M)` for stock `i`.
    pub fn index_correlation(&self, i: usize) -> f64 {
        self.index_correlations[i]
    }
}

/// Index-conditioned partial correlations `rho(X,Y:M)`. Stocks perfectly
/// collinear with the index have undefined (NaN) rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialCorrelationMatrix {
    tickers: Vec<String>,
    values: Vec<f64>,
    diagnostics: Vec<Diagnostic>,
}

impl PartialCorrelationMatrix {
    pub fn compute(panel: &ReturnPanel) -> Result<Self> {
        Ok(Self::from_correlations(&CorrelationMatrix::compute(panel)?))
    }

    pub fn from_correlations(corr: &CorrelationMatrix) -> Self {
        let n = corr.n();
        let mut diagnostics = Vec::new();
        let mut values = vec![f64::NAN; n * n];
        for i in 0..n {
            if !conditionable(corr.index_correlation(i)) {
                diagnostics.push(Diagnostic::new(
                    "correlation",
                    format!(
                        "`{}` is collinear with the index (rho = {}); its triples are skipped",
                        corr.tickers[i],
                        corr.index_correlation(i)
                    ),
                ));
            }
        }
        for i in 0..n {
            for j in i..n {
                let value = if i == j {
                    1.0
                } else {
                    match partial_corr_on_index(
                        corr.get(i, j),
                        corr.index_correlation(i),
                        corr.index_correlation(j),
                    ) {
                        Ok(p) => p,
                        Err(_) => continue,
                    }
                };
                if i != j && !conditionable(value) {
                    diagnostics.push(Diagnostic::new(
                        "correlation",
                        format!(
                            "`{}` and `{}` are perfectly collinear after removing the index \
                             (rho = {value}); triples involving the pair are skipped",
                            corr.tickers[i], corr.tickers[j]
                        ),
                    ));
                }
                values[i * n + j] = value;
                values[j * n + i] = value;
            }
        }
        Self {
            tickers: corr.tickers.clone(),
            values,
            diagnostics,
        }
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n(&self) -> usize {
        self.tickers.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.values[i * n..(i + 1) * n]
    }
}

/// Visits every unordered pair `x < y` with `x, y != z`, in lexicographic
/// order, passing `rho(X,Y:M)` and `rho(X,Y:M,Z)`. The second value is
/// `None` when the triple is singular and has to be skipped.
pub(crate) fn visit_conditioning_stock<F>(partials: &PartialCorrelationMatrix, z: usize, mut f: F)
where
    F: FnMut(usize, usize, f64, Option<f64>),
{
    let n = partials.n();
    let row_z = partials.row(z);
    for x in 0..n {
        if x == z {
            continue;
        }
        let row_x = partials.row(x);
        let p_xz = row_z[x];
        let x_ok = conditionable(p_xz);
        for y in x + 1..n {
            if y == z {
                continue;
            }
            let p_xy = row_x[y];
            let p_yz = row_z[y];
            if x_ok && conditionable(p_yz) && conditionable(p_xy) {
                f(x, y, p_xy, Some(conditioned(p_xy, p_xz, p_yz)));
            } else {
                f(x, y, p_xy, None);
            }
        }
    }
}

/// Number of ordered-conditioner triples `N(N-1)(N-2)/2`.
pub fn triple_count(n: usize) -> u64 {
    let n = n as u64;
    if n < 3 {
        0
    } else {
        n * (n - 1) * (n - 2) / 2
    }
}

/// Rule deciding which triples are kept in significant-only storage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cutoff {
    /// Keep `|d| > threshold`.
    Influence { threshold: f64 },
    /// Keep triples whose Fisher z-difference statistic exceeds `critical`
    /// in magnitude, for a sample of `n_obs` observations.
    FisherZ { critical: f64, n_obs: usize },
}

impl Cutoff {
    pub fn passes(&self, rho_m: f64, rho_mz: f64) -> bool {
        match *self {
            Cutoff::Influence { threshold } => (rho_m - rho_mz).abs() > threshold,
            Cutoff::FisherZ { critical, n_obs } => {
                fisher_z_score(rho_m, rho_mz, n_obs).is_some_and(|z| z.abs() > critical)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StorageMode {
    /// Every non-singular triple is stored (limited to small panels).
    Dense,
    /// Only triples passing the cutoff are stored.
    SignificantOnly(Cutoff),
}

/// One stored triple. `x < y`; `d(X,Y:Z) = d(Y,X:Z)` is implied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleInfluence {
    pub x: u32,
    pub y: u32,
    pub z: u32,
    /// `rho(X,Y:M)`
    pub rho_m: f64,
    /// `rho(X,Y:M,Z)`
    pub rho_mz: f64,
    /// `rho_m - rho_mz`
    pub d: f64,
}

impl TripleInfluence {
    fn new(x: usize, y: usize, z: usize, rho_m: f64, rho_mz: f64) -> Self {
        Self {
            x: x as u32,
            y: y as u32,
            z: z as u32,
            rho_m,
            rho_mz,
            d: rho_m - rho_mz,
        }
    }
}

/// Influence values for ordered triples, sorted by `(z, x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceTensor {
    tickers: Vec<String>,
    entries: Vec<TripleInfluence>,
    storage: StorageMode,
    n_obs: usize,
    enumerated: u64,
    skipped: u64,
    diagnostics: Vec<Diagnostic>,
}

impl InfluenceTensor {
    /// Assembles a tensor from parts; entries must be sorted by `(z, x, y)`.
    pub fn from_entries(
        tickers: Vec<String>,
        entries: Vec<TripleInfluence>,
        storage: StorageMode,
        n_obs: usize,
    ) -> Result<Self> {
        let n = tickers.len() as u32;
        let key = |e: &TripleInfluence| (e.z, e.x, e.y);
        if entries.windows(2).any(|w| key(&w[0]) >= key(&w[1])) {
            return Err(Error::InvalidArgument("tensor entries must be sorted by (z, x, y)".into()));
        }
        if entries.iter().any(|e| e.x >= e.y || e.y >= n || e.z >= n || e.z == e.x || e.z == e.y) {
            return Err(Error::InvalidArgument("tensor entry with invalid indices".into()));
        }
        Ok(Self {
            enumerated: triple_count(tickers.len()),
            tickers,
            entries,
            storage,
            n_obs,
            skipped: 0,
            diagnostics: Vec::new(),
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn entries(&self) -> &[TripleInfluence] {
        &self.entries
    }

    pub fn storage(&self) -> StorageMode {
        self.storage
    }

    /// Observations behind the correlations (used by the Fisher test).
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Triples enumerated, `N(N-1)(N-2)/2`.
    pub fn enumerated(&self) -> u64 {
        self.enumerated
    }

    /// Singular triples skipped during enumeration.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Subset of entries passing `cutoff`, in significant-only storage.
    pub fn filter(&self, cutoff: Cutoff) -> InfluenceTensor {
        InfluenceTensor {
            tickers: self.tickers.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| cutoff.passes(e.rho_m, e.rho_mz))
                .copied()
                .collect(),
            storage: StorageMode::SignificantOnly(cutoff),
            n_obs: self.n_obs,
            enumerated: self.enumerated,
            skipped: self.skipped,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// Evaluates `d(X,Y:Z)` for all `N(N-1)(N-2)/2` triples of the panel.
pub fn compute_influence_tensor(panel: &ReturnPanel, mode: StorageMode) -> Result<InfluenceTensor> {
    if panel.n_stocks() < 3 {
        return Err(Error::InsufficientSample(format!(
            "{} stocks; the influence tensor needs at least 3",
            panel.n_stocks()
        )));
    }
    if panel.n_obs() < MIN_OBSERVATIONS {
        return Err(Error::InsufficientSample(format!(
            "{} observations; the influence tensor needs at least {MIN_OBSERVATIONS}",
            panel.n_obs()
        )));
    }
    let partials = PartialCorrelationMatrix::compute(panel)?;
    tensor_from_partials(&partials, panel.n_obs(), mode)
}

/// Evaluates the tensor from an already computed partial matrix.
pub fn tensor_from_partials(
    partials: &PartialCorrelationMatrix,
    n_obs: usize,
    mode: StorageMode,
) -> Result<InfluenceTensor> {
    let n = partials.n();
    if mode == StorageMode::Dense && n > MAX_DENSE_STOCKS {
        return Err(Error::InvalidArgument(format!(
            "dense storage is limited to {MAX_DENSE_STOCKS} stocks, panel has {n}"
        )));
    }
    let per_z: Vec<(Vec<TripleInfluence>, u64)> = (0..n)
        .into_par_iter()
        .map(|z| {
            let mut kept = Vec::new();
            let mut skipped = 0u64;
            visit_conditioning_stock(partials, z, |x, y, rho_m, rho_mz| match rho_mz {
                None => skipped += 1,
                Some(rho_mz) => {
                    let keep = match mode {
                        StorageMode::Dense => true,
                        StorageMode::SignificantOnly(cut) => cut.passes(rho_m, rho_mz),
                    };
                    if keep {
                        kept.push(TripleInfluence::new(x, y, z, rho_m, rho_mz));
                    }
                }
            });
            (kept, skipped)
        })
        .collect();

    let skipped = per_z.iter().map(|(_, s)| s).sum::<u64>();
    let entries = per_z.into_iter().flat_map(|(e, _)| e).collect();
    let mut diagnostics = partials.diagnostics().to_vec();
    if skipped > 0 {
        diagnostics.push(Diagnostic::new(
            "correlation",
            format!("{skipped} singular triple(s) skipped"),
        ));
    }
    Ok(InfluenceTensor {
        tickers: partials.tickers().to_vec(),
        entries,
        storage: mode,
        n_obs,
        enumerated: triple_count(n),
        skipped,
        diagnostics,
    })
}
