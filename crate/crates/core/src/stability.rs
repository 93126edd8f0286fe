//! Quarter-by-quarter influence rankings, Kendall tau similarity between
//! quarters and the exponential decay `tau = tau0 exp(-t / lambda)` of
//! similarity with the interval `t` between quarters.

use std::collections::HashMap;
use std::ops::Range;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::influence::InfluenceRanking;
use crate::market_data::ReturnPanel;
use crate::pipeline::{run_influence, InfluenceConfig};
use crate::seeding::mix;
use crate::{Diagnostic, Error, Result};

pub const MIN_QUARTER_DAYS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarter {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Row range in the return panel the calendar was built from.
    pub rows: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuarterCalendar {
    quarters: Vec<Quarter>,
    diagnostics: Vec<Diagnostic>,
}

impl QuarterCalendar {
    /// Groups chronologically sorted dates into calendar quarters. Quarters
    /// with fewer than `min_days` dates are dropped with a diagnostic.
    pub fn from_dates(dates: &[NaiveDate], min_days: usize) -> Result<Self> {
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("dates must be strictly increasing".into()));
        }
        let key = |d: &NaiveDate| (d.year(), d.month0() / 3);
        let mut quarters = Vec::new();
        let mut diagnostics = Vec::new();
        let mut start = 0;
        while start < dates.len() {
            let k = key(&dates[start]);
            let end = start + dates[start..].iter().take_while(|d| key(d) == k).count();
            let label = format!("{}Q{}", k.0, k.1 + 1);
            if end - start >= min_days {
                quarters.push(Quarter {
                    label,
                    start: dates[start],
                    end: dates[end - 1],
                    rows: start..end,
                });
            } else {
                diagnostics.push(Diagnostic::new(
                    "stability",
                    format!("quarter {label} has {} trading days (< {min_days}); dropped", end - start),
                ));
            }
            start = end;
        }
        Ok(Self { quarters, diagnostics })
    }

    pub fn quarters(&self) -> &[Quarter] {
        &self.quarters
    }

    pub fn len(&self) -> usize {
        self.quarters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quarters.is_empty()
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuarterlyRankings {
    pub rankings: Vec<InfluenceRanking>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Runs the full influence pipeline independently in every quarter, with
/// thresholds recomputed from that quarter's own shuffles. The shuffle seed
/// of quarter `q` is derived from `config.seed` and `q`. Stocks with
/// constant returns within a quarter are left out of that quarter; a
/// quarter with fewer than three usable stocks is skipped.
pub fn quarterly_rankings(
    panel: &ReturnPanel,
    calendar: &QuarterCalendar,
    config: &InfluenceConfig,
) -> Result<QuarterlyRankings> {
    config.validate()?;
    if let Some(q) = calendar.quarters.iter().find(|q| q.rows.end > panel.n_obs()) {
        return Err(Error::InvalidArgument(format!(
            "quarter {} extends past the panel ({} rows)",
            q.label,
            panel.n_obs()
        )));
    }
    let outcomes: Vec<(Option<InfluenceRanking>, Vec<Diagnostic>)> = calendar
        .quarters
        .par_iter()
        .enumerate()
        .map(|(q, quarter)| rank_quarter(panel, quarter, q, config))
        .collect::<Result<_>>()?;

    let mut rankings = Vec::new();
    let mut diagnostics = calendar.diagnostics.clone();
    for (ranking, diags) in outcomes {
        rankings.extend(ranking);
        diagnostics.extend(diags);
    }
    Ok(QuarterlyRankings { rankings, diagnostics })
}

fn rank_quarter(
    panel: &ReturnPanel,
    quarter: &Quarter,
    q: usize,
    config: &InfluenceConfig,
) -> Result<(Option<InfluenceRanking>, Vec<Diagnostic>)> {
    let mut diagnostics = Vec::new();
    let slice = panel.slice_rows(quarter.rows.clone())?;
    let skip = |reason: String| {
        Diagnostic::new("stability", format!("quarter {} skipped: {reason}", quarter.label))
    };
    if is_constant(slice.index_returns()) {
        diagnostics.push(skip("index returns are constant".into()));
        return Ok((None, diagnostics));
    }
    let usable: Vec<usize> = (0..slice.n_stocks())
        .filter(|&i| {
            let keep = !is_constant(slice.returns(i));
            if !keep {
                diagnostics.push(Diagnostic::new(
                    "stability",
                    format!("`{}` has constant returns in {}; left out", slice.tickers()[i], quarter.label),
                ));
            }
            keep
        })
        .collect();
    if usable.len() < 3 {
        diagnostics.push(skip(format!("{} usable stocks (< 3)", usable.len())));
        return Ok((None, diagnostics));
    }
    let slice = if usable.len() == slice.n_stocks() {
        slice
    } else {
        slice.select(&usable)
    };
    let quarter_config = InfluenceConfig {
        seed: mix(config.seed, q as u64),
        ..config.clone()
    };
    let run = run_influence(&slice, &quarter_config)?;
    diagnostics.extend(
        run.diagnostics
            .iter()
            .map(|d| Diagnostic::new(d.stage.clone(), format!("{}: {}", quarter.label, d.message))),
    );
    Ok((Some(run.totals.ranking(quarter.label.clone())), diagnostics))
}

fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Kendall tau-a for a permutation: `perm[i]` is the position in the second
/// ranking of the item at position `i` in the first. Computed by merge-sort
/// inversion counting in `O(n log n)`.
pub fn kendall_tau_permutation(perm: &[usize]) -> Result<f64> {
    let n = perm.len();
    if n < 2 {
        return Err(Error::UndefinedSimilarity(format!("kendall tau needs >= 2 items, got {n}")));
    }
    let mut values = perm.to_vec();
    let mut buffer = vec![0; n];
    let discordant = count_inversions(&mut values, &mut buffer);
    let pairs = (n as u64) * (n as u64 - 1) / 2;
    Ok((pairs as i64 - 2 * discordant as i64) as f64 / pairs as f64)
}

fn count_inversions(values: &mut [usize], buffer: &mut [usize]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (left, right) = values.split_at_mut(mid);
        let (bl, br) = buffer.split_at_mut(mid);
        count_inversions(left, bl) + count_inversions(right, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if values[i] <= values[j] {
            buffer[k] = values[i];
            i += 1;
        } else {
            buffer[k] = values[j];
            count += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buffer[k..k + mid - i].copy_from_slice(&values[i..mid]);
    k += mid - i;
    buffer[k..k + n - j].copy_from_slice(&values[j..n]);
    values.copy_from_slice(&buffer[..n]);
    count
}

/// Kendall tau-a between two rankings of the same ticker set.
pub fn kendall_tau(a: &InfluenceRanking, b: &InfluenceRanking) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedSimilarity(format!(
            "empty ranking ({} vs {})",
            a.period, b.period
        )));
    }
    if a.len() != b.len() {
        return Err(Error::UndefinedSimilarity(format!(
            "rankings {} and {} cover different ticker sets",
            a.period, b.period
        )));
    }
    let position: HashMap<&str, usize> = b.tickers.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let perm = a
        .tickers
        .iter()
        .map(|t| {
            position.get(t.as_str()).copied().ok_or_else(|| {
                Error::UndefinedSimilarity(format!("`{t}` is ranked in {} but not in {}", a.period, b.period))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    kendall_tau_permutation(&perm)
}

/// Kendall tau between every pair of quarters on their common tickers.
#[derive(Debug, Clone, PartialEq)]
pub struct TauMatrix {
    labels: Vec<String>,
    values: Vec<Option<f64>>,
    diagnostics: Vec<Diagnostic>,
}

impl TauMatrix {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.len() + j]
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    /// `(t, mean tau over all quarter pairs t apart)` for every interval
    /// with at least one defined pair.
    pub fn interval_means(&self) -> Vec<(f64, f64)> {
        let q = self.len();
        (1..q)
            .filter_map(|t| {
                let defined: Vec<f64> = (0..q - t).filter_map(|i| self.get(i, i + t)).collect();
                (!defined.is_empty()).then(|| (t as f64, defined.iter().sum::<f64>() / defined.len() as f64))
            })
            .collect()
    }
}

pub fn tau_matrix(rankings: &[InfluenceRanking]) -> Result<TauMatrix> {
    let q = rankings.len();
    if q < 2 {
        return Err(Error::InsufficientSample(format!("insufficient quarters: {q} ranking(s), need >= 2")));
    }
    let upper: Vec<(usize, usize, Result<f64>)> = (0..q)
        .flat_map(|i| (i + 1..q).map(move |j| (i, j)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, j)| {
            let (a, b) = (&rankings[i], &rankings[j]);
            let in_b: std::collections::HashSet<&str> = b.tickers.iter().map(String::as_str).collect();
            let a_common = a.restricted_to(|t| in_b.contains(t));
            let in_a: std::collections::HashSet<&str> = a_common.tickers.iter().map(String::as_str).collect();
            let b_common = b.restricted_to(|t| in_a.contains(t));
            (i, j, kendall_tau(&a_common, &b_common))
        })
        .collect();
    let mut values = vec![None; q * q];
    let mut diagnostics = Vec::new();
    for i in 0..q {
        values[i * q + i] = Some(1.0);
    }
    for (i, j, tau) in upper {
        match tau {
            Ok(t) => {
                values[i * q + j] = Some(t);
                values[j * q + i] = Some(t);
            }
            Err(e) => diagnostics.push(Diagnostic::new("stability", format!("tau absent: {e}"))),
        }
    }
    Ok(TauMatrix {
        labels: rankings.iter().map(|r| r.period.clone()).collect(),
        values,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub tau0: f64,
    /// Characteristic time in quarters.
    pub lambda: f64,
    pub residual_rms: f64,
    /// `(interval, mean tau)` pairs the fit was made on.
    pub points: Vec<(f64, f64)>,
}

impl DecayFit {
    pub fn fitted(&self, t: f64) -> f64 {
        self.tau0 * (-t / self.lambda).exp()
    }
}

const MIN_DECAY_INTERVALS: usize = 4;
const MIN_RATE: f64 = 1e-9;

/// Fits the decay curve to the interval means of `matrix`.
pub fn decay_fit(matrix: &TauMatrix) -> Result<DecayFit> {
    fit_exponential_decay(&matrix.interval_means())
}

/// Least-squares fit of `tau0 exp(-t / lambda)` in tau space by
/// Levenberg-Marquardt, started from a log-linear regression on the points
/// with positive tau. The decay rate `1 / lambda` is kept positive.
pub fn fit_exponential_decay(points: &[(f64, f64)]) -> Result<DecayFit> {
    let mut intervals: Vec<f64> = points.iter().map(|p| p.0).collect();
    intervals.sort_by(f64::total_cmp);
    intervals.dedup();
    if intervals.len() < MIN_DECAY_INTERVALS {
        return Err(Error::InsufficientSample(format!(
            "decay fit needs >= {MIN_DECAY_INTERVALS} distinct intervals, got {}",
            intervals.len()
        )));
    }
    if points.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite decay point".into()));
    }
    let positive: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.1 > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::FitFailure("every mean tau is <= 0".into()));
    }
    let (mut a, mut k) = log_linear_start(&positive);
    k = k.max(MIN_RATE);

    let sse = |a: f64, k: f64| points.iter().map(|&(t, y)| (y - a * (-k * t).exp()).powi(2)).sum::<f64>();
    let mut current = sse(a, k);
    let mut mu = 1e-3;
    for _ in 0..500 {
        let (mut jaa, mut jak, mut jkk, mut ga, mut gk) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(t, y) in points {
            let e = (-k * t).exp();
            let r = y - a * e;
            let da = e;
            let dk = -a * t * e;
            jaa += da * da;
            jak += da * dk;
            jkk += dk * dk;
            ga += da * r;
            gk += dk * r;
        }
        let mut improved = false;
        while mu < 1e12 {
            let (maa, mkk) = (jaa * (1.0 + mu), jkk * (1.0 + mu));
            let det = maa * mkk - jak * jak;
            if det.abs() < f64::MIN_POSITIVE {
                mu *= 10.0;
                continue;
            }
            let step_a = (mkk * ga - jak * gk) / det;
            let step_k = (maa * gk - jak * ga) / det;
            let (na, nk) = (a + step_a, (k + step_k).max(MIN_RATE));
            let candidate = sse(na, nk);
            if candidate <= current {
                let converged = (na - a).abs() <= 1e-15 * a.abs().max(1e-300) && (nk - k).abs() <= 1e-15 * k;
                a = na;
                k = nk;
                let gain = current - candidate;
                current = candidate;
                mu = (mu / 10.0).max(1e-12);
                improved = !converged && gain > 0.0;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !(a.is_finite() && k.is_finite()) {
        return Err(Error::FitFailure("decay fit diverged".into()));
    }
    Ok(DecayFit {
        tau0: a,
        lambda: 1.0 / k,
        residual_rms: (current / points.len() as f64).sqrt(),
        points: points.to_vec(),
    })
}

/// `(tau0, rate)` from least squares on `ln tau = ln tau0 - rate t`.
fn log_linear_start(points: &[(f64, f64)]) -> (f64, f64) {
    if points.len() == 1 {
        return (points[0].1, MIN_RATE);
    }
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1.ln() - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    ((my - slope * mt).exp(), -slope)
}
