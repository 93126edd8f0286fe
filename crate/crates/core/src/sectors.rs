//! Sector decomposition of influence.
//!
//! `d^S_X` is the mean of `d(X:Z)` over the stocks `Z` of sector `S`
//! (excluding `X` itself), `beta^S_X = d^S_X / sum_S d^S_X` attributes a
//! stock's influence to sectors, the prediction rate checks the attribution
//! against the classification, and sector closeness correlates the
//! influence vectors of two sectors across stocks.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::pearson;
use crate::influence::InfluenceMatrix;
use crate::market_data::ReturnPanel;
use crate::pipeline::{run_influence, InfluenceConfig};
use crate::seeding::{mix, stream_rng};
use crate::{Diagnostic, Error, Result};

const PERMUTE_KEY: u64 = 0x5345_4354;

/// Ticker to sector label. Labels are kept in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorMap {
    assignments: Vec<(String, String)>,
    lookup: HashMap<String, usize>,
    labels: Vec<String>,
}

impl SectorMap {
    pub fn new(assignments: Vec<(String, String)>) -> Result<Self> {
        if assignments.is_empty() {
            return Err(Error::Config("sector map is empty".into()));
        }
        let mut lookup = HashMap::with_capacity(assignments.len());
        for (i, (ticker, sector)) in assignments.iter().enumerate() {
            if ticker.is_empty() || sector.is_empty() {
                return Err(Error::Config(format!("empty ticker or sector in row {}", i + 1)));
            }
            if let Some(&prev) = lookup.get(ticker) {
                let (_, previous): &(String, String) = &assignments[prev];
                if previous != sector {
                    return Err(Error::Config(format!(
                        "`{ticker}` is assigned to both `{previous}` and `{sector}`"
                    )));
                }
                continue;
            }
            lookup.insert(ticker.clone(), i);
        }
        let labels: BTreeSet<&String> = assignments.iter().map(|(_, s)| s).collect();
        let labels = labels.into_iter().cloned().collect();
        Ok(Self {
            assignments,
            lookup,
            labels,
        })
    }

    pub fn sector_of(&self, ticker: &str) -> Option<&str> {
        self.lookup.get(ticker).map(|&i| self.assignments[i].1.as_str())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// `(ticker, sector)` pairs in input order.
    pub fn assignments(&self) -> &[(String, String)] {
        &self.assignments
    }

    /// Fails with the first ticker that has no sector.
    pub fn check_covers(&self, tickers: &[String]) -> Result<()> {
        match tickers.iter().find(|t| !self.lookup.contains_key(t.as_str())) {
            Some(t) => Err(Error::MissingSector(t.clone())),
            None => Ok(()),
        }
    }

    /// Same tickers and sector sizes with the labels randomly reassigned.
    pub fn permuted(&self, seed: u64) -> SectorMap {
        let mut sectors: Vec<String> = self.assignments.iter().map(|(_, s)| s.clone()).collect();
        sectors.shuffle(&mut stream_rng(seed, PERMUTE_KEY, 0));
        let assignments = self
            .assignments
            .iter()
            .zip(sectors)
            .map(|((t, _), s)| (t.clone(), s))
            .collect();
        SectorMap::new(assignments).expect("relabeling keeps the map valid")
    }
}

/// Reads a `ticker,sector` CSV with a header row.
pub fn load_sector_map<R: Read>(source: R) -> Result<SectorMap> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing `{name}` column"),
            })
    };
    let (ti, si) = (column("ticker")?, column("sector")?);
    let mut assignments = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| {
            record.get(i).map(str::to_string).ok_or_else(|| Error::Parse {
                line,
                message: "row has too few fields".into(),
            })
        };
        assignments.push((field(ti)?, field(si)?));
    }
    SectorMap::new(assignments)
}

pub fn load_sector_map_path(path: impl AsRef<Path>) -> Result<SectorMap> {
    load_sector_map(std::fs::File::open(path)?)
}

/// `d^S_X` for every stock `X` (rows) and sector `S` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SectorInfluence {
    pub tickers: Vec<String>,
    pub sectors: Vec<String>,
    /// The sector of each ticker, as an index into `sectors`.
    pub membership: Vec<usize>,
    values: Vec<Option<f64>>,
}

impl SectorInfluence {
    pub fn get(&self, stock: usize, sector: usize) -> Option<f64> {
        self.values[stock * self.sectors.len() + sector]
    }

    pub fn row(&self, stock: usize) -> &[Option<f64>] {
        let s = self.sectors.len();
        &self.values[stock * s..(stock + 1) * s]
    }

    /// The vector `d^S` across stocks.
    pub fn column(&self, sector: usize) -> Vec<Option<f64>> {
        (0..self.tickers.len()).map(|x| self.get(x, sector)).collect()
    }
}

/// Averages `d(X:Z)` over the stocks `Z` of each sector, skipping `Z = X`
/// and absent cells. A sector with no usable member for `X` is absent.
pub fn sector_influence(matrix: &InfluenceMatrix, sectors: &SectorMap) -> Result<SectorInfluence> {
    let tickers = matrix.tickers().to_vec();
    sectors.check_covers(&tickers)?;
    let labels: Vec<String> = {
        let present: BTreeSet<&str> = tickers.iter().filter_map(|t| sectors.sector_of(t)).collect();
        present.into_iter().map(str::to_string).collect()
    };
    let membership: Vec<usize> = tickers
        .iter()
        .map(|t| {
            let s = sectors.sector_of(t).expect("covered");
            labels.iter().position(|l| l == s).expect("label collected")
        })
        .collect();
    let n = tickers.len();
    let s = labels.len();
    let values: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .flat_map_iter(|x| {
            let mut sums = vec![0.0; s];
            let mut counts = vec![0usize; s];
            for z in 0..n {
                if let Some(d) = matrix.get(x, z) {
                    sums[membership[z]] += d;
                    counts[membership[z]] += 1;
                }
            }
            (0..s).map(move |k| (counts[k] > 0).then(|| sums[k] / counts[k] as f64))
        })
        .collect();
    Ok(SectorInfluence {
        tickers,
        sectors: labels,
        membership,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionFlag {
    Ok,
    /// `d^S_X` has both signs, so raw betas fall outside `[0, 1]`.
    MixedSign,
    /// The sum of `d^S_X` vanishes; no betas are emitted.
    Undefined,
}

impl std::fmt::Display for AttributionFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttributionFlag::Ok => "ok",
            AttributionFlag::MixedSign => "mixed_sign",
            AttributionFlag::Undefined => "undefined",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorAttribution {
    pub ticker: String,
    pub d_values: Vec<Option<f64>>,
    pub betas: Vec<Option<f64>>,
    /// Betas over `max(d^S_X, 0)`; absent when no sector is positive.
    pub rectified: Vec<Option<f64>>,
    pub flag: AttributionFlag,
}

const UNDEFINED_RATIO: f64 = 1e-12;

/// Shares `v / sum(v)`, nudged by a few ulps where needed so that they add
/// up to exactly one when summed in order.
fn normalized(values: &[Option<f64>], total: f64) -> Vec<Option<f64>> {
    let mut shares: Vec<Option<f64>> = values.iter().map(|v| v.map(|v| v / total)).collect();
    let present: Vec<usize> = (0..shares.len()).filter(|&i| shares[i].is_some()).collect();
    let sum = |shares: &[Option<f64>]| shares.iter().flatten().sum::<f64>();
    for &i in present.iter().rev() {
        for _ in 0..16 {
            let s = sum(&shares);
            if s == 1.0 {
                return shares;
            }
            let v = shares[i].as_mut().expect("present");
            let corrected = *v + (1.0 - s);
            *v = if corrected != *v {
                corrected
            } else if s < 1.0 {
                v.next_up()
            } else {
                v.next_down()
            };
        }
    }
    shares
}

pub fn sector_betas(influence: &SectorInfluence) -> Vec<SectorAttribution> {
    (0..influence.tickers.len())
        .into_par_iter()
        .map(|x| {
            let d_values = influence.row(x).to_vec();
            let present: Vec<f64> = d_values.iter().flatten().copied().collect();
            let total: f64 = present.iter().sum();
            let scale = present.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let undefined = present.is_empty() || scale == 0.0 || total.abs() < UNDEFINED_RATIO * scale;
            let mixed = present.iter().any(|&v| v > 0.0) && present.iter().any(|&v| v < 0.0);

            let positive: Vec<Option<f64>> = d_values.iter().map(|v| v.map(|v| v.max(0.0))).collect();
            let positive_total: f64 = positive.iter().flatten().sum();
            let rectified = if positive_total > 0.0 {
                normalized(&positive, positive_total)
            } else {
                vec![None; d_values.len()]
            };
            let (betas, flag) = if undefined {
                (vec![None; d_values.len()], AttributionFlag::Undefined)
            } else {
                let flag = if mixed { AttributionFlag::MixedSign } else { AttributionFlag::Ok };
                (normalized(&d_values, total), flag)
            };
            SectorAttribution {
                ticker: influence.tickers[x].clone(),
                d_values,
                betas,
                rectified,
                flag,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaKind {
    Raw,
    /// Shares of the positive part only. Raw shares are unstable to rank when
    /// a stock's sector influences have mixed signs and nearly cancel.
    #[default]
    Rectified,
}

impl std::str::FromStr for BetaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" => Ok(BetaKind::Raw),
            "rectified" => Ok(BetaKind::Rectified),
            other => Err(Error::Config(format!("unknown beta kind `{other}` (expected raw|rectified)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRate {
    pub sector: String,
    pub n_members: usize,
    pub rate: f64,
    /// `N_S / N`, the rate of picking stocks at random.
    pub baseline: f64,
}

/// For every sector `S` with `N_S` members, the fraction of the top `N_S`
/// stocks by `beta^S` that belong to `S`. Stocks without a defined beta are
/// left out of both the ranking and the counts. Ties are broken by ticker.
pub fn prediction_rate(
    attributions: &[SectorAttribution],
    influence: &SectorInfluence,
    kind: BetaKind,
) -> Result<Vec<PredictionRate>> {
    if attributions.len() != influence.tickers.len() {
        return Err(Error::InvalidArgument("attributions do not match the sector influence".into()));
    }
    let beta = |a: &SectorAttribution, s: usize| match kind {
        BetaKind::Raw => a.betas[s],
        BetaKind::Rectified => a.rectified[s],
    };
    let usable: Vec<usize> = (0..attributions.len())
        .filter(|&x| (0..influence.sectors.len()).all(|s| beta(&attributions[x], s).is_some()))
        .collect();
    let n = usable.len();
    if n == 0 {
        return Err(Error::Degenerate("no stock has a defined attribution".into()));
    }
    Ok((0..influence.sectors.len())
        .map(|s| {
            let members = usable.iter().filter(|&&x| influence.membership[x] == s).count();
            let mut order = usable.clone();
            order.sort_by(|&a, &b| {
                let (ba, bb) = (beta(&attributions[a], s).unwrap(), beta(&attributions[b], s).unwrap());
                bb.total_cmp(&ba).then_with(|| attributions[a].ticker.cmp(&attributions[b].ticker))
            });
            let hits = order[..members].iter().filter(|&&x| influence.membership[x] == s).count();
            PredictionRate {
                sector: influence.sectors[s].clone(),
                n_members: members,
                rate: if members == 0 { 0.0 } else { hits as f64 / members as f64 },
                baseline: members as f64 / n as f64,
            }
        })
        .collect())
}

/// `rho(d^Si, d^Sj)` across stocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorClosenessMatrix {
    pub sectors: Vec<String>,
    values: Vec<Option<f64>>,
}

impl SectorClosenessMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.sectors.len() + j]
    }
}

const MIN_COMMON_STOCKS: usize = 3;

/// Pearson correlation of two sector columns on the stocks where both are
/// present. Absent when fewer than three stocks remain or either column is
/// constant on them.
pub fn sector_closeness(influence: &SectorInfluence) -> SectorClosenessMatrix {
    let s = influence.sectors.len();
    let columns: Vec<Vec<Option<f64>>> = (0..s).map(|k| influence.column(k)).collect();
    let mut values = vec![None; s * s];
    for i in 0..s {
        for j in i..s {
            let (a, b): (Vec<f64>, Vec<f64>) = columns[i]
                .iter()
                .zip(&columns[j])
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .unzip();
            if a.len() < MIN_COMMON_STOCKS {
                continue;
            }
            let rho = if i == j {
                pearson(&a, &b).ok().map(|_| 1.0)
            } else {
                pearson(&a, &b).ok()
            };
            values[i * s + j] = rho;
            values[j * s + i] = rho;
        }
    }
    SectorClosenessMatrix {
        sectors: influence.sectors.clone(),
        values,
    }
}

/// Sector influence in consecutive windows of `window` observations
/// advanced by `step`. Each window gets its own shuffle seed.
pub fn rolling_sector_influence(
    panel: &ReturnPanel,
    sectors: &SectorMap,
    config: &InfluenceConfig,
    window: usize,
    step: usize,
) -> Result<Vec<(String, SectorInfluence, Vec<Diagnostic>)>> {
    if window == 0 || step == 0 {
        return Err(Error::InvalidArgument("window and step must be positive".into()));
    }
    if window > panel.n_obs() {
        return Err(Error::InsufficientSample(format!(
            "window of {window} exceeds the {} observations",
            panel.n_obs()
        )));
    }
    sectors.check_covers(panel.tickers())?;
    let starts: Vec<usize> = (0..=panel.n_obs() - window).step_by(step).collect();
    starts
        .par_iter()
        .enumerate()
        .map(|(w, &start)| {
            let slice = panel.slice_rows(start..start + window)?;
            let window_config = InfluenceConfig {
                seed: mix(config.seed, w as u64),
                ..config.clone()
            };
            let run = run_influence(&slice, &window_config)?;
            let label = format!("{}..{}", slice.dates()[0], slice.dates()[window - 1]);
            Ok((label, sector_influence(&run.matrix, sectors)?, run.diagnostics))
        })
        .collect()
}
