//! Significance of influence values.
//!
//! Two routes are provided. The Fisher route compares the z-transforms of
//! `rho(X,Y:M)` and `rho(X,Y:M,Z)` against a standard normal. The shuffle
//! route builds an empirical null by permuting every return series
//! independently (destroying all cross-correlation), recomputing the
//! influence tensor, and reading thresholds off the pooled `|d|` values.
//! The shuffle route is the default.

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::correlation::{
    triple_count, visit_conditioning_stock, Cutoff, InfluenceTensor, PartialCorrelationMatrix,
    StorageMode, MIN_OBSERVATIONS,
};
use crate::market_data::ReturnPanel;
use crate::seeding::{mix, stream_rng};
use crate::{Error, Result};

pub const DEFAULT_LEVEL: f64 = 0.02;
pub const DEFAULT_LEVELS: [f64; 5] = [0.01, 0.02, 0.05, 0.10, 0.20];
pub const DEFAULT_REPLICATES: usize = 10;
pub const DEFAULT_MAX_TRIPLES_PER_REPLICATE: usize = 1_000_000;

const SHUFFLE_KEY: u64 = 0x5348_5546;
const SAMPLE_KEY: u64 = 0x5341_4D50;
const LEVEL_TOLERANCE: f64 = 1e-12;

/// Fisher transform `z = artanh(rho)`.
pub fn fisher_z(rho: f64) -> Result<f64> {
    if rho.is_nan() || rho.abs() >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "fisher_z is defined for |rho| < 1, got {rho}"
        )));
    }
    Ok(artanh(rho))
}

// Evaluated on |x| so the transform is exactly odd.
fn artanh(x: f64) -> f64 {
    x.abs().atanh().copysign(x)
}

/// `(z(rho1) - z(rho2)) / sqrt(2 / (n - 3))`, or `None` outside the domain.
pub(crate) fn fisher_z_score(rho1: f64, rho2: f64, n: usize) -> Option<f64> {
    if n <= 3 || !(rho1.abs() < 1.0 && rho2.abs() < 1.0) {
        return None;
    }
    Some((artanh(rho1) - artanh(rho2)) / (2.0 / (n - 3) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherTest {
    pub z_score: f64,
    /// Two-tailed p-value under the standard normal.
    pub p_value: f64,
}

/// Tests whether `rho(X,Y:M)` and `rho(X,Y:M,Z)` differ, for `n`
/// observations. For large `n` the t-test reduces to this z-test.
pub fn fisher_difference_test(rho1: f64, rho2: f64, n: usize) -> Result<FisherTest> {
    if n <= 3 {
        return Err(Error::InsufficientSample(format!(
            "fisher test needs n > 3, got {n}"
        )));
    }
    fisher_z(rho1)?;
    fisher_z(rho2)?;
    let z_score = fisher_z_score(rho1, rho2, n).expect("domain checked");
    Ok(FisherTest {
        z_score,
        p_value: erfc(z_score.abs() / std::f64::consts::SQRT_2).min(1.0),
    })
}

/// Accepts levels in `(0, 0.5]`.
pub fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "significance level {level} outside (0, 0.5]"
        )))
    }
}

/// Two-tailed standard normal critical value: `|z| > critical` with
/// probability `level`.
pub fn critical_z(level: f64) -> Result<f64> {
    check_level(level)?;
    Ok(Normal::standard().inverse_cdf(1.0 - level / 2.0))
}

/// One-tailed standard normal critical value: `z > critical` with
/// probability `level`.
pub fn one_tailed_critical_z(level: f64) -> Result<f64> {
    check_level(level)?;
    Ok(Normal::standard().inverse_cdf(1.0 - level))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Thresholds are critical values of the Fisher z-difference statistic.
    Fisher,
    /// Thresholds are quantiles of `|d|` under the shuffle null.
    Shuffle,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Fisher => "fisher",
            Provenance::Shuffle => "shuffle",
        })
    }
}

/// Moments of the pooled null distribution. `kurtosis` is the plain
/// (non-excess) fourth standardized moment, 3 for a Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullMoments {
    pub mean: f64,
    pub std_dev: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub samples: usize,
}

impl NullMoments {
    pub fn of(values: &[f64]) -> NullMoments {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for v in values {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
        NullMoments {
            mean,
            std_dev: m2.sqrt(),
            skewness: m3 / m2.powf(1.5),
            kurtosis: m4 / (m2 * m2),
            samples: values.len(),
        }
    }
}

/// Thresholds per two-tailed significance level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    levels: Vec<f64>,
    thresholds: Vec<f64>,
    provenance: Provenance,
    replicates: usize,
    null_moments: Option<NullMoments>,
    warnings: Vec<String>,
}

impl ThresholdTable {
    /// Levels are sorted ascending; thresholds must be non-negative and
    /// non-increasing in the level.
    pub fn new(
        levels: Vec<f64>,
        thresholds: Vec<f64>,
        provenance: Provenance,
        replicates: usize,
        null_moments: Option<NullMoments>,
    ) -> Result<Self> {
        if levels.len() != thresholds.len() || levels.is_empty() {
            return Err(Error::InvalidArgument(
                "threshold table needs one threshold per level".into(),
            ));
        }
        for &l in &levels {
            check_level(l)?;
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("levels must be strictly increasing".into()));
        }
        if thresholds.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidArgument("thresholds must be finite and >= 0".into()));
        }
        if thresholds.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "thresholds must not grow with the level".into(),
            ));
        }
        Ok(Self {
            levels,
            thresholds,
            provenance,
            replicates,
            null_moments,
            warnings: Vec::new(),
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn null_moments(&self) -> Option<&NullMoments> {
        self.null_moments.as_ref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn threshold(&self, level: f64) -> Option<f64> {
        self.levels
            .iter()
            .position(|l| (l - level).abs() <= LEVEL_TOLERANCE)
            .map(|i| self.thresholds[i])
    }

    /// Cutoff rule at `level` for a tensor computed from `n_obs` observations.
    pub fn cutoff(&self, level: f64, n_obs: usize) -> Result<Cutoff> {
        let threshold = self.threshold(level).ok_or_else(|| {
            Error::Config(format!(
                "level {level} is not in the threshold table ({:?})",
                self.levels
            ))
        })?;
        Ok(match self.provenance {
            Provenance::Shuffle => Cutoff::Influence { threshold },
            Provenance::Fisher => Cutoff::FisherZ {
                critical: threshold,
                n_obs,
            },
        })
    }
}

fn sorted_levels(levels: &[f64]) -> Result<Vec<f64>> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("no significance levels given".into()));
    }
    let mut sorted = levels.to_vec();
    for &l in &sorted {
        check_level(l)?;
    }
    sorted.sort_by(f64::total_cmp);
    sorted.dedup_by(|a, b| (*a - *b).abs() <= LEVEL_TOLERANCE);
    Ok(sorted)
}

/// Critical values of the Fisher z-difference statistic per level.
pub fn fisher_table(levels: &[f64]) -> Result<ThresholdTable> {
    let levels = sorted_levels(levels)?;
    let thresholds = levels.iter().map(|&l| critical_z(l)).collect::<Result<_>>()?;
    ThresholdTable::new(levels, thresholds, Provenance::Fisher, 0, None)
}

fn shuffle_series(values: &[f64], rng: &mut rand_chacha::ChaCha8Rng, segment: Option<usize>) -> Vec<f64> {
    match segment {
        None | Some(0) | Some(1) => {
            let mut out = values.to_vec();
            out.shuffle(rng);
            out
        }
        Some(len) => {
            let mut segments: Vec<&[f64]> = values.chunks(len).collect();
            if segments.len() > 1 {
                segments.shuffle(rng);
            }
            segments.concat()
        }
    }
}

/// Independently permutes every stock column and the index. With a
/// segment length, whole consecutive blocks are permuted and order within
/// each block is preserved (the last block may be shorter). A segment
/// length of 0 or 1 is an element-wise shuffle. Deterministic in `seed`:
/// each column draws from its own counter-based stream.
pub fn shuffle_panel(panel: &ReturnPanel, seed: u64, segment_length: Option<usize>) -> ReturnPanel {
    let columns: Vec<Vec<f64>> = panel
        .columns()
        .par_iter()
        .enumerate()
        .map(|(i, col)| shuffle_series(col, &mut stream_rng(seed, SHUFFLE_KEY, i as u64), segment_length))
        .collect();
    let index = shuffle_series(
        panel.index_returns(),
        &mut stream_rng(seed, SHUFFLE_KEY, u64::MAX),
        segment_length,
    );
    panel.with_values(columns, index)
}

/// Parameters of the shuffle null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleSpec {
    pub levels: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub max_triples_per_replicate: usize,
    pub segment_length: Option<usize>,
}

impl Default for ShuffleSpec {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS.to_vec(),
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            max_triples_per_replicate: DEFAULT_MAX_TRIPLES_PER_REPLICATE,
            segment_length: None,
        }
    }
}

/// Every `d` value of the panel's tensor, or a uniform random subsample of
/// `max` of them, in enumeration order.
fn influence_sample(partials: &PartialCorrelationMatrix, max: usize, seed: u64) -> Vec<f64> {
    let n = partials.n();
    let total = triple_count(n) as usize;
    let per_z = total / n.max(1);
    let chosen: Option<Vec<usize>> = (max < total).then(|| {
        let mut rng = stream_rng(seed, SAMPLE_KEY, 0);
        let mut picks = index::sample(&mut rng, total, max).into_vec();
        picks.sort_unstable();
        picks
    });
    let blocks: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|z| {
            let mut row = Vec::with_capacity(per_z);
            visit_conditioning_stock(partials, z, |_, _, rho_m, rho_mz| {
                row.push(rho_mz.map_or(f64::NAN, |r| rho_m - r));
            });
            match &chosen {
                None => row.retain(|d| !d.is_nan()),
                Some(picks) => {
                    let lo = picks.partition_point(|&p| p < z * per_z);
                    let hi = picks.partition_point(|&p| p < (z + 1) * per_z);
                    row = picks[lo..hi]
                        .iter()
                        .map(|&p| row[p - z * per_z])
                        .filter(|d| !d.is_nan())
                        .collect();
                }
            }
            row
        })
        .collect();
    blocks.concat()
}

/// Linear-interpolation quantile of ascending `sorted` at probability `p`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pooled influence values of the shuffle null, replicate by replicate.
pub fn shuffle_null_sample(panel: &ReturnPanel, spec: &ShuffleSpec) -> Result<Vec<f64>> {
    if spec.replicates == 0 {
        return Err(Error::InvalidArgument("at least one shuffle replicate is required".into()));
    }
    if spec.max_triples_per_replicate == 0 {
        return Err(Error::InvalidArgument("max_triples_per_replicate must be positive".into()));
    }
    if panel.n_stocks() < 3 || panel.n_obs() < MIN_OBSERVATIONS {
        return Err(Error::InsufficientSample(format!(
            "shuffle null needs >= 3 stocks and >= {MIN_OBSERVATIONS} observations, got {} x {}",
            panel.n_stocks(),
            panel.n_obs()
        )));
    }
    let per_replicate: Vec<Vec<f64>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let replicate_seed = mix(spec.seed, r as u64);
            let shuffled = shuffle_panel(panel, replicate_seed, spec.segment_length);
            let partials = PartialCorrelationMatrix::compute(&shuffled)?;
            Ok(influence_sample(&partials, spec.max_triples_per_replicate, replicate_seed))
        })
        .collect::<Result<_>>()?;
    Ok(per_replicate.concat())
}

/// Thresholds from the shuffle null: for two-tailed level `l`, the
/// threshold is the `1 - l` quantile of the pooled `|d|` (equivalently the
/// `1 - l/2` quantile of the symmetric signed distribution), so a null
/// triple exceeds it with probability `l`.
pub fn empirical_thresholds(panel: &ReturnPanel, spec: &ShuffleSpec) -> Result<ThresholdTable> {
    let levels = sorted_levels(&spec.levels)?;
    let pooled = shuffle_null_sample(panel, spec)?;
    if pooled.is_empty() {
        return Err(Error::Degenerate("shuffle null produced no influence values".into()));
    }
    let moments = NullMoments::of(&pooled);
    let mut magnitudes: Vec<f64> = pooled.iter().map(|d| d.abs()).collect();
    magnitudes.sort_by(f64::total_cmp);
    let thresholds = levels.iter().map(|&l| quantile_sorted(&magnitudes, 1.0 - l)).collect();
    let mut table = ThresholdTable::new(levels, thresholds, Provenance::Shuffle, spec.replicates, Some(moments))?;
    let needed = 10.0 / table.levels[0];
    if (pooled.len() as f64) < needed {
        table.warnings.push(format!(
            "only {} pooled null samples; at least {needed:.0} are needed for the {} level",
            pooled.len(),
            table.levels[0]
        ));
    }
    Ok(table)
}

/// Accept/reject outcome for one triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceDecision {
    pub x: u32,
    pub y: u32,
    pub z: u32,
    pub d: f64,
    /// Fisher z-difference statistic, when defined.
    pub z_score: Option<f64>,
    pub passes: bool,
    pub level: f64,
}

/// Keeps the triples significant at `level` (both tails) and reports a
/// decision for every input triple.
pub fn apply_significance(
    tensor: &InfluenceTensor,
    table: &ThresholdTable,
    level: f64,
) -> Result<(InfluenceTensor, Vec<SignificanceDecision>)> {
    let cutoff = table.cutoff(level, tensor.n_obs())?;
    let decisions = tensor
        .entries()
        .iter()
        .map(|e| SignificanceDecision {
            x: e.x,
            y: e.y,
            z: e.z,
            d: e.d,
            z_score: fisher_z_score(e.rho_m, e.rho_mz, tensor.n_obs()),
            passes: cutoff.passes(e.rho_m, e.rho_mz),
            level,
        })
        .collect();
    Ok((tensor.filter(cutoff), decisions))
}

/// Convenience: significant-only tensor of `panel` at `level` under `table`.
pub fn significant_tensor(panel: &ReturnPanel, table: &ThresholdTable, level: f64) -> Result<InfluenceTensor> {
    let cutoff = table.cutoff(level, panel.n_obs())?;
    crate::correlation::compute_influence_tensor(panel, StorageMode::SignificantOnly(cutoff))
}
