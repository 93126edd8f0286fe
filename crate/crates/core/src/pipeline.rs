//! The end-to-end influence run: partial correlations, significance
//! thresholds, the filtered `d(X:Z)` matrix and `d(X)`.
//!
//! The tensor itself is never materialized here; the aggregate is streamed
//! from the partial matrix. Callers that need the triples (exports, tests)
//! rebuild them from [`InfluenceRun::partials`] with the run's cutoff.

use serde::{Deserialize, Serialize};

use crate::correlation::{tensor_from_partials, Cutoff, InfluenceTensor, PartialCorrelationMatrix, StorageMode};
use crate::influence::{aggregate_from_partials, total_influence, Direction, InfluenceMatrix, TotalInfluence};
use crate::market_data::ReturnPanel;
use crate::significance::{
    check_level, empirical_thresholds, fisher_table, ShuffleSpec, ThresholdTable, DEFAULT_LEVEL, DEFAULT_LEVELS,
    DEFAULT_MAX_TRIPLES_PER_REPLICATE, DEFAULT_REPLICATES,
};
use crate::{Diagnostic, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Shuffle,
    Fisher,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shuffle" => Ok(Method::Shuffle),
            "fisher" => Ok(Method::Fisher),
            other => Err(Error::Config(format!(
                "unknown significance method `{other}` (expected shuffle|fisher)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceConfig {
    pub method: Method,
    /// Two-tailed level used for filtering.
    pub level: f64,
    /// Levels reported in the threshold table; `level` is always added.
    pub levels: Vec<f64>,
    /// Average only significant triples. When false every triple counts.
    pub filtered: bool,
    pub replicates: usize,
    pub seed: u64,
    pub max_triples_per_replicate: usize,
    pub segment_length: Option<usize>,
    pub direction: Direction,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            method: Method::Shuffle,
            level: DEFAULT_LEVEL,
            levels: DEFAULT_LEVELS.to_vec(),
            filtered: true,
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            max_triples_per_replicate: DEFAULT_MAX_TRIPLES_PER_REPLICATE,
            segment_length: None,
            direction: Direction::Outgoing,
        }
    }
}

impl InfluenceConfig {
    pub fn validate(&self) -> Result<()> {
        check_level(self.level).map_err(|e| Error::Config(e.to_string()))?;
        for &l in &self.levels {
            check_level(l).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.method == Method::Shuffle && self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.max_triples_per_replicate == 0 {
            return Err(Error::Config("max_triples_per_replicate must be positive".into()));
        }
        Ok(())
    }

    fn all_levels(&self) -> Vec<f64> {
        let mut levels = self.levels.clone();
        levels.push(self.level);
        levels
    }

    /// Threshold table for `panel` under this configuration.
    pub fn thresholds(&self, panel: &ReturnPanel) -> Result<ThresholdTable> {
        match self.method {
            Method::Fisher => fisher_table(&self.all_levels()),
            Method::Shuffle => empirical_thresholds(
                panel,
                &ShuffleSpec {
                    levels: self.all_levels(),
                    replicates: self.replicates,
                    seed: self.seed,
                    max_triples_per_replicate: self.max_triples_per_replicate,
                    segment_length: self.segment_length,
                },
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InfluenceRun {
    pub partials: PartialCorrelationMatrix,
    pub n_obs: usize,
    pub table: ThresholdTable,
    pub cutoff: Cutoff,
    pub matrix: InfluenceMatrix,
    pub totals: TotalInfluence,
    pub diagnostics: Vec<Diagnostic>,
}

impl InfluenceRun {
    /// The triples passing the run's cutoff.
    pub fn significant_tensor(&self) -> Result<InfluenceTensor> {
        tensor_from_partials(&self.partials, self.n_obs, StorageMode::SignificantOnly(self.cutoff))
    }

    /// Every triple; only available up to the dense size limit.
    pub fn dense_tensor(&self) -> Result<InfluenceTensor> {
        tensor_from_partials(&self.partials, self.n_obs, StorageMode::Dense)
    }
}

pub fn run_influence(panel: &ReturnPanel, config: &InfluenceConfig) -> Result<InfluenceRun> {
    config.validate()?;
    let partials = PartialCorrelationMatrix::compute(panel)?;
    let table = config.thresholds(panel)?;
    let cutoff = table.cutoff(config.level, panel.n_obs())?;
    let matrix = aggregate_from_partials(&partials, config.filtered.then_some(cutoff));
    let totals = total_influence(&matrix, config.direction);

    let mut diagnostics: Vec<Diagnostic> = partials.diagnostics().to_vec();
    diagnostics.extend(table.warnings().iter().map(|w| Diagnostic::new("significance", w.clone())));
    diagnostics.extend(totals.diagnostics.iter().cloned());
    Ok(InfluenceRun {
        partials,
        n_obs: panel.n_obs(),
        table,
        cutoff,
        matrix,
        totals,
        diagnostics,
    })
}
