//! Partial-correlation influence analysis for equity return panels.
//!
//! The crate turns a panel of adjusted closing prices into statistically
//! validated influence relationships between stocks. The influence of a
//! stock `Z` on the pair `(X, Y)` is the drop in the index-conditioned
//! partial correlation `rho(X,Y:M)` once `Z` is also conditioned on:
//!
//! ```text
//! d(X,Y:Z) = rho(X,Y:M) - rho(X,Y:M,Z)
//! ```
//!
//! Downstream modules aggregate those triples into stock-to-stock influence,
//! track how influence rankings evolve quarter by quarter, and decompose each
//! stock's influence by economic sector.
//!
//! Module map:
//! - [`market_data`]: price ingestion, liquidity filter, log returns
//! - [`correlation`]: Pearson and partial correlations, the triple kernel
//! - [`significance`]: Fisher-transform and shuffle significance tests
//! - [`influence`]: `d(X:Z)`, `d(X)` and rankings
//! - [`stability`]: quarterly rankings, Kendall tau, exponential decay fit
//! - [`sectors`]: sector influence, attribution betas, closeness
//! - [`pipeline`]: the end-to-end influence run shared by the CLI
//! - [`export`]: the CSV / JSON / binary exchange formats
//! - [`synthetic`]: simulated markets with known structure

pub mod correlation;
pub mod error;
pub mod export;
pub mod influence;
pub mod market_data;
pub mod pipeline;
pub mod sectors;
pub mod significance;
pub mod stability;
pub mod synthetic;

mod seeding;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

/// A non-fatal event recorded while processing, e.g. a skipped triple or a
/// dropped quarter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub stage: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(stage: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}
