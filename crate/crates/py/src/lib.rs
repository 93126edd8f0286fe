//! Python bindings for the influence pipeline: return panels, the
//! significance-filtered influence run, quarterly stability and sector
//! attribution.

use std::collections::HashMap;
use std::path::PathBuf;

use chrono::NaiveDate;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pcinf_core::correlation;
use pcinf_core::influence::{rank_by_influence, Direction};
use pcinf_core::market_data::{self, ReturnPanel as CorePanel};
use pcinf_core::pipeline::{self, InfluenceRun, Method};
use pcinf_core::sectors::{self, BetaKind, SectorMap};
use pcinf_core::significance;
use pcinf_core::stability::{self, QuarterCalendar};
use pcinf_core::synthetic::{self, MarketDynamics};
use pcinf_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::SingularConditioning { .. }
        | Error::OutOfRange { .. }
        | Error::Degenerate(_)
        | Error::UndefinedSimilarity(_)
        | Error::FitFailure(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// `(ticker, flat_fraction, retained)` per input ticker.
type LiquidityRows = Vec<(String, f64, bool)>;

/// `ticker -> (betas, rectified betas, flag)`.
type BetaTable = HashMap<String, (Vec<Option<f64>>, Vec<Option<f64>>, String)>;

fn square<T>(n: usize, cell: impl Fn(usize, usize) -> T) -> Vec<Vec<T>> {
    (0..n).map(|i| (0..n).map(|j| cell(i, j)).collect()).collect()
}

/// Daily log returns of N stocks plus the conditioning index.
#[pyclass(name = "ReturnPanel", module = "pcinf", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyReturnPanel {
    inner: CorePanel,
}

#[pymethods]
impl PyReturnPanel {
    /// `returns` holds one list per stock; dates are ISO strings.
    #[new]
    fn new(
        tickers: Vec<String>,
        dates: Vec<String>,
        returns: Vec<Vec<f64>>,
        index_ticker: &str,
        index_returns: Vec<f64>,
    ) -> PyResult<Self> {
        let dates = dates
            .iter()
            .map(|d| {
                NaiveDate::parse_from_str(d, "%Y-%m-%d")
                    .map_err(|e| PyValueError::new_err(format!("date `{d}`: {e}")))
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = CorePanel::new(tickers, dates, returns, index_ticker, index_returns).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Reads a wide returns table `date,<index>,<ticker>...`. Without
    /// `index` the column after `date` is taken as the index.
    #[staticmethod]
    #[pyo3(signature = (path, index=None))]
    fn from_csv(path: PathBuf, index: Option<String>) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        let index = match index {
            Some(i) => i,
            None => String::from_utf8_lossy(&bytes)
                .lines()
                .next()
                .and_then(|h| h.split(',').nth(1))
                .map(|s| s.trim().trim_matches('"').to_string())
                .ok_or_else(|| PyValueError::new_err("cannot determine the index column"))?,
        };
        let inner = market_data::read_returns_csv(&bytes[..], &index).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Loads a long-format price file, drops illiquid stocks (the index is
    /// exempt) and returns the panel with `(ticker, flat_fraction, retained)`.
    #[staticmethod]
    #[pyo3(signature = (path, index, max_flat_fraction=market_data::DEFAULT_MAX_FLAT_FRACTION))]
    fn from_prices(path: PathBuf, index: &str, max_flat_fraction: f64) -> PyResult<(Self, LiquidityRows)> {
        let (prices, _) = market_data::load_prices_path(&path).map_err(py_err)?;
        if prices.position(index).is_none() {
            return Err(py_err(Error::MissingIndex(index.to_string())));
        }
        let (liquid, reports) =
            market_data::filter_illiquid_except(&prices, max_flat_fraction, &[index]).map_err(py_err)?;
        let inner = market_data::log_returns(&liquid, index).map_err(py_err)?;
        let reports = reports
            .into_iter()
            .map(|r| (r.ticker, r.flat_fraction, r.retained))
            .collect();
        Ok((Self { inner }, reports))
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        market_data::write_returns_csv(&self.inner, file).map_err(py_err)
    }

    #[getter]
    fn tickers(&self) -> Vec<String> {
        self.inner.tickers().to_vec()
    }

    #[getter]
    fn dates(&self) -> Vec<String> {
        self.inner.dates().iter().map(ToString::to_string).collect()
    }

    #[getter]
    fn index_ticker(&self) -> String {
        self.inner.index_ticker().to_string()
    }

    #[getter]
    fn n_stocks(&self) -> usize {
        self.inner.n_stocks()
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs()
    }

    /// Returns of one stock, or of the index when `ticker` is the index.
    fn returns(&self, ticker: &str) -> PyResult<Vec<f64>> {
        if ticker == self.inner.index_ticker() {
            return Ok(self.inner.index_returns().to_vec());
        }
        let i = self
            .inner
            .tickers()
            .iter()
            .position(|t| t == ticker)
            .ok_or_else(|| PyValueError::new_err(format!("unknown ticker `{ticker}`")))?;
        Ok(self.inner.returns(i).to_vec())
    }

    /// Rows `start..end` as a new panel.
    fn slice(&self, start: usize, end: usize) -> PyResult<Self> {
        let inner = self.inner.slice_rows(start..end).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "ReturnPanel({} stocks x {} days, index {})",
            self.inner.n_stocks(),
            self.inner.n_obs(),
            self.inner.index_ticker()
        )
    }
}

/// Settings for an influence run. Defaults: shuffle null, two-tailed 2%,
/// 10 replicates, filtered averaging, outgoing direction.
#[pyclass(name = "InfluenceConfig", module = "pcinf", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyInfluenceConfig {
    inner: pipeline::InfluenceConfig,
}

#[pymethods]
impl PyInfluenceConfig {
    #[new]
    #[pyo3(signature = (
        *,
        method="shuffle",
        level=significance::DEFAULT_LEVEL,
        replicates=significance::DEFAULT_REPLICATES,
        seed=0,
        filtered=true,
        direction="outgoing",
        segment_length=None,
        max_triples_per_replicate=significance::DEFAULT_MAX_TRIPLES_PER_REPLICATE,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        method: &str,
        level: f64,
        replicates: usize,
        seed: u64,
        filtered: bool,
        direction: &str,
        segment_length: Option<usize>,
        max_triples_per_replicate: usize,
    ) -> PyResult<Self> {
        let inner = pipeline::InfluenceConfig {
            method: method.parse::<Method>().map_err(py_err)?,
            level,
            replicates,
            seed,
            filtered,
            direction: direction.parse::<Direction>().map_err(py_err)?,
            segment_length,
            max_triples_per_replicate,
            ..pipeline::InfluenceConfig::default()
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn level(&self) -> f64 {
        self.inner.level
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn replicates(&self) -> usize {
        self.inner.replicates
    }

    fn __repr__(&self) -> String {
        format!("InfluenceConfig({:?})", self.inner)
    }
}

fn config_or_default(config: Option<&PyInfluenceConfig>) -> pipeline::InfluenceConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Result of [`run_influence`]: thresholds, `d(X:Z)` and `d(X)`.
#[pyclass(name = "InfluenceResult", module = "pcinf", frozen)]
pub struct PyInfluenceResult {
    run: InfluenceRun,
    level: f64,
}

#[pymethods]
impl PyInfluenceResult {
    #[getter]
    fn tickers(&self) -> Vec<String> {
        self.run.matrix.tickers().to_vec()
    }

    /// Threshold at the run's filtering level.
    #[getter]
    fn threshold(&self) -> Option<f64> {
        self.run.table.threshold(self.level)
    }

    /// `(level, threshold)` for every reported level.
    fn thresholds(&self) -> Vec<(f64, f64)> {
        let t = &self.run.table;
        t.levels().iter().copied().zip(t.thresholds().iter().copied()).collect()
    }

    /// `d(X:Z)` with rows `X` and columns `Z`; `None` where undefined.
    fn matrix(&self) -> Vec<Vec<Option<f64>>> {
        square(self.run.matrix.n(), |x, z| self.run.matrix.get(x, z))
    }

    /// Number of triples averaged into each `d(X:Z)`.
    fn counts(&self) -> Vec<Vec<u32>> {
        square(self.run.matrix.n(), |x, z| self.run.matrix.count(x, z))
    }

    /// `d(X)` per ticker in panel order.
    fn total_influence(&self) -> Vec<Option<f64>> {
        self.run.totals.values.clone()
    }

    /// `(ticker, d(X))` from most to least influential.
    fn ranking(&self) -> Vec<(String, f64)> {
        let r = self.run.totals.ranking("full");
        r.tickers.into_iter().zip(r.d_values).collect()
    }

    /// Significant triples as `(x, y, z, d)` with ticker names.
    fn significant_triples(&self) -> PyResult<Vec<(String, String, String, f64)>> {
        let tensor = self.run.significant_tensor().map_err(py_err)?;
        let names = tensor.tickers();
        Ok(tensor
            .entries()
            .iter()
            .map(|e| {
                (
                    names[e.x as usize].clone(),
                    names[e.y as usize].clone(),
                    names[e.z as usize].clone(),
                    e.d,
                )
            })
            .collect())
    }

    fn diagnostics(&self) -> Vec<String> {
        self.run.diagnostics.iter().map(ToString::to_string).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "InfluenceResult({} stocks, threshold {:?} at level {})",
            self.run.matrix.n(),
            self.threshold(),
            self.level
        )
    }
}

/// Partial correlations, significance thresholds and filtered influence.
#[pyfunction]
#[pyo3(signature = (panel, config=None))]
fn run_influence(py: Python<'_>, panel: &PyReturnPanel, config: Option<&PyInfluenceConfig>) -> PyResult<PyInfluenceResult> {
    let config = config_or_default(config);
    let panel = &panel.inner;
    let run = py.detach(|| pipeline::run_influence(panel, &config)).map_err(py_err)?;
    Ok(PyInfluenceResult { run, level: config.level })
}

/// Quarterly rankings, their Kendall tau matrix and the decay fit.
#[pyclass(name = "StabilityResult", module = "pcinf", frozen)]
pub struct PyStabilityResult {
    rankings: Vec<(String, Vec<String>)>,
    taus: stability::TauMatrix,
    fit: stability::DecayFit,
}

#[pymethods]
impl PyStabilityResult {
    #[getter]
    fn quarters(&self) -> Vec<String> {
        self.taus.labels().to_vec()
    }

    /// `(quarter, tickers by decreasing influence)`.
    #[getter]
    fn rankings(&self) -> Vec<(String, Vec<String>)> {
        self.rankings.clone()
    }

    fn tau_matrix(&self) -> Vec<Vec<Option<f64>>> {
        square(self.taus.len(), |i, j| self.taus.get(i, j))
    }

    /// `(interval in quarters, mean tau)`.
    fn interval_means(&self) -> Vec<(f64, f64)> {
        self.taus.interval_means()
    }

    #[getter]
    fn tau0(&self) -> f64 {
        self.fit.tau0
    }

    /// Characteristic decay time in quarters.
    #[getter]
    fn decay_time(&self) -> f64 {
        self.fit.lambda
    }

    #[getter]
    fn residual_rms(&self) -> f64 {
        self.fit.residual_rms
    }

    fn __repr__(&self) -> String {
        format!(
            "StabilityResult({} quarters, tau0 {:.4}, decay time {:.4})",
            self.taus.len(),
            self.fit.tau0,
            self.fit.lambda
        )
    }
}

#[pyfunction]
#[pyo3(signature = (panel, config=None, min_quarter_days=stability::MIN_QUARTER_DAYS))]
fn run_stability(
    py: Python<'_>,
    panel: &PyReturnPanel,
    config: Option<&PyInfluenceConfig>,
    min_quarter_days: usize,
) -> PyResult<PyStabilityResult> {
    let config = config_or_default(config);
    let panel = &panel.inner;
    py.detach(|| {
        let calendar = QuarterCalendar::from_dates(panel.dates(), min_quarter_days)?;
        let quarterly = stability::quarterly_rankings(panel, &calendar, &config)?;
        let taus = stability::tau_matrix(&quarterly.rankings)?;
        let fit = stability::decay_fit(&taus)?;
        let rankings = quarterly
            .rankings
            .into_iter()
            .map(|r| (r.period, r.tickers))
            .collect();
        Ok(PyStabilityResult { rankings, taus, fit })
    })
    .map_err(py_err)
}

/// Kendall tau between two orderings of the same tickers.
#[pyfunction]
fn kendall_tau(a: Vec<String>, b: Vec<String>) -> PyResult<f64> {
    let order = |tickers: &[String]| {
        let scores: Vec<f64> = (0..tickers.len()).map(|k| (tickers.len() - k) as f64).collect();
        rank_by_influence(tickers, &scores, "")
    };
    let (ra, rb) = (order(&a).map_err(py_err)?, order(&b).map_err(py_err)?);
    stability::kendall_tau(&ra, &rb).map_err(py_err)
}

/// Fits `tau0 * exp(-t / decay_time)`; returns `(tau0, decay_time, residual_rms)`.
#[pyfunction]
fn fit_exponential_decay(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let fit = stability::fit_exponential_decay(&points).map_err(py_err)?;
    Ok((fit.tau0, fit.lambda, fit.residual_rms))
}

/// Sector influence `d^S_X`, attribution betas, prediction rates and
/// closeness for one influence run.
#[pyclass(name = "SectorResult", module = "pcinf", frozen)]
pub struct PySectorResult {
    influence: sectors::SectorInfluence,
    attributions: Vec<sectors::SectorAttribution>,
    rates: Vec<sectors::PredictionRate>,
    closeness: sectors::SectorClosenessMatrix,
}

#[pymethods]
impl PySectorResult {
    #[getter]
    fn sectors(&self) -> Vec<String> {
        self.influence.sectors.clone()
    }

    #[getter]
    fn tickers(&self) -> Vec<String> {
        self.influence.tickers.clone()
    }

    /// `d^S_X` rows per ticker, columns per sector.
    fn influence(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.influence.tickers.len())
            .map(|x| self.influence.row(x).to_vec())
            .collect()
    }

    fn betas(&self) -> BetaTable {
        self.attributions
            .iter()
            .map(|a| (a.ticker.clone(), (a.betas.clone(), a.rectified.clone(), a.flag.to_string())))
            .collect()
    }

    /// `(sector, n_members, rate, baseline)`.
    fn prediction_rates(&self) -> Vec<(String, usize, f64, f64)> {
        self.rates
            .iter()
            .map(|r| (r.sector.clone(), r.n_members, r.rate, r.baseline))
            .collect()
    }

    fn closeness(&self) -> Vec<Vec<Option<f64>>> {
        square(self.closeness.sectors.len(), |i, j| self.closeness.get(i, j))
    }
}

fn sector_map(assignments: HashMap<String, String>) -> PyResult<SectorMap> {
    let mut pairs: Vec<(String, String)> = assignments.into_iter().collect();
    pairs.sort();
    SectorMap::new(pairs).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (result, sectors, beta="rectified"))]
fn run_sectors(result: &PyInfluenceResult, sectors: HashMap<String, String>, beta: &str) -> PyResult<PySectorResult> {
    let map = sector_map(sectors)?;
    let kind = beta.parse::<BetaKind>().map_err(py_err)?;
    let influence = sectors::sector_influence(&result.run.matrix, &map).map_err(py_err)?;
    let attributions = sectors::sector_betas(&influence);
    let rates = sectors::prediction_rate(&attributions, &influence, kind).map_err(py_err)?;
    let closeness = sectors::sector_closeness(&influence);
    Ok(PySectorResult {
        influence,
        attributions,
        rates,
        closeness,
    })
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    correlation::pearson(&x, &y).map_err(py_err)
}

/// `rho(X,Y:M)` from the three pairwise correlations.
#[pyfunction]
fn partial_corr_on_index(rho_xy: f64, rho_xm: f64, rho_ym: f64) -> PyResult<f64> {
    correlation::partial_corr_on_index(rho_xy, rho_xm, rho_ym).map_err(py_err)
}

/// `d(X,Y:Z)` from the index-conditioned correlations of the triple.
#[pyfunction]
fn influence_triple(rho_xy_m: f64, rho_xz_m: f64, rho_yz_m: f64) -> PyResult<f64> {
    correlation::influence_triple(rho_xy_m, rho_xz_m, rho_yz_m).map_err(py_err)
}

#[pyfunction]
fn fisher_z(rho: f64) -> PyResult<f64> {
    significance::fisher_z(rho).map_err(py_err)
}

#[pyfunction]
fn synthetic_one_factor(n_stocks: usize, n_obs: usize, seed: u64) -> PyReturnPanel {
    PyReturnPanel {
        inner: synthetic::one_factor_market(n_stocks, n_obs, seed),
    }
}

/// Block-factor market and its sector map.
#[pyfunction]
#[pyo3(signature = (n_sectors, per_sector, n_obs, snr=1.0, seed=0))]
fn synthetic_block_factor(
    n_sectors: usize,
    per_sector: usize,
    n_obs: usize,
    snr: f64,
    seed: u64,
) -> (PyReturnPanel, HashMap<String, String>) {
    let (inner, map) = synthetic::block_factor_market(n_sectors, per_sector, n_obs, snr, seed);
    (PyReturnPanel { inner }, map.assignments().iter().cloned().collect())
}

/// Eleven years of weekdays with group exposures that are `stationary`,
/// `drifting` or `switching` between quarters.
#[pyfunction]
#[pyo3(signature = (n_stocks, groups=2, dynamics="stationary", seed=0))]
fn synthetic_quarterly(n_stocks: usize, groups: usize, dynamics: &str, seed: u64) -> PyResult<PyReturnPanel> {
    let dynamics = match dynamics {
        "stationary" => MarketDynamics::Stationary,
        "drifting" => MarketDynamics::Drifting { rho: 0.8 },
        "switching" => MarketDynamics::RegimeSwitching {
            regime_quarters: 1,
            persistence: 0.3,
        },
        other => return Err(PyValueError::new_err(format!("unknown dynamics `{other}`"))),
    };
    Ok(PyReturnPanel {
        inner: synthetic::quarterly_market(n_stocks, groups, dynamics, seed),
    })
}

#[pymodule]
fn pcinf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyReturnPanel>()?;
    m.add_class::<PyInfluenceConfig>()?;
    m.add_class::<PyInfluenceResult>()?;
    m.add_class::<PyStabilityResult>()?;
    m.add_class::<PySectorResult>()?;
    m.add_function(wrap_pyfunction!(run_influence, m)?)?;
    m.add_function(wrap_pyfunction!(run_stability, m)?)?;
    m.add_function(wrap_pyfunction!(run_sectors, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exponential_decay, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(partial_corr_on_index, m)?)?;
    m.add_function(wrap_pyfunction!(influence_triple, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_z, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_one_factor, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_block_factor, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_quarterly, m)?)?;
    Ok(())
}
