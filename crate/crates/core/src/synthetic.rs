//! Simulated markets with known influence structure.
//!
//! Used by the test suites, the acceptance runner and the Python smoke test.
//! All generators are deterministic in their seed. Returns are expressed in
//! daily units (a few percent standard deviation) and dated on weekdays.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

use crate::market_data::{PricePanel, ReturnPanel};
use crate::sectors::SectorMap;
use crate::seeding::stream_rng;

const SCALE: f64 = 0.01;

// Range of group-factor exposures in the quarterly market.
const EXPOSURES: std::ops::Range<f64> = 0.1..2.5;

pub const INDEX_TICKER: &str = "IDX";

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    stream_rng(seed, 0x5EED, stream)
}

fn normals(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, sd).expect("positive sd");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// `count` consecutive weekdays starting at (or after) `start`.
pub fn weekdays(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Weekdays in `[start, end]`.
pub fn weekdays_between(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date")
}

pub fn ticker(i: usize) -> String {
    format!("S{i:03}")
}

fn assemble(columns: Vec<Vec<f64>>, index: Vec<f64>, dates: Vec<NaiveDate>) -> ReturnPanel {
    let tickers = (0..columns.len()).map(ticker).collect();
    ReturnPanel::new(tickers, dates, columns, INDEX_TICKER, index).expect("well-formed synthetic panel")
}

/// Independent Gaussian returns for every stock and for the index.
pub fn gaussian_panel(n_stocks: usize, n_obs: usize, seed: u64) -> ReturnPanel {
    let columns = (0..n_stocks)
        .map(|i| normals(&mut rng(seed, i as u64), n_obs, SCALE))
        .collect();
    let index = normals(&mut rng(seed, u64::MAX), n_obs, SCALE);
    assemble(columns, index, weekdays(default_start(), n_obs))
}

/// Independent Student-t returns (heavy tails) for every stock and the index.
pub fn heavy_tailed_panel(n_stocks: usize, n_obs: usize, dof: f64, seed: u64) -> ReturnPanel {
    let t = StudentT::new(dof).expect("positive degrees of freedom");
    let draw = |stream: u64| -> Vec<f64> {
        let mut r = rng(seed, stream);
        (0..n_obs).map(|_| SCALE * t.sample(&mut r)).collect()
    };
    let columns = (0..n_stocks).map(|i| draw(i as u64)).collect();
    assemble(columns, draw(u64::MAX), weekdays(default_start(), n_obs))
}

/// One-factor market: `r_i = b_i m + e_i` with every loading `b_i` in
/// `[0.5, 1.5]` and independent idiosyncratic noise.
pub fn one_factor_market(n_stocks: usize, n_obs: usize, seed: u64) -> ReturnPanel {
    let index = normals(&mut rng(seed, u64::MAX), n_obs, SCALE);
    let mut params = rng(seed, u64::MAX - 1);
    let columns = (0..n_stocks)
        .map(|i| {
            let loading = params.random_range(0.5..1.5);
            let noise_sd = SCALE * params.random_range(0.8..1.6);
            let noise = normals(&mut rng(seed, i as u64), n_obs, noise_sd);
            index.iter().zip(noise).map(|(m, e)| loading * m + e).collect()
        })
        .collect();
    assemble(columns, index, weekdays(default_start(), n_obs))
}

/// Three stocks driven by a common business driver `z`:
/// `X = b m + z + e1`, `Y = b m + sign * z + e2`, `Z = b m + z` (plus small
/// noise), with index loading `b`. A negative sign makes `X` and `Y`
/// competitor and cooperator of `Z`.
pub fn common_driver_triple(y_sign: f64, index_loading: f64, n_obs: usize, seed: u64) -> ReturnPanel {
    let m = normals(&mut rng(seed, u64::MAX), n_obs, SCALE);
    let z = normals(&mut rng(seed, 100), n_obs, SCALE);
    let e: Vec<Vec<f64>> = (0..3).map(|k| normals(&mut rng(seed, k), n_obs, SCALE)).collect();
    let x: Vec<f64> = (0..n_obs).map(|t| index_loading * m[t] + z[t] + e[0][t]).collect();
    let y: Vec<f64> = (0..n_obs).map(|t| index_loading * m[t] + y_sign * z[t] + e[1][t]).collect();
    let zs: Vec<f64> = (0..n_obs).map(|t| index_loading * m[t] + z[t] + 0.1 * e[2][t]).collect();
    assemble(vec![x, y, zs], m, weekdays(default_start(), n_obs))
}

/// Conventional sector names used for generated sector maps.
pub const SECTOR_NAMES: [&str; 11] = [
    "Energy",
    "Materials",
    "Industrials",
    "Consumer Discretionary",
    "Consumer Staples",
    "Health Care",
    "Financials",
    "Information Technology",
    "Telecommunication Services",
    "Utilities",
    "Real Estate",
];

fn sector_name(s: usize) -> String {
    SECTOR_NAMES
        .get(s)
        .map(|n| n.to_string())
        .unwrap_or_else(|| format!("Sector {s}"))
}

/// Block-factor market: stock `i` in sector `s` follows
/// `r_i = b_i m + f_s + e_i` where `var(f_s) / var(e_i) = snr`.
/// Stocks are numbered sector by sector.
pub fn block_factor_market(
    n_sectors: usize,
    per_sector: usize,
    n_obs: usize,
    snr: f64,
    seed: u64,
) -> (ReturnPanel, SectorMap) {
    let index = normals(&mut rng(seed, u64::MAX), n_obs, SCALE);
    let factors: Vec<Vec<f64>> = (0..n_sectors)
        .map(|s| normals(&mut rng(seed, 1_000_000 + s as u64), n_obs, SCALE * snr.sqrt()))
        .collect();
    let mut params = rng(seed, u64::MAX - 1);
    let mut columns = Vec::new();
    let mut assignments = Vec::new();
    for (s, factor) in factors.iter().enumerate() {
        for k in 0..per_sector {
            let i = s * per_sector + k;
            let loading = params.random_range(0.5..1.5);
            let noise = normals(&mut rng(seed, i as u64), n_obs, SCALE);
            columns.push((0..n_obs).map(|t| loading * index[t] + factor[t] + noise[t]).collect());
            assignments.push((ticker(i), sector_name(s)));
        }
    }
    let panel = assemble(columns, index, weekdays(default_start(), n_obs));
    (panel, SectorMap::new(assignments).expect("non-empty map"))
}

/// Two sectors driven by one shared factor plus a third independent one;
/// five stocks per sector. Used to check sector closeness.
pub fn shared_factor_sectors(n_obs: usize, seed: u64) -> (ReturnPanel, SectorMap) {
    let index = normals(&mut rng(seed, u64::MAX), n_obs, SCALE);
    let shared = normals(&mut rng(seed, 2_000_000), n_obs, SCALE);
    let own = normals(&mut rng(seed, 2_000_001), n_obs, SCALE);
    let mut params = rng(seed, u64::MAX - 1);
    let mut columns = Vec::new();
    let mut assignments = Vec::new();
    let per_sector = 8;
    for s in 0..3 {
        let factor = if s < 2 { &shared } else { &own };
        for k in 0..per_sector {
            let i = s * per_sector + k;
            let loading = params.random_range(0.5..1.5);
            let exposure = params.random_range(0.5..1.5);
            let noise = normals(&mut rng(seed, i as u64), n_obs, SCALE);
            columns.push(
                (0..n_obs)
                    .map(|t| loading * index[t] + exposure * factor[t] + noise[t])
                    .collect(),
            );
            assignments.push((ticker(i), ["Materials", "Industrials", "Utilities"][s].to_string()));
        }
    }
    let panel = assemble(columns, index, weekdays(default_start(), n_obs));
    (panel, SectorMap::new(assignments).expect("non-empty map"))
}

/// How group-factor exposures evolve from quarter to quarter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarketDynamics {
    /// Exposures fixed for the whole sample.
    Stationary,
    /// Every `regime_quarters` quarters the exposures are redrawn as
    /// `persistence * base + (1 - persistence) * fresh`.
    RegimeSwitching { regime_quarters: usize, persistence: f64 },
    /// Exposures follow a stationary AR(1) in log space with quarterly
    /// autocorrelation `rho`.
    Drifting { rho: f64 },
}

/// Group-factor market over weekdays from 2000-01-03 to 2010-12-31
/// (44 calendar quarters). Stocks are split into `groups` groups; stock `i`
/// follows `r_i = b_i m + a_i(q) f_g + e_i` where the group exposure
/// `a_i(q)` evolves according to `dynamics`.
pub fn quarterly_market(
    n_stocks: usize,
    groups: usize,
    dynamics: MarketDynamics,
    seed: u64,
) -> ReturnPanel {
    let dates = weekdays_between(
        NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid"),
        NaiveDate::from_ymd_opt(2010, 12, 31).expect("valid"),
    );
    let n_obs = dates.len();
    let quarter_of = |d: &NaiveDate| ((d.year() - 2000) * 4 + (d.month0() as i32) / 3) as usize;
    let n_quarters = quarter_of(dates.last().expect("non-empty")) + 1;

    let mut params = rng(seed, u64::MAX - 1);
    let base: Vec<f64> = (0..n_stocks).map(|_| params.random_range(EXPOSURES)).collect();
    let loadings: Vec<f64> = (0..n_stocks).map(|_| params.random_range(0.5..1.5)).collect();
    let std_normal = Normal::new(0.0, 1.0).expect("valid");

    // exposure[q][i]
    let mut exposure = vec![base.clone(); n_quarters];
    match dynamics {
        MarketDynamics::Stationary => {}
        MarketDynamics::RegimeSwitching { regime_quarters, persistence } => {
            let len = regime_quarters.max(1);
            let mut current = base.clone();
            for (q, row) in exposure.iter_mut().enumerate() {
                if q % len == 0 {
                    current = base
                        .iter()
                        .map(|&b| persistence * b + (1.0 - persistence) * params.random_range(EXPOSURES))
                        .collect();
                }
                row.clone_from(&current);
            }
        }
        MarketDynamics::Drifting { rho } => {
            let mut latent: Vec<f64> = (0..n_stocks).map(|_| std_normal.sample(&mut params)).collect();
            let innovation = (1.0 - rho * rho).max(0.0).sqrt();
            for row in exposure.iter_mut() {
                *row = latent.iter().map(|u| (0.8 * u).exp()).collect();
                for u in latent.iter_mut() {
                    *u = rho * *u + innovation * std_normal.sample(&mut params);
                }
            }
        }
    }

    let index = normals(&mut rng(seed, u64::MAX), n_obs, SCALE);
    let factors: Vec<Vec<f64>> = (0..groups.max(1))
        .map(|g| normals(&mut rng(seed, 3_000_000 + g as u64), n_obs, SCALE))
        .collect();
    let quarters: Vec<usize> = dates.iter().map(quarter_of).collect();
    let columns = (0..n_stocks)
        .map(|i| {
            let g = i % factors.len();
            let noise = normals(&mut rng(seed, i as u64), n_obs, SCALE);
            (0..n_obs)
                .map(|t| loadings[i] * index[t] + exposure[quarters[t]][i] * factors[g][t] + noise[t])
                .collect()
        })
        .collect();
    assemble(columns, index, dates)
}

/// Price panel (index included, first column order: stocks then index)
/// whose log returns are exactly the given panel, starting every series at
/// 100 on the day before the first return date.
pub fn prices_from_returns(panel: &ReturnPanel) -> PricePanel {
    let first = panel.dates()[0];
    let mut prev = first - Days::new(1);
    while matches!(prev.weekday(), Weekday::Sat | Weekday::Sun) {
        prev = prev - Days::new(1);
    }
    let mut dates = vec![prev];
    dates.extend_from_slice(panel.dates());
    let integrate = |r: &[f64]| {
        let mut p = Vec::with_capacity(r.len() + 1);
        let mut cum = 0.0;
        p.push(100.0);
        for v in r {
            cum += v;
            p.push(100.0 * cum.exp());
        }
        p
    };
    let mut tickers = panel.tickers().to_vec();
    tickers.push(panel.index_ticker().to_string());
    let mut prices: Vec<Vec<f64>> = panel.columns().iter().map(|c| integrate(c)).collect();
    prices.push(integrate(panel.index_returns()));
    PricePanel::new(tickers, dates, prices, None).expect("positive synthetic prices")
}

/// Writes a price panel in the long CSV format read by
/// [`crate::market_data::load_prices`].
pub fn write_prices_csv<W: std::io::Write>(panel: &PricePanel, out: W) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "ticker", "adj_close", "volume"])?;
    for (t, date) in panel.dates().iter().enumerate() {
        for (i, ticker) in panel.tickers().iter().enumerate() {
            let volume = panel.volumes(i).map(|v| v[t]).unwrap_or(1_000_000.0);
            w.write_record([
                date.to_string(),
                ticker.clone(),
                panel.prices(i)[t].to_string(),
                volume.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
