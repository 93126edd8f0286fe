//! Price ingestion, the liquidity filter and log returns.
//!
//! Input is a long-format CSV with header `date,ticker,adj_close[,volume]`.
//! Every ticker is aligned on the union calendar of all retained tickers;
//! interior and trailing gaps are forward-filled, and a ticker with no
//! observation on the first calendar date is dropped. Dates are opaque
//! ISO-8601 labels: no exchange calendar logic is applied.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_MAX_FLAT_FRACTION: f64 = 0.06;

/// One line of the ingest log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestEvent {
    pub ticker: String,
    pub action: String,
    pub detail: String,
}

impl IngestEvent {
    fn new(ticker: &str, action: &str, detail: impl Into<String>) -> Self {
        Self {
            ticker: ticker.to_string(),
            action: action.to_string(),
            detail: detail.into(),
        }
    }
}

/// Aligned T x N panel of adjusted closing prices, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    prices: Vec<Vec<f64>>,
    volumes: Option<Vec<Vec<f64>>>,
    filled: Vec<Vec<bool>>,
}

impl PricePanel {
    /// Builds a panel from complete columns. Every price must be strictly
    /// positive and dates strictly increasing.
    pub fn new(
        tickers: Vec<String>,
        dates: Vec<NaiveDate>,
        prices: Vec<Vec<f64>>,
        volumes: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let filled = prices.iter().map(|c| vec![false; c.len()]).collect();
        Self::from_parts(tickers, dates, prices, volumes, filled)
    }

    fn from_parts(
        tickers: Vec<String>,
        dates: Vec<NaiveDate>,
        prices: Vec<Vec<f64>>,
        volumes: Option<Vec<Vec<f64>>>,
        filled: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if tickers.len() != prices.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tickers but {} price columns",
                tickers.len(),
                prices.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "dates must be strictly increasing".into(),
            ));
        }
        check_unique(&tickers)?;
        for (ticker, column) in tickers.iter().zip(&prices) {
            if column.len() != dates.len() {
                return Err(Error::InvalidArgument(format!(
                    "column `{ticker}` has {} rows, expected {}",
                    column.len(),
                    dates.len()
                )));
            }
            if let Some(bad) = column.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "column `{ticker}` holds non-positive price {bad}"
                )));
            }
        }
        if let Some(vols) = &volumes {
            if vols.len() != prices.len() || vols.iter().any(|v| v.len() != dates.len()) {
                return Err(Error::InvalidArgument(
                    "volume matrix shape does not match prices".into(),
                ));
            }
        }
        Ok(Self {
            tickers,
            dates,
            prices,
            volumes,
            filled,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn prices(&self, column: usize) -> &[f64] {
        &self.prices[column]
    }

    pub fn volumes(&self, column: usize) -> Option<&[f64]> {
        self.volumes.as_ref().map(|v| v[column].as_slice())
    }

    /// Which rows of `column` were forward-filled at ingestion.
    pub fn filled(&self, column: usize) -> &[bool] {
        &self.filled[column]
    }

    pub fn position(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    /// Keeps the columns whose ticker satisfies `keep`, in their original order.
    pub fn retain(&self, mut keep: impl FnMut(&str) -> bool) -> PricePanel {
        let idx: Vec<usize> = (0..self.tickers.len())
            .filter(|&i| keep(&self.tickers[i]))
            .collect();
        PricePanel {
            tickers: idx.iter().map(|&i| self.tickers[i].clone()).collect(),
            dates: self.dates.clone(),
            prices: idx.iter().map(|&i| self.prices[i].clone()).collect(),
            volumes: self
                .volumes
                .as_ref()
                .map(|v| idx.iter().map(|&i| v[i].clone()).collect()),
            filled: idx.iter().map(|&i| self.filled[i].clone()).collect(),
        }
    }
}

fn check_unique(tickers: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for t in tickers {
        if !seen.insert(t.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate ticker `{t}`")));
        }
    }
    Ok(())
}

fn parse_date(raw: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
        line,
        message: format!("bad date `{raw}`: {e}"),
    })
}

fn parse_number(raw: &str, field: &str, line: u64) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("bad {field} `{raw}`"),
    })
}

struct Observation {
    price: f64,
    volume: Option<f64>,
}

/// Reads a long-format price file. Returns the aligned panel together with
/// the ingest log (fills, drops and rejections).
pub fn load_prices<R: Read>(source: R) -> Result<(PricePanel, Vec<IngestEvent>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let column = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (date_col, ticker_col, price_col) = match (column("date"), column("ticker"), column("adj_close")) {
        (Some(d), Some(t), Some(p)) => (d, t, p),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "header must contain date,ticker,adj_close".into(),
            })
        }
    };
    let volume_col = column("volume");

    let mut order: Vec<String> = Vec::new();
    let mut series: HashMap<String, BTreeMap<NaiveDate, Observation>> = HashMap::new();
    let mut rejected: BTreeMap<String, String> = BTreeMap::new();
    let mut log = Vec::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let date = parse_date(field(date_col), line)?;
        let ticker = field(ticker_col).trim().to_string();
        if ticker.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty ticker".into(),
            });
        }
        let price = parse_number(field(price_col), "adj_close", line)?;
        let volume = match volume_col.map(field) {
            Some(raw) if !raw.trim().is_empty() => Some(parse_number(raw, "volume", line)?),
            _ => None,
        };

        if !series.contains_key(&ticker) {
            order.push(ticker.clone());
        }
        let obs = series.entry(ticker.clone()).or_default();
        if obs.contains_key(&date) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate observation for `{ticker}` on {date}"),
            });
        }
        if !(price.is_finite() && price > 0.0) && !rejected.contains_key(&ticker) {
            rejected.insert(
                ticker.clone(),
                format!("non-positive price {price} on {date} (line {line})"),
            );
        }
        obs.insert(date, Observation { price, volume });
    }

    for (ticker, why) in &rejected {
        log::warn!("rejecting `{ticker}`: {why}");
        log.push(IngestEvent::new(ticker, "rejected", why.clone()));
    }
    order.retain(|t| !rejected.contains_key(t));

    let calendar: Vec<NaiveDate> = order
        .iter()
        .flat_map(|t| series[t].keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if calendar.len() < 2 {
        return Err(Error::InsufficientDates(calendar.len()));
    }

    let has_volume = volume_col.is_some();
    let mut tickers = Vec::new();
    let mut prices = Vec::new();
    let mut volumes = Vec::new();
    let mut filled = Vec::new();
    for ticker in order {
        let obs = &series[&ticker];
        if !obs.contains_key(&calendar[0]) {
            let first = obs.keys().next().map(|d| d.to_string()).unwrap_or_default();
            log::warn!("dropping `{ticker}`: first observation {first} is after {}", calendar[0]);
            log.push(IngestEvent::new(
                &ticker,
                "dropped",
                format!("missing first observation on {} (first seen {first})", calendar[0]),
            ));
            continue;
        }
        let mut p = Vec::with_capacity(calendar.len());
        let mut v = Vec::with_capacity(calendar.len());
        let mut f = Vec::with_capacity(calendar.len());
        let mut fills = Vec::new();
        for date in &calendar {
            match obs.get(date) {
                Some(o) => {
                    p.push(o.price);
                    v.push(o.volume.unwrap_or(f64::NAN));
                    f.push(false);
                }
                None => {
                    let prev = *p.last().expect("first date present");
                    p.push(prev);
                    v.push(0.0);
                    f.push(true);
                    fills.push(*date);
                }
            }
        }
        if !fills.is_empty() {
            log.push(IngestEvent::new(
                &ticker,
                "forward_filled",
                format!(
                    "{} missing day(s) filled with prior close: {}",
                    fills.len(),
                    fills
                        .iter()
                        .map(|d| d.to_string())
                        .collect::<Vec<_>>()
                        .join(" ")
                ),
            ));
        }
        tickers.push(ticker);
        prices.push(p);
        volumes.push(v);
        filled.push(f);
    }

    let panel = PricePanel::from_parts(
        tickers,
        calendar,
        prices,
        has_volume.then_some(volumes),
        filled,
    )?;
    Ok((panel, log))
}

pub fn load_prices_path(path: impl AsRef<Path>) -> Result<(PricePanel, Vec<IngestEvent>)> {
    load_prices(std::fs::File::open(path)?)
}

/// Outcome of the liquidity filter for one ticker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidityReport {
    pub ticker: String,
    pub flat_fraction: f64,
    pub retained: bool,
}

/// Fraction of day-over-day transitions with no price movement.
pub fn flat_fraction(prices: &[f64]) -> f64 {
    if prices.len() < 2 {
        return 0.0;
    }
    let flat = prices.windows(2).filter(|w| w[1] == w[0]).count();
    flat as f64 / (prices.len() - 1) as f64
}

/// Drops tickers whose fraction of flat days exceeds `max_flat_fraction`.
/// Forward-filled days count as flat.
pub fn filter_illiquid(
    panel: &PricePanel,
    max_flat_fraction: f64,
) -> Result<(PricePanel, Vec<LiquidityReport>)> {
    filter_illiquid_except(panel, max_flat_fraction, &[])
}

/// As [`filter_illiquid`], but `exempt` tickers (typically the index) are
/// always kept and do not count as surviving stocks.
pub fn filter_illiquid_except(
    panel: &PricePanel,
    max_flat_fraction: f64,
    exempt: &[&str],
) -> Result<(PricePanel, Vec<LiquidityReport>)> {
    if !(0.0..=1.0).contains(&max_flat_fraction) {
        return Err(Error::InvalidArgument(format!(
            "max_flat_fraction {max_flat_fraction} outside [0, 1]"
        )));
    }
    let reports: Vec<LiquidityReport> = panel
        .tickers
        .iter()
        .zip(&panel.prices)
        .map(|(ticker, prices)| {
            let flat_fraction = flat_fraction(prices);
            LiquidityReport {
                ticker: ticker.clone(),
                flat_fraction,
                retained: flat_fraction <= max_flat_fraction || exempt.contains(&ticker.as_str()),
            }
        })
        .collect();
    let survivors = reports
        .iter()
        .filter(|r| r.retained && !exempt.contains(&r.ticker.as_str()))
        .count();
    if survivors == 0 {
        return Err(Error::NoLiquidStocks);
    }
    let mut keep = reports.iter().map(|r| r.retained);
    let filtered = panel.retain(|_| keep.next().unwrap_or(false));
    Ok((filtered, reports))
}

/// Daily log returns of every stock plus the conditioning index, stored
/// column-wise. Row `t` is the return from date `t` to date `t + 1` of the
/// source price panel and is labelled with the later date.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    returns: Vec<Vec<f64>>,
    index_ticker: String,
    index_returns: Vec<f64>,
}

impl ReturnPanel {
    pub fn new(
        tickers: Vec<String>,
        dates: Vec<NaiveDate>,
        returns: Vec<Vec<f64>>,
        index_ticker: impl Into<String>,
        index_returns: Vec<f64>,
    ) -> Result<Self> {
        if tickers.len() != returns.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tickers but {} return columns",
                tickers.len(),
                returns.len()
            )));
        }
        check_unique(&tickers)?;
        let t = index_returns.len();
        if dates.len() != t {
            return Err(Error::InvalidArgument(format!(
                "{} dates but {} index returns",
                dates.len(),
                t
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "dates must be strictly increasing".into(),
            ));
        }
        if let Some((ticker, col)) = tickers.iter().zip(&returns).find(|(_, c)| c.len() != t) {
            return Err(Error::InvalidArgument(format!(
                "column `{ticker}` has {} returns, expected {t}",
                col.len()
            )));
        }
        let non_finite = returns
            .iter()
            .chain(std::iter::once(&index_returns))
            .any(|c| c.iter().any(|v| !v.is_finite()));
        if non_finite {
            return Err(Error::InvalidArgument("non-finite return".into()));
        }
        Ok(Self {
            tickers,
            dates,
            returns,
            index_ticker: index_ticker.into(),
            index_returns,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_obs(&self) -> usize {
        self.index_returns.len()
    }

    pub fn returns(&self, column: usize) -> &[f64] {
        &self.returns[column]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.returns
    }

    pub fn index_ticker(&self) -> &str {
        &self.index_ticker
    }

    pub fn index_returns(&self) -> &[f64] {
        &self.index_returns
    }

    /// Restricts the panel to a contiguous block of rows.
    pub fn slice_rows(&self, rows: Range<usize>) -> Result<ReturnPanel> {
        if rows.end > self.n_obs() || rows.start > rows.end {
            return Err(Error::InvalidArgument(format!(
                "row range {rows:?} outside 0..{}",
                self.n_obs()
            )));
        }
        Ok(ReturnPanel {
            tickers: self.tickers.clone(),
            dates: self.dates[rows.clone()].to_vec(),
            returns: self.returns.iter().map(|c| c[rows.clone()].to_vec()).collect(),
            index_ticker: self.index_ticker.clone(),
            index_returns: self.index_returns[rows].to_vec(),
        })
    }

    /// Keeps the stock columns at `columns` (in the given order).
    pub fn select(&self, columns: &[usize]) -> ReturnPanel {
        ReturnPanel {
            tickers: columns.iter().map(|&i| self.tickers[i].clone()).collect(),
            dates: self.dates.clone(),
            returns: columns.iter().map(|&i| self.returns[i].clone()).collect(),
            index_ticker: self.index_ticker.clone(),
            index_returns: self.index_returns.clone(),
        }
    }

    /// Same shape with replaced return values (used by shuffling).
    pub(crate) fn with_values(&self, returns: Vec<Vec<f64>>, index_returns: Vec<f64>) -> ReturnPanel {
        debug_assert_eq!(returns.len(), self.returns.len());
        ReturnPanel {
            tickers: self.tickers.clone(),
            dates: self.dates.clone(),
            returns,
            index_ticker: self.index_ticker.clone(),
            index_returns,
        }
    }
}

/// `r_i(t) = ln(P_i(t+1) / P_i(t))`; the index column becomes the
/// conditioning series and is removed from the stock columns.
pub fn log_returns(panel: &PricePanel, index_ticker: &str) -> Result<ReturnPanel> {
    let index_col = panel
        .position(index_ticker)
        .ok_or_else(|| Error::MissingIndex(index_ticker.to_string()))?;
    let diff = |p: &[f64]| -> Vec<f64> { p.windows(2).map(|w| (w[1] / w[0]).ln()).collect() };
    let mut tickers = Vec::with_capacity(panel.n_tickers().saturating_sub(1));
    let mut returns = Vec::with_capacity(tickers.capacity());
    for (i, ticker) in panel.tickers.iter().enumerate() {
        if i != index_col {
            tickers.push(ticker.clone());
            returns.push(diff(&panel.prices[i]));
        }
    }
    ReturnPanel::new(
        tickers,
        panel.dates[1..].to_vec(),
        returns,
        index_ticker,
        diff(&panel.prices[index_col]),
    )
}

/// Writes the wide return table `date,<index>,<ticker>...`. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_returns_csv<W: Write>(panel: &ReturnPanel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_string(), panel.index_ticker.clone()];
    header.extend(panel.tickers.iter().cloned());
    w.write_record(&header)?;
    for t in 0..panel.n_obs() {
        let mut row = Vec::with_capacity(header.len());
        row.push(panel.dates[t].to_string());
        row.push(panel.index_returns[t].to_string());
        row.extend(panel.returns.iter().map(|c| c[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_returns_csv`].
pub fn read_returns_csv<R: Read>(source: R, index_ticker: &str) -> Result<ReturnPanel> {
    let mut reader = csv::Reader::from_reader(source);
    let header = reader.headers()?.clone();
    if header.get(0) != Some("date") {
        return Err(Error::Parse {
            line: 1,
            message: "first column must be `date`".into(),
        });
    }
    let index_col = header
        .iter()
        .position(|h| h == index_ticker)
        .ok_or_else(|| Error::MissingIndex(index_ticker.to_string()))?;
    let stock_cols: Vec<usize> = (1..header.len()).filter(|&c| c != index_col).collect();
    let tickers = stock_cols.iter().map(|&c| header[c].to_string()).collect();
    let mut dates = Vec::new();
    let mut index = Vec::new();
    let mut returns = vec![Vec::new(); stock_cols.len()];
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        dates.push(parse_date(&record[0], line)?);
        index.push(parse_number(&record[index_col], "return", line)?);
        for (k, &c) in stock_cols.iter().enumerate() {
            returns[k].push(parse_number(&record[c], "return", line)?);
        }
    }
    ReturnPanel::new(tickers, dates, returns, index_ticker, index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_of(rows: &[(&str, &str, &str)]) -> String {
        let mut s = String::from("date,ticker,adj_close,volume\n");
        for (d, t, p) in rows {
            s.push_str(&format!("{d},{t},{p},100\n"));
        }
        s
    }

    fn complete_fixture() -> String {
        let mut rows = Vec::new();
        let dates = ["2001-01-02", "2001-01-03", "2001-01-04", "2001-01-05", "2001-01-08"];
        for (k, d) in dates.iter().enumerate() {
            for (j, t) in ["AAA", "BBB", "IDX"].iter().enumerate() {
                rows.push(format!("{d},{t},{},10", 10.0 + k as f64 + j as f64 * 0.5));
            }
        }
        format!("date,ticker,adj_close,volume\n{}\n", rows.join("\n"))
    }

    #[test]
    fn complete_panel_passes_through() {
        let (panel, log) = load_prices(complete_fixture().as_bytes()).unwrap();
        assert_eq!(panel.n_dates(), 5);
        assert_eq!(panel.n_tickers(), 3);
        assert_eq!(panel.tickers(), ["AAA", "BBB", "IDX"]);
        assert!(log.is_empty());
        assert_eq!(panel.prices(1)[2], 12.5);
        assert_eq!(panel.volumes(0).unwrap()[0], 10.0);
    }

    #[test]
    fn one_day_gap_is_forward_filled() {
        let data = csv_of(&[
            ("2001-01-02", "AAA", "10"),
            ("2001-01-02", "BBB", "20"),
            ("2001-01-03", "AAA", "11"),
            ("2001-01-03", "BBB", "21"),
            ("2001-01-04", "AAA", "12"),
            ("2001-01-05", "AAA", "13"),
            ("2001-01-05", "BBB", "23"),
        ]);
        let (panel, log) = load_prices(data.as_bytes()).unwrap();
        let b = panel.position("BBB").unwrap();
        assert_eq!(panel.prices(b), [20.0, 21.0, 21.0, 23.0]);
        assert_eq!(panel.filled(b), [false, false, true, false]);
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].ticker, "BBB");
        assert_eq!(log[0].action, "forward_filled");
        assert!(log[0].detail.contains("2001-01-04"));
    }

    #[test]
    fn zero_price_rejects_only_that_ticker() {
        let data = csv_of(&[
            ("2001-01-02", "AAA", "10"),
            ("2001-01-02", "BBB", "0.00"),
            ("2001-01-03", "AAA", "11"),
            ("2001-01-03", "BBB", "5"),
        ]);
        let (panel, log) = load_prices(data.as_bytes()).unwrap();
        assert_eq!(panel.tickers(), ["AAA"]);
        assert_eq!(log[0].action, "rejected");
        assert_eq!(log[0].ticker, "BBB");
    }

    #[test]
    fn late_starting_ticker_is_dropped() {
        let data = csv_of(&[
            ("2001-01-02", "AAA", "10"),
            ("2001-01-03", "AAA", "11"),
            ("2001-01-03", "NEW", "5"),
            ("2001-01-04", "AAA", "12"),
            ("2001-01-04", "NEW", "6"),
        ]);
        let (panel, log) = load_prices(data.as_bytes()).unwrap();
        assert_eq!(panel.tickers(), ["AAA"]);
        assert_eq!(log[0].action, "dropped");
    }

    #[test]
    fn malformed_row_reports_line() {
        let data = "date,ticker,adj_close\n2001-01-02,AAA,10\n2001-01-03,AAA,abc\n";
        match load_prices(data.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_date = "date,ticker,adj_close\n2001-13-02,AAA,10\n";
        assert!(matches!(
            load_prices(bad_date.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_observation_is_a_parse_error() {
        let data = "date,ticker,adj_close\n2001-01-02,AAA,10\n2001-01-02,AAA,11\n";
        assert!(matches!(
            load_prices(data.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn single_date_is_fatal() {
        let data = csv_of(&[("2001-01-02", "AAA", "10"), ("2001-01-02", "BBB", "3")]);
        assert!(matches!(
            load_prices(data.as_bytes()),
            Err(Error::InsufficientDates(1))
        ));
    }

    #[test]
    fn volume_column_is_optional() {
        let data = "date,ticker,adj_close\n2001-01-02,AAA,10\n2001-01-03,AAA,11\n";
        let (panel, _) = load_prices(data.as_bytes()).unwrap();
        assert!(panel.volumes(0).is_none());
    }

    fn panel_from(prices: Vec<Vec<f64>>) -> PricePanel {
        let n = prices[0].len();
        let start = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
        let dates = (0..n).map(|k| start + chrono::Days::new(k as u64)).collect();
        let tickers = (0..prices.len()).map(|i| format!("S{i}")).collect();
        PricePanel::new(tickers, dates, prices, None).unwrap()
    }

    #[test]
    fn flat_ticker_above_cutoff_is_dropped() {
        // 51 prices, 50 transitions; 5 flat transitions = 10%.
        let moving: Vec<f64> = (0..51).map(|k| 10.0 + k as f64).collect();
        let mut flat = moving.clone();
        for k in [3, 10, 20, 30, 40] {
            flat[k] = flat[k - 1];
        }
        assert!((flat_fraction(&flat) - 0.10).abs() < 1e-15);
        let panel = panel_from(vec![moving.clone(), flat]);
        let (kept, reports) = filter_illiquid(&panel, 0.06).unwrap();
        assert_eq!(kept.tickers(), ["S0"]);
        assert_eq!(reports.len(), 2);
        assert!(reports[0].retained);
        assert!(!reports[1].retained);

        let (same, _) = filter_illiquid(&panel_from(vec![moving]), 0.06).unwrap();
        assert_eq!(same.n_tickers(), 1);
    }

    #[test]
    fn all_illiquid_is_fatal() {
        let panel = panel_from(vec![vec![1.0; 10]]);
        assert!(matches!(
            filter_illiquid(&panel, 0.06),
            Err(Error::NoLiquidStocks)
        ));
        assert!(filter_illiquid(&panel, 1.5).is_err());
    }

    #[test]
    fn exempt_ticker_survives_filter() {
        let panel = panel_from(vec![vec![1.0, 2.0, 3.0, 4.0], vec![1.0; 4]]);
        let (kept, reports) = filter_illiquid_except(&panel, 0.06, &["S1"]).unwrap();
        assert_eq!(kept.tickers(), ["S0", "S1"]);
        assert!(reports.iter().all(|r| r.retained));
        assert!(matches!(
            filter_illiquid_except(&panel_from(vec![vec![1.0; 4]]), 0.06, &["S0"]),
            Err(Error::NoLiquidStocks)
        ));
    }

    #[test]
    fn log_returns_basics() {
        let panel = panel_from(vec![vec![5.0, 5.0, 5.0], vec![1.0, 2.0, 2.0]]);
        let r = log_returns(&panel, "S1").unwrap();
        assert_eq!(r.n_obs(), 2);
        assert_eq!(r.tickers(), ["S0"]);
        assert_eq!(r.returns(0), [0.0, 0.0]);
        assert!((r.index_returns()[0] - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(r.index_returns()[0], 2f64.ln());
        assert_eq!(r.dates(), &panel.dates()[1..]);
        assert!(matches!(log_returns(&panel, "NOPE"), Err(Error::MissingIndex(t)) if t == "NOPE"));
    }

    #[test]
    fn returns_csv_round_trip_is_exact() {
        let panel = panel_from(vec![
            vec![10.0, 10.3, 9.7, 11.1],
            vec![3.0, 3.01, 2.99, 3.3],
            vec![100.0, 101.0, 99.5, 100.25],
        ]);
        let r = log_returns(&panel, "S2").unwrap();
        let mut buf = Vec::new();
        write_returns_csv(&r, &mut buf).unwrap();
        let back = read_returns_csv(buf.as_slice(), "S2").unwrap();
        assert_eq!(back, r);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn price_columns() -> impl Strategy<Value = Vec<Vec<f64>>> {
            (2usize..6, 3usize..40).prop_flat_map(|(n, t)| {
                prop::collection::vec(
                    prop::collection::vec(
                        prop_oneof![Just(0.0), -0.05f64..0.05],
                        t - 1,
                    )
                    .prop_map(|steps| {
                        let mut p = vec![50.0];
                        for s in steps {
                            let last = *p.last().unwrap();
                            p.push(last * (1.0 + s));
                        }
                        p
                    }),
                    n,
                )
            })
        }

        proptest! {
            #[test]
            fn cumulative_returns_reconstruct_prices(cols in price_columns()) {
                let panel = panel_from(cols);
                let r = log_returns(&panel, "S0").unwrap();
                for (k, ticker) in r.tickers().iter().enumerate() {
                    let p = panel.prices(panel.position(ticker).unwrap());
                    let mut cum = 0.0;
                    for t in 0..r.n_obs() {
                        cum += r.returns(k)[t];
                        let rebuilt = p[0] * cum.exp();
                        prop_assert!(((rebuilt - p[t + 1]) / p[t + 1]).abs() < 1e-9);
                    }
                }
            }

            #[test]
            fn filter_is_idempotent_and_order_preserving(cols in price_columns(), cut in 0.0f64..0.5) {
                let panel = panel_from(cols);
                let once = match filter_illiquid(&panel, cut) {
                    Ok((p, _)) => p,
                    Err(Error::NoLiquidStocks) => return Ok(()),
                    Err(e) => panic!("{e}"),
                };
                let (twice, _) = filter_illiquid(&once, cut).unwrap();
                prop_assert_eq!(&twice, &once);
                let positions: Vec<usize> = once.tickers().iter().map(|t| panel.position(t).unwrap()).collect();
                prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
