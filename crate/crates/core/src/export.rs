//! Exchange formats. Floats are written in shortest round-trip form and
//! absent values as empty fields, so every CSV reads back exactly.
//!
//! The binary tensor layout (little endian):
//!
//! ```text
//! magic      b"PCT1"
//! n_tickers  u32
//! n_entries  u64
//! tickers    n_tickers x (u32 byte length, UTF-8 bytes)
//! x          n_entries x u32
//! y          n_entries x u32
//! z          n_entries x u32
//! d          n_entries x f64
//! ```

use std::io::{Read, Write};

use serde::Serialize;

use crate::correlation::InfluenceTensor;
use crate::influence::{InfluenceMatrix, InfluenceRanking};
use crate::market_data::{IngestEvent, LiquidityReport};
use crate::sectors::{PredictionRate, SectorAttribution, SectorClosenessMatrix, SectorInfluence};
use crate::significance::ThresholdTable;
use crate::stability::{DecayFit, TauMatrix};
use crate::{Error, Result};

const TENSOR_MAGIC: &[u8; 4] = b"PCT1";

fn number(v: f64) -> String {
    format!("{v}")
}

fn optional(v: Option<f64>) -> String {
    v.map(number).unwrap_or_default()
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(out)
}

/// `x,y,z,d` with ticker names, one row per stored triple.
pub fn write_tensor_csv<W: Write>(tensor: &InfluenceTensor, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["x", "y", "z", "d"])?;
    let t = tensor.tickers();
    for e in tensor.entries() {
        w.write_record([
            t[e.x as usize].as_str(),
            t[e.y as usize].as_str(),
            t[e.z as usize].as_str(),
            &number(e.d),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tensor_binary<W: Write>(tensor: &InfluenceTensor, mut out: W) -> Result<()> {
    let entries = tensor.entries();
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&(tensor.tickers().len() as u32).to_le_bytes())?;
    out.write_all(&(entries.len() as u64).to_le_bytes())?;
    for t in tensor.tickers() {
        out.write_all(&(t.len() as u32).to_le_bytes())?;
        out.write_all(t.as_bytes())?;
    }
    for column in [
        entries.iter().map(|e| e.x).collect::<Vec<_>>(),
        entries.iter().map(|e| e.y).collect(),
        entries.iter().map(|e| e.z).collect(),
    ] {
        for v in column {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    for e in entries {
        out.write_all(&e.d.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Contents of a binary tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorColumns {
    pub tickers: Vec<String>,
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub z: Vec<u32>,
    pub d: Vec<f64>,
}

pub fn read_tensor_binary<R: Read>(mut source: R) -> Result<TensorColumns> {
    let mut magic = [0u8; 4];
    source.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Parse {
            line: 0,
            message: "not a binary influence tensor".into(),
        });
    }
    let mut u32_buf = [0u8; 4];
    let mut u64_buf = [0u8; 8];
    let mut read_u32 = |s: &mut R| -> Result<u32> {
        s.read_exact(&mut u32_buf)?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let n_tickers = read_u32(&mut source)? as usize;
    source.read_exact(&mut u64_buf)?;
    let n_entries = u64::from_le_bytes(u64_buf) as usize;
    let mut tickers = Vec::with_capacity(n_tickers);
    for _ in 0..n_tickers {
        let len = read_u32(&mut source)? as usize;
        let mut bytes = vec![0u8; len];
        source.read_exact(&mut bytes)?;
        tickers.push(String::from_utf8(bytes).map_err(|e| Error::Parse {
            line: 0,
            message: format!("ticker is not UTF-8: {e}"),
        })?);
    }
    let mut index_column = |s: &mut R| -> Result<Vec<u32>> {
        (0..n_entries)
            .map(|_| {
                let v = read_u32(s)?;
                if v as usize >= n_tickers {
                    return Err(Error::Parse {
                        line: 0,
                        message: format!("ticker index {v} out of range"),
                    });
                }
                Ok(v)
            })
            .collect()
    };
    let x = index_column(&mut source)?;
    let y = index_column(&mut source)?;
    let z = index_column(&mut source)?;
    let d = (0..n_entries)
        .map(|_| {
            source.read_exact(&mut u64_buf)?;
            Ok(f64::from_le_bytes(u64_buf))
        })
        .collect::<Result<_>>()?;
    Ok(TensorColumns { tickers, x, y, z, d })
}

/// `level,threshold,provenance,replicates`.
pub fn write_thresholds_csv<W: Write>(table: &ThresholdTable, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["level", "threshold", "provenance", "replicates"])?;
    for (l, t) in table.levels().iter().zip(table.thresholds()) {
        w.write_record([
            number(*l),
            number(*t),
            table.provenance().to_string(),
            table.replicates().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Null-distribution moments of a shuffle table as JSON (`null` for
/// Fisher tables).
pub fn write_null_moments_json<W: Write>(table: &ThresholdTable, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, &table.null_moments())?;
    Ok(())
}

fn write_square<W: Write>(
    out: W,
    corner: &str,
    labels: &[String],
    cell: impl Fn(usize, usize) -> Option<f64>,
) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec![corner.to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (i, label) in labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..labels.len()).map(|j| optional(cell(i, j))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows are targets `X`, columns conditioning stocks `Z`.
pub fn write_influence_matrix_csv<W: Write>(matrix: &InfluenceMatrix, out: W) -> Result<()> {
    write_square(out, "ticker", matrix.tickers(), |x, z| matrix.get(x, z))
}

/// Term counts of each `d(X:Z)` cell, same layout as the matrix.
pub fn write_influence_counts_csv<W: Write>(matrix: &InfluenceMatrix, out: W) -> Result<()> {
    write_square(out, "ticker", matrix.tickers(), |x, z| {
        (x != z).then(|| matrix.count(x, z) as f64)
    })
}

/// Reads a matrix written by [`write_influence_matrix_csv`]. Term counts are
/// not part of the file: present cells get a count of 1.
pub fn read_influence_matrix_csv<R: Read>(source: R) -> Result<InfluenceMatrix> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    let tickers: Vec<String> = reader.headers()?.iter().skip(1).map(str::to_string).collect();
    let n = tickers.len();
    let mut values = Vec::with_capacity(n * n);
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if i >= n || record.len() != n + 1 || record[0] != tickers[i] {
            return Err(Error::Parse {
                line,
                message: "influence matrix rows must mirror the header".into(),
            });
        }
        for field in record.iter().skip(1) {
            values.push(if field.is_empty() {
                f64::NAN
            } else {
                field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad number `{field}`"),
                })?
            });
        }
    }
    if values.len() != n * n {
        return Err(Error::Parse {
            line: 0,
            message: format!("expected {n} matrix rows"),
        });
    }
    let counts = values.iter().map(|v| u32::from(!v.is_nan())).collect();
    InfluenceMatrix::new(tickers, values, counts)
}

/// `rank,ticker,d_value`, rank starting at 1.
pub fn write_ranking_csv<W: Write>(ranking: &InfluenceRanking, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["rank", "ticker", "d_value"])?;
    for (i, (t, d)) in ranking.tickers.iter().zip(&ranking.d_values).enumerate() {
        w.write_record([(i + 1).to_string(), t.clone(), number(*d)])?;
    }
    w.flush()?;
    Ok(())
}

/// All quarterly rankings stacked: `period,rank,ticker,d_value`.
pub fn write_rankings_csv<W: Write>(rankings: &[InfluenceRanking], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["period", "rank", "ticker", "d_value"])?;
    for r in rankings {
        for (i, (t, d)) in r.tickers.iter().zip(&r.d_values).enumerate() {
            w.write_record([r.period.clone(), (i + 1).to_string(), t.clone(), number(*d)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_tau_matrix_csv<W: Write>(matrix: &TauMatrix, out: W) -> Result<()> {
    write_square(out, "quarter", matrix.labels(), |i, j| matrix.get(i, j))
}

/// `interval,mean_tau,fitted_tau`.
pub fn write_decay_csv<W: Write>(fit: &DecayFit, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["interval", "mean_tau", "fitted_tau"])?;
    for &(t, tau) in &fit.points {
        w.write_record([number(t), number(tau), number(fit.fitted(t))])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct DecayParameters {
    tau0: f64,
    lambda: f64,
    residual_rms: f64,
}

/// `{tau0, lambda, residual_rms}`.
pub fn write_decay_json<W: Write>(fit: &DecayFit, out: W) -> Result<()> {
    serde_json::to_writer_pretty(
        out,
        &DecayParameters {
            tau0: fit.tau0,
            lambda: fit.lambda,
            residual_rms: fit.residual_rms,
        },
    )?;
    Ok(())
}

/// `ticker,sector,d_value,beta,beta_rectified,flag`, one row per stock and
/// sector.
pub fn write_attribution_csv<W: Write>(
    attributions: &[SectorAttribution],
    influence: &SectorInfluence,
    out: W,
) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["ticker", "sector", "d_value", "beta", "beta_rectified", "flag"])?;
    for a in attributions {
        for (s, sector) in influence.sectors.iter().enumerate() {
            w.write_record([
                a.ticker.clone(),
                sector.clone(),
                optional(a.d_values[s]),
                optional(a.betas[s]),
                optional(a.rectified[s]),
                a.flag.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `sector,n_members,rate,baseline`.
pub fn write_prediction_csv<W: Write>(rates: &[PredictionRate], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["sector", "n_members", "rate", "baseline"])?;
    for r in rates {
        w.write_record([r.sector.clone(), r.n_members.to_string(), number(r.rate), number(r.baseline)])?;
    }
    w.flush()?;
    Ok(())
}

/// `window,sector,n_members,rate,baseline`, one block per window.
pub fn write_rolling_prediction_csv<W: Write>(windows: &[(String, Vec<PredictionRate>)], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["window", "sector", "n_members", "rate", "baseline"])?;
    for (label, rates) in windows {
        for r in rates {
            w.write_record([
                label.clone(),
                r.sector.clone(),
                r.n_members.to_string(),
                number(r.rate),
                number(r.baseline),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_closeness_csv<W: Write>(matrix: &SectorClosenessMatrix, out: W) -> Result<()> {
    write_square(out, "sector", &matrix.sectors, |i, j| matrix.get(i, j))
}

/// `ticker,flat_fraction,retained`.
pub fn write_liquidity_csv<W: Write>(reports: &[LiquidityReport], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["ticker", "flat_fraction", "retained"])?;
    for r in reports {
        w.write_record([r.ticker.clone(), number(r.flat_fraction), r.retained.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_ingest_log<W: Write>(events: &[IngestEvent], mut out: W) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
