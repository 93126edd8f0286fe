use std::path::PathBuf;

use pcinf_core::correlation::MAX_DENSE_STOCKS;
use pcinf_core::export;
use pcinf_core::influence::Direction;
use pcinf_core::market_data::{
    filter_illiquid_except, load_prices, log_returns, read_returns_csv, write_returns_csv, IngestEvent, ReturnPanel,
    DEFAULT_MAX_FLAT_FRACTION,
};
use pcinf_core::pipeline::{run_influence, InfluenceConfig, Method};
use pcinf_core::sectors::{
    load_sector_map, prediction_rate, rolling_sector_influence, sector_betas, sector_closeness, sector_influence,
    BetaKind,
};
use pcinf_core::stability::{decay_fit, quarterly_rankings, tau_matrix, QuarterCalendar, MIN_QUARTER_DAYS};
use pcinf_core::Diagnostic;

use crate::failure::{Failure, Outcome, StageExt};
use crate::manifest::Recorder;
use crate::settings::Settings;
use crate::{IngestArgs, InfluenceArgs, SectorsArgs, SignificanceArgs, StabilityArgs};

/// Settings shared by every stage, already resolved.
pub struct Context {
    pub settings: Settings,
    pub out: PathBuf,
    pub seed: u64,
    pub index: Option<String>,
    pub jobs: usize,
}

fn influence_config(ctx: &Context, args: &SignificanceArgs, rec: &mut Recorder) -> Outcome<InfluenceConfig> {
    let s = &ctx.settings;
    let d = InfluenceConfig::default();
    let config = InfluenceConfig {
        method: s.pick_or::<Method>("method", args.method, d.method)?,
        level: s.pick_or("level", args.level, d.level)?,
        levels: d.levels,
        filtered: s.pick_or("filtered", args.filtered, d.filtered)?,
        replicates: s.pick_or("replicates", args.replicates, d.replicates)?,
        seed: ctx.seed,
        max_triples_per_replicate: s.pick_or("max_triples", args.max_triples, d.max_triples_per_replicate)?,
        segment_length: s.pick("segment_length", args.segment_length)?,
        direction: s.pick_or::<Direction>("direction", args.direction, d.direction)?,
    };
    config
        .validate()
        .map_err(|e| Failure::config(rec.stage(), e.to_string()))?;
    rec.setting("influence", &config);
    Ok(config)
}

/// The index column of a returns table is the one right after `date`.
fn header_index(bytes: &[u8]) -> Option<String> {
    let first = bytes.split(|b| *b == b'\n').next()?;
    let line = std::str::from_utf8(first).ok()?.trim_end_matches('\r');
    line.split(',').nth(1).map(|s| s.trim_matches('"').to_string())
}

fn load_returns(ctx: &Context, flag: Option<PathBuf>, rec: &mut Recorder) -> Outcome<ReturnPanel> {
    let path: PathBuf = ctx.settings.require("returns", flag, rec.stage())?;
    let bytes = rec.read_input("returns", &path)?;
    let index = match &ctx.index {
        Some(i) => i.clone(),
        None => header_index(&bytes).ok_or_else(|| Failure::config(rec.stage(), "cannot determine the index column"))?,
    };
    rec.setting("index", &index);
    let stage = rec.stage();
    rec.timed("load", || read_returns_csv(&bytes[..], &index)).stage(stage)
}

pub fn ingest(ctx: &Context, args: IngestArgs) -> Outcome<String> {
    let mut rec = Recorder::new("ingest", &ctx.out)?;
    let s = &ctx.settings;
    let prices: PathBuf = s.require("prices", args.prices, "ingest")?;
    let index = ctx
        .index
        .clone()
        .ok_or_else(|| Failure::config("ingest", "missing required setting `index`"))?;
    let max_flat = s.pick_or("max_flat_fraction", args.max_flat_fraction, DEFAULT_MAX_FLAT_FRACTION)?;
    rec.setting("index", &index);
    rec.setting("max_flat_fraction", max_flat);

    let bytes = rec.read_input("prices", &prices)?;
    let (panel, mut events) = rec.timed("load", || load_prices(&bytes[..])).stage("ingest")?;
    if panel.position(&index).is_none() {
        return Err(Failure::core("ingest", pcinf_core::Error::MissingIndex(index)));
    }
    let (liquid, reports) = filter_illiquid_except(&panel, max_flat, &[index.as_str()]).stage("ingest")?;
    let returns = log_returns(&liquid, &index).stage("ingest")?;

    events.push(IngestEvent {
        ticker: index.clone(),
        action: "exempt".into(),
        detail: "index is exempt from the liquidity filter".into(),
    });
    events.extend(reports.iter().filter(|r| !r.retained).map(|r| IngestEvent {
        ticker: r.ticker.clone(),
        action: "dropped_illiquid".into(),
        detail: format!("flat fraction {} exceeds {max_flat}", r.flat_fraction),
    }));
    rec.diagnose(
        events
            .iter()
            .filter(|e| e.action != "exempt")
            .map(|e| Diagnostic::new("ingest", format!("{}: {} ({})", e.ticker, e.action, e.detail))),
    );

    rec.write("returns.csv", |b| write_returns_csv(&returns, b))?;
    rec.write("liquidity.csv", |b| export::write_liquidity_csv(&reports, b))?;
    rec.write("ingest_log.jsonl", |b| export::write_ingest_log(&events, b))?;

    let stocks = reports.iter().filter(|r| r.ticker != index).count();
    let summary = format!(
        "ingest: {} of {stocks} stocks retained, {} return days",
        returns.n_stocks(),
        returns.n_obs()
    );
    let digest = rec.finish(ctx.jobs)?;
    Ok(format!("{summary}; manifest {digest}"))
}

pub fn influence(ctx: &Context, args: InfluenceArgs) -> Outcome<String> {
    let mut rec = Recorder::new("influence", &ctx.out)?;
    let panel = load_returns(ctx, args.returns, &mut rec)?;
    let config = influence_config(ctx, &args.significance, &mut rec)?;
    let run = rec.timed("compute", || run_influence(&panel, &config)).stage("influence")?;
    rec.diagnose(run.diagnostics.iter().cloned());

    let tensor = run.significant_tensor().stage("influence")?;
    rec.write("tensor.csv", |b| export::write_tensor_csv(&tensor, b))?;
    if panel.n_stocks() <= MAX_DENSE_STOCKS {
        let dense = run.dense_tensor().stage("influence")?;
        rec.write("tensor_dense.bin", |b| export::write_tensor_binary(&dense, b))?;
    }
    rec.write("thresholds.csv", |b| export::write_thresholds_csv(&run.table, b))?;
    rec.write("null_moments.json", |b| export::write_null_moments_json(&run.table, b))?;
    rec.write("influence_matrix.csv", |b| export::write_influence_matrix_csv(&run.matrix, b))?;
    rec.write("influence_counts.csv", |b| export::write_influence_counts_csv(&run.matrix, b))?;
    let ranking = run.totals.ranking("full");
    rec.write("ranking.csv", |b| export::write_ranking_csv(&ranking, b))?;

    let summary = format!(
        "influence: {} stocks, {} days, {} significant triples at level {} (threshold {}); most influential {}",
        panel.n_stocks(),
        panel.n_obs(),
        tensor.len(),
        config.level,
        run.table.threshold(config.level).unwrap_or(f64::NAN),
        ranking.tickers.first().map_or("-", String::as_str),
    );
    let digest = rec.finish(ctx.jobs)?;
    Ok(format!("{summary}; manifest {digest}"))
}

pub fn stability(ctx: &Context, args: StabilityArgs) -> Outcome<String> {
    let mut rec = Recorder::new("stability", &ctx.out)?;
    let panel = load_returns(ctx, args.returns, &mut rec)?;
    let config = influence_config(ctx, &args.significance, &mut rec)?;
    let min_days = ctx
        .settings
        .pick_or("min_quarter_days", args.min_quarter_days, MIN_QUARTER_DAYS)?;
    rec.setting("min_quarter_days", min_days);

    let calendar = QuarterCalendar::from_dates(panel.dates(), min_days).stage("stability")?;
    rec.diagnose(calendar.diagnostics().iter().cloned());
    let quarterly = rec
        .timed("rankings", || quarterly_rankings(&panel, &calendar, &config))
        .stage("stability")?;
    rec.diagnose(quarterly.diagnostics.iter().cloned());
    let taus = tau_matrix(&quarterly.rankings).stage("stability")?;
    rec.diagnose(taus.diagnostics().iter().cloned());
    rec.write("quarterly_rankings.csv", |b| export::write_rankings_csv(&quarterly.rankings, b))?;
    rec.write("tau_matrix.csv", |b| export::write_tau_matrix_csv(&taus, b))?;

    let fit = rec.timed("fit", || decay_fit(&taus)).stage("stability")?;
    rec.write("decay.csv", |b| export::write_decay_csv(&fit, b))?;
    rec.write("decay.json", |b| export::write_decay_json(&fit, b))?;

    let summary = format!(
        "stability: {} quarters ranked; tau0 = {:.4}, lambda = {:.4} quarters",
        quarterly.rankings.len(),
        fit.tau0,
        fit.lambda
    );
    let digest = rec.finish(ctx.jobs)?;
    Ok(format!("{summary}; manifest {digest}"))
}

pub fn sectors(ctx: &Context, args: SectorsArgs) -> Outcome<String> {
    let mut rec = Recorder::new("sectors", &ctx.out)?;
    let s = &ctx.settings;
    let sectors_path: PathBuf = s.require("sectors", args.sectors, "sectors")?;
    let map = load_sector_map(&rec.read_input("sectors", &sectors_path)?[..]).stage("sectors")?;
    let kind = s.pick_or::<BetaKind>("beta", args.beta, BetaKind::default())?;
    rec.setting("beta", kind);
    let window: Option<usize> = s.pick("window", args.window)?;

    let mut summary = String::from("sectors:");
    if let Some(matrix_path) = s.pick::<PathBuf>("matrix", args.matrix)? {
        let matrix = export::read_influence_matrix_csv(&rec.read_input("matrix", &matrix_path)?[..]).stage("sectors")?;
        let influence = sector_influence(&matrix, &map).stage("sectors")?;
        let attributions = sector_betas(&influence);
        let rates = prediction_rate(&attributions, &influence, kind).stage("sectors")?;
        let closeness = sector_closeness(&influence);
        rec.write("attribution.csv", |b| export::write_attribution_csv(&attributions, &influence, b))?;
        rec.write("prediction_rate.csv", |b| export::write_prediction_csv(&rates, b))?;
        rec.write("closeness.csv", |b| export::write_closeness_csv(&closeness, b))?;
        let mean = |f: fn(&pcinf_core::sectors::PredictionRate) -> f64| {
            rates.iter().map(f).sum::<f64>() / rates.len() as f64
        };
        summary.push_str(&format!(
            " {} sectors, mean prediction rate {:.3} (baseline {:.3})",
            rates.len(),
            mean(|r| r.rate),
            mean(|r| r.baseline)
        ));
    } else if window.is_none() {
        return Err(Failure::config(
            "sectors",
            "missing required setting `matrix` (or `window` with `returns`)",
        ));
    }

    if let Some(window) = window {
        let step = s.pick_or("step", args.step, window)?;
        rec.setting("window", window);
        rec.setting("step", step);
        let panel = load_returns(ctx, args.returns, &mut rec)?;
        let config = influence_config(ctx, &args.significance, &mut rec)?;
        let windows = rec
            .timed("rolling", || rolling_sector_influence(&panel, &map, &config, window, step))
            .stage("sectors")?;
        let mut rows = Vec::with_capacity(windows.len());
        for (label, influence, diagnostics) in windows {
            rec.diagnose(diagnostics);
            let rates = prediction_rate(&sector_betas(&influence), &influence, kind).stage("sectors")?;
            rows.push((label, rates));
        }
        rec.write("rolling_prediction_rate.csv", |b| export::write_rolling_prediction_csv(&rows, b))?;
        summary.push_str(&format!(" {} rolling windows", rows.len()));
    }
    let digest = rec.finish(ctx.jobs)?;
    Ok(format!("{summary}; manifest {digest}"))
}
