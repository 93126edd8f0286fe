use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcinf_core::market_data::{write_returns_csv, ReturnPanel};
use pcinf_core::sectors::SectorMap;
use pcinf_core::synthetic::{self, MarketDynamics, INDEX_TICKER};
use serde_json::Value;
use tempfile::TempDir;

fn pcinf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcinf"))
        .args(args)
        .env("PCINF_LOG", "error")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().find(|l| l.starts_with('{')).expect("structured error on stderr");
    serde_json::from_str(line).unwrap()
}

fn write_prices(dir: &Path, panel: &ReturnPanel) -> PathBuf {
    let path = dir.join("prices.csv");
    let prices = synthetic::prices_from_returns(panel);
    synthetic::write_prices_csv(&prices, fs::File::create(&path).unwrap()).unwrap();
    path
}

fn write_returns(dir: &Path, panel: &ReturnPanel) -> PathBuf {
    let path = dir.join("returns.csv");
    write_returns_csv(panel, fs::File::create(&path).unwrap()).unwrap();
    path
}

fn write_sectors(dir: &Path, name: &str, map: &SectorMap) -> PathBuf {
    let path = dir.join(name);
    let mut text = String::from("ticker,sector\n");
    for (t, sector) in map.assignments() {
        text.push_str(&format!("{t},{sector}\n"));
    }
    fs::write(&path, text).unwrap();
    path
}

fn manifest(dir: &Path, stage: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("manifest_{stage}.json"))).unwrap()).unwrap()
}

/// Data rows of a CSV as string fields.
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn mean_rate(path: &Path) -> (f64, f64) {
    let r = rows(path);
    let n = r.len() as f64;
    let rate = r.iter().map(|row| row[2].parse::<f64>().unwrap()).sum::<f64>() / n;
    let baseline = r.iter().map(|row| row[3].parse::<f64>().unwrap()).sum::<f64>() / n;
    (rate, baseline)
}

#[test]
fn ingest_retains_liquid_stocks() {
    let dir = TempDir::new().unwrap();
    let base = synthetic::one_factor_market(500, 260, 3);
    let illiquid = 97;
    let columns: Vec<Vec<f64>> = base
        .columns()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut c = c.clone();
            if i % 5 == 0 && i / 5 < illiquid {
                c.iter_mut().step_by(10).for_each(|r| *r = 0.0);
            }
            c
        })
        .collect();
    let panel = ReturnPanel::new(
        base.tickers().to_vec(),
        base.dates().to_vec(),
        columns,
        INDEX_TICKER,
        base.index_returns().to_vec(),
    )
    .unwrap();
    let prices = write_prices(dir.path(), &panel);
    let before = fs::read(&prices).unwrap();
    let out_dir = dir.path().join("out");

    let out = pcinf(&["ingest", "--prices", s(&prices), "--index", INDEX_TICKER, "--out", s(&out_dir)]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("403 of 500 stocks retained"));

    let liquidity = rows(&out_dir.join("liquidity.csv"));
    assert_eq!(liquidity.len(), 501);
    let retained = liquidity.iter().filter(|r| r[0] != INDEX_TICKER && r[2] == "true").count();
    assert_eq!(retained, 403);
    let header = fs::read_to_string(out_dir.join("returns.csv")).unwrap();
    let header = header.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 405);
    assert!(header.starts_with(&format!("date,{INDEX_TICKER},")));
    let log = fs::read_to_string(out_dir.join("ingest_log.jsonl")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains("dropped_illiquid")).count(), 97);
    assert_eq!(manifest(&out_dir, "ingest")["stage"], "ingest");
    assert_eq!(fs::read(&prices).unwrap(), before, "input was modified");
}

#[test]
fn missing_index_exits_with_input_error() {
    let dir = TempDir::new().unwrap();
    let prices = write_prices(dir.path(), &synthetic::one_factor_market(5, 50, 1));
    let out = pcinf(&["ingest", "--prices", s(&prices), "--index", "SPX", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"]["stage"], "ingest");
    assert_eq!(err["error"]["code"], "missing_index");
    assert!(err["error"]["message"].as_str().unwrap().contains("SPX"));
}

fn influence_run(returns: &Path, out: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["influence", "--returns", s(returns), "--out", s(out), "--replicates", "3"];
    args.extend_from_slice(extra);
    assert_ok(&pcinf(&args));
    manifest(out, "influence")
}

#[test]
fn influence_is_reproducible_and_seeded() {
    let dir = TempDir::new().unwrap();
    let prices = write_prices(dir.path(), &synthetic::one_factor_market(20, 500, 9));
    let ingested = dir.path().join("ingest");
    assert_ok(&pcinf(&["ingest", "--prices", s(&prices), "--index", INDEX_TICKER, "--out", s(&ingested)]));
    let returns = ingested.join("returns.csv");

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let ma = influence_run(&returns, &a, &["--seed", "11", "--jobs", "1"]);
    let mb = influence_run(&returns, &b, &["--seed", "11", "--jobs", "4"]);
    let mc = influence_run(&returns, &c, &["--seed", "12"]);

    assert_eq!(ma["digest"], mb["digest"]);
    let files = [
        "tensor.csv",
        "tensor_dense.bin",
        "thresholds.csv",
        "null_moments.json",
        "influence_matrix.csv",
        "influence_counts.csv",
        "ranking.csv",
    ];
    for f in files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert_ne!(ma["digest"], mc["digest"]);
    assert_ne!(fs::read(a.join("thresholds.csv")).unwrap(), fs::read(c.join("thresholds.csv")).unwrap());
    assert_eq!(fs::read(a.join("tensor_dense.bin")).unwrap(), fs::read(c.join("tensor_dense.bin")).unwrap());

    let dense = pcinf_core::export::read_tensor_binary(fs::File::open(a.join("tensor_dense.bin")).unwrap()).unwrap();
    assert_eq!(dense.d.len() as u64, pcinf_core::correlation::triple_count(20));
    // Stocks without a significant triple have no defined influence and are unranked.
    let ranking = rows(&a.join("ranking.csv"));
    assert!(!ranking.is_empty() && ranking.len() <= 20);
    for (k, row) in ranking.iter().enumerate() {
        assert_eq!(row[0], (k + 1).to_string());
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let returns = write_returns(dir.path(), &synthetic::gaussian_panel(8, 200, 2));
    let config = dir.path().join("run.conf");
    fs::write(
        &config,
        format!("# fisher run\nmethod = fisher\nlevel = 0.05\nreturns = {}\nfiltered = false\n", s(&returns)),
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_ok(&pcinf(&["influence", "--config", s(&config), "--level", "0.02", "--out", s(&out)]));
    let m = manifest(&out, "influence");
    assert_eq!(m["config"]["influence"]["level"], 0.02);
    assert_eq!(m["config"]["influence"]["method"], "fisher");
    assert_eq!(m["config"]["influence"]["filtered"], false);
    let thresholds = fs::read_to_string(out.join("thresholds.csv")).unwrap();
    assert!(thresholds.contains("fisher"));

    fs::write(&config, "colour = blue\n").unwrap();
    let bad = pcinf(&["influence", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(error_json(&bad)["error"]["code"], "config");

    let bad = pcinf(&["influence", "--returns", s(&returns), "--level", "0.9", "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}

fn stability_lambda(dynamics: MarketDynamics, seed: u64, dir: &Path) -> f64 {
    let sub = dir.join(format!("{dynamics:?}-{seed}").replace([' ', '{', '}', ':', '.', ','], ""));
    fs::create_dir_all(&sub).unwrap();
    let returns = write_returns(&sub, &synthetic::quarterly_market(30, 2, dynamics, seed));
    let out = sub.join("out");
    let seed = seed.to_string();
    assert_ok(&pcinf(&["stability", "--returns", s(&returns), "--seed", &seed, "--out", s(&out)]));
    let taus = fs::read_to_string(out.join("tau_matrix.csv")).unwrap();
    let lines: Vec<&str> = taus.lines().collect();
    assert_eq!(lines.len(), 45);
    for (i, line) in lines[1..].iter().enumerate() {
        assert_eq!(line.split(',').nth(i + 1), Some("1"));
    }
    let fit: Value = serde_json::from_str(&fs::read_to_string(out.join("decay.json")).unwrap()).unwrap();
    fit["lambda"].as_f64().unwrap()
}

#[test]
fn stationary_market_decays_slower_than_drifting() {
    let dir = TempDir::new().unwrap();
    let mut wins = 0;
    for seed in 0..3 {
        let stationary = stability_lambda(MarketDynamics::Stationary, seed, dir.path());
        let drifting = stability_lambda(MarketDynamics::Drifting { rho: 0.8 }, seed, dir.path());
        if stationary > drifting {
            wins += 1;
        }
    }
    assert_eq!(wins, 3);
}

#[test]
fn single_quarter_is_insufficient() {
    let dir = TempDir::new().unwrap();
    let returns = write_returns(dir.path(), &synthetic::gaussian_panel(6, 40, 1));
    let out = pcinf(&["stability", "--returns", s(&returns), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"]["stage"], "stability");
    assert!(err["error"]["message"].as_str().unwrap().contains("insufficient quarters"));
}

struct SectorFixture {
    dir: TempDir,
    returns: PathBuf,
    matrix: PathBuf,
    map: SectorMap,
}

fn sector_fixture() -> SectorFixture {
    let dir = TempDir::new().unwrap();
    let (panel, map) = synthetic::block_factor_market(6, 10, 800, 1.0, 4);
    let returns = write_returns(dir.path(), &panel);
    let out = dir.path().join("influence");
    influence_run(&returns, &out, &["--seed", "4"]);
    SectorFixture {
        matrix: out.join("influence_matrix.csv"),
        returns,
        map,
        dir,
    }
}

#[test]
fn sector_rates_beat_baseline_and_permuted_map_does_not() {
    let f = sector_fixture();
    let map = write_sectors(f.dir.path(), "sectors.csv", &f.map);
    let out = f.dir.path().join("sectors");
    assert_ok(&pcinf(&["sectors", "--matrix", s(&f.matrix), "--sectors", s(&map), "--out", s(&out)]));
    let (rate, baseline) = mean_rate(&out.join("prediction_rate.csv"));
    assert!((baseline - 1.0 / 6.0).abs() < 1e-12);
    assert!(rate > 0.9, "rate {rate}");
    assert_eq!(rows(&out.join("attribution.csv")).len(), 60 * 6);
    let closeness = fs::read_to_string(out.join("closeness.csv")).unwrap();
    assert_eq!(closeness.lines().count(), 7);

    let mut permuted = 0.0;
    let trials = 8;
    for k in 0..trials {
        let path = write_sectors(f.dir.path(), &format!("permuted{k}.csv"), &f.map.permuted(100 + k));
        let out = f.dir.path().join(format!("permuted{k}"));
        assert_ok(&pcinf(&["sectors", "--matrix", s(&f.matrix), "--sectors", s(&path), "--out", s(&out)]));
        permuted += mean_rate(&out.join("prediction_rate.csv")).0 / trials as f64;
    }
    assert!((permuted - 1.0 / 6.0).abs() < 0.08, "permuted rate {permuted}");
}

#[test]
fn missing_sector_names_the_ticker() {
    let f = sector_fixture();
    let missing = f.map.assignments()[7].0.clone();
    let partial = SectorMap::new(f.map.assignments().iter().filter(|(t, _)| *t != missing).cloned().collect()).unwrap();
    let map = write_sectors(f.dir.path(), "partial.csv", &partial);
    let out = pcinf(&["sectors", "--matrix", s(&f.matrix), "--sectors", s(&map), "--out", s(f.dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"]["code"], "missing_sector");
    assert!(err["error"]["message"].as_str().unwrap().contains(&missing));
}

#[test]
fn rolling_windows_write_one_block_per_window() {
    let f = sector_fixture();
    let map = write_sectors(f.dir.path(), "sectors.csv", &f.map);
    let out = f.dir.path().join("rolling");
    assert_ok(&pcinf(&[
        "sectors",
        "--sectors",
        s(&map),
        "--returns",
        s(&f.returns),
        "--window",
        "400",
        "--step",
        "200",
        "--replicates",
        "2",
        "--out",
        s(&out),
    ]));
    let r = rows(&out.join("rolling_prediction_rate.csv"));
    assert_eq!(r.len(), 3 * 6);
    let windows: std::collections::BTreeSet<&str> = r.iter().map(|row| row[0].as_str()).collect();
    assert_eq!(windows.len(), 3);
    assert!(!out.join("attribution.csv").exists());
}

/// Output hashes of an N=20 run frozen from a reference run. Set
/// `PCINF_BLESS=1` to regenerate after an intentional format change.
#[test]
fn influence_matches_frozen_golden() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/influence_n20.json");
    let dir = TempDir::new().unwrap();
    let returns = write_returns(dir.path(), &synthetic::one_factor_market(20, 500, 9));
    let m = influence_run(&returns, &dir.path().join("out"), &["--seed", "7"]);
    let outputs = &m["outputs"];
    if std::env::var_os("PCINF_BLESS").is_some() {
        fs::create_dir_all(golden.parent().unwrap()).unwrap();
        fs::write(&golden, serde_json::to_string_pretty(outputs).unwrap() + "\n").unwrap();
    }
    let frozen: Value = serde_json::from_str(&fs::read_to_string(&golden).unwrap()).unwrap();
    assert_eq!(outputs.as_object().unwrap().len(), 7);
    assert_eq!(outputs, &frozen);
}
