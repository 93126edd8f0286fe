//! Acceptance runner. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use pcinf_core::correlation::{
    compute_influence_tensor, influence_star_triple, partial_corr_on_index, partial_corr_on_index_and_stock,
    pearson, triple_count, Cutoff, PartialCorrelationMatrix, StorageMode,
};
use pcinf_core::export;
use pcinf_core::influence::rank_by_influence;
use pcinf_core::market_data::ReturnPanel;
use pcinf_core::pipeline::{run_influence, InfluenceConfig};
use pcinf_core::sectors::{
    prediction_rate, sector_betas, sector_closeness, sector_influence, AttributionFlag, BetaKind, SectorMap,
};
use pcinf_core::significance::{empirical_thresholds, fisher_table, shuffle_panel, ShuffleSpec};
use pcinf_core::stability::{
    decay_fit, fit_exponential_decay, kendall_tau, kendall_tau_permutation, quarterly_rankings, tau_matrix,
    QuarterCalendar, MIN_QUARTER_DAYS,
};
use pcinf_core::synthetic::{self, MarketDynamics};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// Independent oracles

/// Residual of `y` after least squares on an intercept and `regressors`,
/// by modified Gram-Schmidt.
fn residual(y: &[f64], regressors: &[&[f64]]) -> Vec<f64> {
    let n = y.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    columns.extend(regressors.iter().map(|r| r.to_vec()));
    for mut c in columns {
        for q in &basis {
            let p: f64 = c.iter().zip(q).map(|(a, b)| a * b).sum();
            c.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        basis.push(c.into_iter().map(|v| v / norm).collect());
    }
    let mut r = y.to_vec();
    for q in &basis {
        let p: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
        r.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
    }
    r
}

fn plain_corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn residual_partial(panel: &ReturnPanel, x: usize, y: usize, extra: Option<usize>) -> f64 {
    let mut regs: Vec<&[f64]> = vec![panel.index_returns()];
    if let Some(z) = extra {
        regs.push(panel.returns(z));
    }
    plain_corr(&residual(panel.returns(x), &regs), &residual(panel.returns(y), &regs))
}

fn pair_counting_tau(perm: &[usize]) -> f64 {
    let n = perm.len();
    let (mut c, mut d) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            if perm[i] < perm[j] {
                c += 1;
            } else {
                d += 1;
            }
        }
    }
    (c - d) as f64 / (n * (n - 1) / 2) as f64
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..n {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

fn peak_memory_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

// ---------------------------------------------------------------------------
// Criteria

fn partial_correlation_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let panel = if seed % 2 == 0 {
            synthetic::gaussian_panel(10, 200, seed)
        } else {
            synthetic::one_factor_market(10, 200, seed)
        };
        let partials = PartialCorrelationMatrix::compute(&panel).unwrap();
        for x in 0..10 {
            for y in x + 1..10 {
                worst = worst.max((partials.get(x, y) - residual_partial(&panel, x, y, None)).abs());
            }
        }
        let tensor = compute_influence_tensor(&panel, StorageMode::Dense).unwrap();
        for e in tensor.entries() {
            let oracle = residual_partial(&panel, e.x as usize, e.y as usize, Some(e.z as usize));
            worst = worst.max((e.rho_mz - oracle).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-8 && elapsed < Duration::from_secs(10),
        format!("100 panels N=10 T=200; max |closed form - residual| = {worst:.2e} (tol 1e-8); {elapsed:.2?} (< 10 s)"),
    )
}

fn tensor_brute_force() -> Outcome {
    let mut exact = true;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for n in 3..=8 {
        for seed in 0..5u64 {
            let panel = synthetic::one_factor_market(n, 150, 100 * n as u64 + seed);
            let tensor = compute_influence_tensor(&panel, StorageMode::Dense).unwrap();
            let m = panel.index_returns();
            for e in tensor.entries() {
                let (x, y, z) = (panel.returns(e.x as usize), panel.returns(e.y as usize), panel.returns(e.z as usize));
                let p = |a: &[f64], b: &[f64]| pearson(a, b).unwrap();
                let xy_m = partial_corr_on_index(p(x, y), p(x, m), p(y, m)).unwrap();
                let xz_m = partial_corr_on_index(p(x, z), p(x, m), p(z, m)).unwrap();
                let yz_m = partial_corr_on_index(p(y, z), p(y, m), p(z, m)).unwrap();
                let xy_mz = partial_corr_on_index_and_stock(xy_m, xz_m, yz_m).unwrap();
                let d = xy_m - xy_mz;
                exact &= d.to_bits() == e.d.to_bits();
                let oracle = residual_partial(&panel, e.x as usize, e.y as usize, None)
                    - residual_partial(&panel, e.x as usize, e.y as usize, Some(e.z as usize));
                worst = worst.max((e.d - oracle).abs());
                checked += 1;
            }
        }
    }
    outcome(
        exact && worst <= 1e-10,
        format!("{checked} triples, N=3..8; same-path bit-exact: {exact}; max |d - residual oracle| = {worst:.2e} (tol 1e-10)"),
    )
}

fn index_positivity() -> Outcome {
    let panel = synthetic::one_factor_market(50, 2000, 11);
    let partials = PartialCorrelationMatrix::compute(&panel).unwrap();
    let mut violations = 0;
    let mut pairs = 0;
    for x in 0..50 {
        for y in x + 1..50 {
            let raw = pearson(panel.returns(x), panel.returns(y)).unwrap();
            pairs += 1;
            if partials.get(x, y) >= raw {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("{pairs} pairs, one-factor market N=50 T=2000; violations of rho(X,Y:M) < rho(X,Y): {violations}"),
    )
}

fn negative_influence() -> Outcome {
    let mut concordant = 0;
    for seed in 0..100u64 {
        let panel = synthetic::common_driver_triple(-1.0, 1.5, 1000, seed);
        let tensor = compute_influence_tensor(&panel, StorageMode::Dense).unwrap();
        let e = tensor.entries().iter().find(|e| (e.x, e.y, e.z) == (0, 1, 2)).unwrap();
        let (x, y, z) = (panel.returns(0), panel.returns(1), panel.returns(2));
        let rho_xy = pearson(x, y).unwrap();
        let rho_xy_z = partial_corr_on_index(rho_xy, pearson(x, z).unwrap(), pearson(y, z).unwrap()).unwrap();
        let d_star = influence_star_triple(rho_xy, rho_xy_z).unwrap();
        if e.d < 0.0 && d_star > 0.0 {
            concordant += 1;
        }
    }
    outcome(
        concordant >= 95,
        format!("competitor/cooperator triple, 100 seeds; d < 0 and d* > 0 in {concordant}/100 (need >= 95)"),
    )
}

struct NullFixture {
    panel: ReturnPanel,
    level: f64,
    threshold: f64,
}

fn null_fixture() -> NullFixture {
    let panel = synthetic::gaussian_panel(30, 1000, 2024);
    let spec = ShuffleSpec {
        replicates: 10,
        seed: 1,
        ..ShuffleSpec::default()
    };
    let table = empirical_thresholds(&panel, &spec).unwrap();
    NullFixture {
        threshold: table.threshold(0.02).unwrap(),
        level: 0.02,
        panel,
    }
}

fn null_calibration(fixture: &NullFixture) -> Outcome {
    let start = Instant::now();
    let held_out = shuffle_panel(&fixture.panel, 0xDEAD_BEEF, None);
    let tensor = compute_influence_tensor(&held_out, StorageMode::Dense).unwrap();
    let exceed = tensor.entries().iter().filter(|e| e.d.abs() > fixture.threshold).count();
    let rate = exceed as f64 / tensor.len() as f64;
    let elapsed = start.elapsed();
    outcome(
        (rate - fixture.level).abs() <= 0.005 && elapsed < Duration::from_secs(120),
        format!(
            "i.i.d. N=30 T=1000, 10 replicates; held-out exceedance {:.3}% of {} triples at 2% threshold {:.3e} (target 2.0 +/- 0.5%)",
            100.0 * rate,
            tensor.len(),
            fixture.threshold
        ),
    )
}

fn fisher_shuffle_concordance(fixture: &NullFixture) -> Outcome {
    let tensor = compute_influence_tensor(&fixture.panel, StorageMode::Dense).unwrap();
    let shuffle_cut = Cutoff::Influence {
        threshold: fixture.threshold,
    };
    let fisher_cut = fisher_table(&[fixture.level]).unwrap().cutoff(fixture.level, fixture.panel.n_obs()).unwrap();
    let agree = tensor
        .entries()
        .iter()
        .filter(|e| shuffle_cut.passes(e.rho_m, e.rho_mz) == fisher_cut.passes(e.rho_m, e.rho_mz))
        .count();
    let rate = agree as f64 / tensor.len() as f64;
    outcome(
        rate >= 0.95,
        format!("same panel, 2% level; per-triple decisions agree on {:.2}% of {} triples (need >= 95%)", 100.0 * rate, tensor.len()),
    )
}

fn kendall_exactness() -> Outcome {
    let mut cases = 0;
    let mut mismatches = 0;
    for n in 2..=6 {
        for p in permutations(n) {
            cases += 1;
            if kendall_tau_permutation(&p).unwrap() != pair_counting_tau(&p) {
                mismatches += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut random_mismatches = 0;
    for _ in 0..1000 {
        let mut p: Vec<usize> = (0..200).collect();
        p.shuffle(&mut rng);
        if kendall_tau_permutation(&p).unwrap() != pair_counting_tau(&p) {
            random_mismatches += 1;
        }
    }
    let names: Vec<String> = (0..10).map(synthetic::ticker).collect();
    let values: Vec<f64> = (0..10).map(|v| v as f64).collect();
    let reversed: Vec<f64> = values.iter().map(|v| -v).collect();
    let a = rank_by_influence(&names, &values, "a").unwrap();
    let r = rank_by_influence(&names, &reversed, "r").unwrap();
    let identical = kendall_tau(&a, &a).unwrap();
    let opposite = kendall_tau(&a, &r).unwrap();
    outcome(
        mismatches == 0 && random_mismatches == 0 && identical == 1.0 && opposite == -1.0,
        format!(
            "{cases} exhaustive permutations (n<=6): {mismatches} mismatches; 1000 random n=200: {random_mismatches} mismatches; identical -> {identical}, reversed -> {opposite}"
        ),
    )
}

fn decay_recovery() -> Outcome {
    let curve = |noise: f64, seed: u64| -> Vec<(f64, f64)> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (1..=43)
            .map(|t| {
                let t = t as f64;
                (t, 0.3 * (-t / 20.0).exp() + noise * normal.sample(&mut rng))
            })
            .collect()
    };
    let exact = fit_exponential_decay(&curve(0.0, 0)).unwrap();
    let exact_ok = (exact.tau0 - 0.3).abs() <= 1e-6 && (exact.lambda - 20.0).abs() <= 1e-6;
    let mut within = 0;
    for seed in 0..100 {
        if let Ok(fit) = fit_exponential_decay(&curve(0.02, seed)) {
            if (fit.tau0 / 0.3 - 1.0).abs() <= 0.1 && (fit.lambda / 20.0 - 1.0).abs() <= 0.1 {
                within += 1;
            }
        }
    }
    outcome(
        exact_ok && within >= 90,
        format!(
            "noiseless fit tau0={:.9} lambda={:.9} (tol 1e-6); noisy sigma=0.02: {within}/100 seeds within 10% (need >= 90)",
            exact.tau0, exact.lambda
        ),
    )
}

fn quarterly_tau0(dynamics: MarketDynamics, seed: u64) -> f64 {
    let panel = synthetic::quarterly_market(30, 2, dynamics, seed);
    let calendar = QuarterCalendar::from_dates(panel.dates(), MIN_QUARTER_DAYS).unwrap();
    let config = InfluenceConfig {
        seed,
        ..InfluenceConfig::default()
    };
    let rankings = quarterly_rankings(&panel, &calendar, &config).unwrap();
    let taus = tau_matrix(&rankings.rankings).unwrap();
    decay_fit(&taus).map(|f| f.tau0).unwrap_or(f64::NEG_INFINITY)
}

fn stability_ordering() -> Outcome {
    let mut wins = 0;
    let (mut stat_sum, mut regime_sum) = (0.0, 0.0);
    for seed in 0..20u64 {
        let stationary = quarterly_tau0(MarketDynamics::Stationary, seed);
        let switching = quarterly_tau0(
            MarketDynamics::RegimeSwitching {
                regime_quarters: 1,
                persistence: 0.3,
            },
            seed,
        );
        stat_sum += stationary;
        regime_sum += switching;
        if stationary > switching {
            wins += 1;
        }
    }
    outcome(
        wins >= 18,
        format!(
            "N=30, 44 quarters, 20 paired seeds; stationary tau0 > regime-switching tau0 in {wins}/20 (need >= 18); mean tau0 {:.3} vs {:.3}",
            stat_sum / 20.0,
            regime_sum / 20.0
        ),
    )
}

struct SectorFixture {
    name: &'static str,
    attributions: Vec<pcinf_core::sectors::SectorAttribution>,
}

fn sector_prediction(fixtures: &mut Vec<SectorFixture>) -> Outcome {
    let (panel, sectors) = synthetic::block_factor_market(8, 25, 1000, 1.0, 5);
    let run = run_influence(&panel, &InfluenceConfig { seed: 5, ..InfluenceConfig::default() }).unwrap();
    let influence = sector_influence(&run.matrix, &sectors).unwrap();
    let attributions = sector_betas(&influence);
    let rates = prediction_rate(&attributions, &influence, BetaKind::default()).unwrap();
    let min_rate = rates.iter().map(|r| r.rate).fold(f64::INFINITY, f64::min);
    let baseline = rates[0].baseline;
    let raw_min = prediction_rate(&attributions, &influence, BetaKind::Raw)
        .unwrap()
        .iter()
        .map(|r| r.rate)
        .fold(f64::INFINITY, f64::min);
    let mixed = attributions.iter().filter(|a| a.flag == AttributionFlag::MixedSign).count();

    let permutations = 5;
    let mut permuted_mean = 0.0;
    for k in 0..permutations {
        let shuffled: SectorMap = sectors.permuted(1000 + k);
        let inf = sector_influence(&run.matrix, &shuffled).unwrap();
        let rates = prediction_rate(&sector_betas(&inf), &inf, BetaKind::default()).unwrap();
        permuted_mean += rates.iter().map(|r| r.rate).sum::<f64>() / rates.len() as f64;
    }
    permuted_mean /= permutations as f64;
    fixtures.push(SectorFixture {
        name: "block-factor 8x25",
        attributions,
    });
    outcome(
        min_rate >= 0.9 && (permuted_mean - 0.125).abs() <= 0.05,
        format!(
            "8 sectors x 25 stocks, SNR 1.0, T=1000; min per-sector rate {min_rate:.3} by rectified beta (need >= 0.9, baseline {baseline:.3}; raw beta {raw_min:.3}, {mixed}/200 mixed-sign); permuted map mean rate {permuted_mean:.3} over {permutations} permutations (0.125 +/- 0.05)"
        ),
    )
}

fn beta_normalization(fixtures: &mut Vec<SectorFixture>) -> Outcome {
    let (panel, sectors) = synthetic::shared_factor_sectors(1500, 3);
    let run = run_influence(&panel, &InfluenceConfig { seed: 3, ..InfluenceConfig::default() }).unwrap();
    let influence = sector_influence(&run.matrix, &sectors).unwrap();
    fixtures.push(SectorFixture {
        name: "shared-factor 3x8",
        attributions: sector_betas(&influence),
    });
    let (panel, sectors) = synthetic::block_factor_market(4, 10, 400, 0.3, 9);
    let run = run_influence(&panel, &InfluenceConfig { seed: 9, filtered: false, ..InfluenceConfig::default() }).unwrap();
    fixtures.push(SectorFixture {
        name: "block-factor 4x10 unfiltered",
        attributions: sector_betas(&sector_influence(&run.matrix, &sectors).unwrap()),
    });

    let mut defined = 0;
    let mut broken = 0;
    let mut undefined = 0;
    for f in fixtures.iter() {
        for a in &f.attributions {
            if a.flag == AttributionFlag::Undefined {
                undefined += 1;
                continue;
            }
            defined += 1;
            if a.betas.iter().flatten().sum::<f64>() != 1.0 {
                broken += 1;
            }
        }
    }
    let names: Vec<&str> = fixtures.iter().map(|f| f.name).collect();
    outcome(
        broken == 0 && defined > 0,
        format!("{defined} defined attributions across {names:?}; in-order sum != 1.0 for {broken}; {undefined} flagged undefined"),
    )
}

fn performance() -> Outcome {
    let threads = rayon::current_num_threads();
    let panel = synthetic::one_factor_market(100, 2500, 12);
    let start = Instant::now();
    let all = compute_influence_tensor(&panel, StorageMode::SignificantOnly(Cutoff::Influence { threshold: 0.0 })).unwrap();
    let small = start.elapsed();
    let small_ok = all.len() as u64 + all.skipped() == triple_count(100) && small < Duration::from_secs(30);

    let panel = synthetic::one_factor_market(403, 2770, 13);
    let start = Instant::now();
    let table = empirical_thresholds(&panel, &ShuffleSpec { seed: 13, ..ShuffleSpec::default() }).unwrap();
    let cutoff = table.cutoff(0.02, panel.n_obs()).unwrap();
    let tensor = compute_influence_tensor(&panel, StorageMode::SignificantOnly(cutoff)).unwrap();
    let large = start.elapsed();
    let peak = peak_memory_kib();
    let peak_gib = peak.map(|k| k as f64 / (1024.0 * 1024.0));
    let large_ok = tensor.enumerated() == triple_count(403)
        && large < Duration::from_secs(30 * 60)
        && peak_gib.is_some_and(|g| g < 2.0);
    outcome(
        small_ok && large_ok,
        format!(
            "{threads} thread(s). N=100 T=2500: {} triples in {small:.2?} (< 30 s). N=403 T=2770: {} triples enumerated, shuffle null (10 replicates) + significant-only tensor ({} stored) in {large:.2?} (< 30 min); peak RSS {} (< 2 GiB)",
            all.len(),
            tensor.enumerated(),
            tensor.len(),
            peak_gib.map_or("unavailable".to_string(), |g| format!("{g:.3} GiB"))
        ),
    )
}

/// Every export produced by the library pipeline, as named byte buffers.
fn export_bundle() -> Vec<(&'static str, Vec<u8>)> {
    let mut out: Vec<(&'static str, Vec<u8>)> = Vec::new();
    let mut put = |name: &'static str, f: &dyn Fn(&mut Vec<u8>)| {
        let mut buf = Vec::new();
        f(&mut buf);
        out.push((name, buf));
    };
    let (panel, sectors) = synthetic::block_factor_market(4, 5, 600, 1.0, 21);
    let config = InfluenceConfig { seed: 21, ..InfluenceConfig::default() };
    let run = run_influence(&panel, &config).unwrap();
    let tensor = run.significant_tensor().unwrap();
    let dense = run.dense_tensor().unwrap();
    put("tensor.csv", &|b| export::write_tensor_csv(&tensor, b).unwrap());
    put("tensor.bin", &|b| export::write_tensor_binary(&dense, b).unwrap());
    put("thresholds.csv", &|b| export::write_thresholds_csv(&run.table, b).unwrap());
    put("null.json", &|b| export::write_null_moments_json(&run.table, b).unwrap());
    put("matrix.csv", &|b| export::write_influence_matrix_csv(&run.matrix, b).unwrap());
    put("ranking.csv", &|b| export::write_ranking_csv(&run.totals.ranking("full"), b).unwrap());

    let influence = sector_influence(&run.matrix, &sectors).unwrap();
    let attributions = sector_betas(&influence);
    let rates = prediction_rate(&attributions, &influence, BetaKind::Raw).unwrap();
    put("attribution.csv", &|b| export::write_attribution_csv(&attributions, &influence, b).unwrap());
    put("prediction.csv", &|b| export::write_prediction_csv(&rates, b).unwrap());
    put("closeness.csv", &|b| export::write_closeness_csv(&sector_closeness(&influence), b).unwrap());

    let market = synthetic::quarterly_market(12, 2, MarketDynamics::Drifting { rho: 0.8 }, 21);
    let calendar = QuarterCalendar::from_dates(market.dates(), MIN_QUARTER_DAYS).unwrap();
    let quarterly = quarterly_rankings(&market, &calendar, &InfluenceConfig { replicates: 3, ..config }).unwrap();
    let taus = tau_matrix(&quarterly.rankings).unwrap();
    let fit = decay_fit(&taus).unwrap();
    put("rankings.csv", &|b| export::write_rankings_csv(&quarterly.rankings, b).unwrap());
    put("tau.csv", &|b| export::write_tau_matrix_csv(&taus, b).unwrap());
    put("decay.csv", &|b| export::write_decay_csv(&fit, b).unwrap());
    put("decay.json", &|b| export::write_decay_json(&fit, b).unwrap());
    out
}

fn determinism() -> Outcome {
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(export_bundle)
    };
    let reference = in_pool(1);
    let runs = [in_pool(1), in_pool(2), in_pool(4), in_pool(8)];
    let differing: Vec<&str> = runs
        .iter()
        .flat_map(|run| {
            run.iter()
                .zip(&reference)
                .filter(|(a, b)| a.1 != b.1)
                .map(|(a, _)| a.0)
                .collect::<Vec<_>>()
        })
        .collect();
    let bytes: usize = reference.iter().map(|(_, b)| b.len()).sum();
    outcome(
        differing.is_empty(),
        format!(
            "{} exports ({bytes} bytes) compared across 1/1/2/4/8-thread runs; differing: {differing:?}",
            reference.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let o = f();
        println!("[{}] {id:>2}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    record(1, "Partial-correlation oracle equivalence", &mut partial_correlation_oracle);
    record(2, "Influence-tensor brute-force equivalence", &mut tensor_brute_force);
    record(3, "Index positivity", &mut index_positivity);
    record(4, "Negative-influence existence", &mut negative_influence);
    let fixture = null_fixture();
    record(5, "Null calibration", &mut || null_calibration(&fixture));
    record(6, "Fisher/shuffle concordance", &mut || fisher_shuffle_concordance(&fixture));
    record(7, "Kendall-tau exactness", &mut kendall_exactness);
    record(8, "Decay-fit recovery", &mut decay_recovery);
    record(9, "Stability ordering", &mut stability_ordering);
    let mut fixtures = Vec::new();
    record(10, "Sector prediction", &mut || sector_prediction(&mut fixtures));
    record(11, "Beta normalization", &mut || beta_normalization(&mut fixtures));
    record(12, "Performance envelope", &mut performance);
    record(13, "Determinism", &mut determinism);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
