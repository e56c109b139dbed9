//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criterion 7 reads post-cleaning datasets from `$OPTCLEAN_PUBLISHED_DATA`
//! (default `tests/data/published`): every `NAME.csv` in the quote schema
//! needs a `NAME.context.json` next to it.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::{load_standard, FIXTURE_COUNT};
use optclean::arbitrage_filter::filter_arbitrage;
use optclean::ingest::{self, ReadOptions};
use optclean::model::{CleaningConfig, MarketContext, OptionQuote, OptionType, Stage};
use optclean::numerics::{fit_polynomial, PolyCoeffs};
use optclean::outlier_detector::{critical_value, exceedances};
use optclean::pipeline::{run_pipeline, CleaningOutcome};
use optclean::synthgen::{build_fixture, InjectedKind, InjectionPlan, SmileSpec};

type Verdict = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "bound-filter soundness", bound_filter_soundness),
        (2, "critical-value formula", critical_value_formula),
        (3, "band calibration", band_calibration),
        (4, "regression oracle", regression_oracle),
        (5, "injection recovery", injection_recovery),
        (6, "uniqueness and reconciliation", uniqueness_and_reconciliation),
        (7, "published-dataset idempotence", published_idempotence),
        (8, "performance", performance),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, check) in criteria {
        let verdict = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(v) => v,
            Err(e) => Err(format!(
                "panicked: {}",
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            )),
        };
        match verdict {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

const BOUNDS: &[Stage] = &[Stage::ArbitrageBound];
const OUTLIERS: &[Stage] = &[Stage::Outlier];
const DUPLICATES: &[Stage] = &[Stage::DuplicateMonotonicity, Stage::DuplicateOpenInterest];

fn removed_ids(outcome: &CleaningOutcome, stages: &[Stage]) -> HashSet<usize> {
    outcome
        .removals
        .iter()
        .filter(|r| stages.contains(&r.stage()))
        .map(|r| r.quote_id)
        .collect()
}

// 1

fn oracle_interval(t: OptionType, spot: f64, strike: f64, rate: f64, days: u32) -> (f64, f64) {
    let pv = strike * (-(rate * (f64::from(days) / 365.0))).exp();
    match t {
        OptionType::Call => ((spot - pv).max(0.0), spot),
        OptionType::Put => ((pv - spot).max(0.0), pv),
    }
}

fn bound_filter_soundness() -> Verdict {
    const TUPLES: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0B);
    let config = CleaningConfig::default();
    let started = Instant::now();
    let mut disagreements = Vec::new();
    let mut removed_total = 0;
    let mut on_boundary = 0;
    for i in 0..TUPLES {
        let spot = rng.gen_range(1.0..5000.0);
        let strike = spot * rng.gen_range(0.2..2.0);
        let rate = rng.gen_range(-0.02..0.15);
        let days = rng.gen_range(1..=1500u32);
        let option_type = if rng.gen_bool(0.5) { OptionType::Call } else { OptionType::Put };
        let (lo, hi) = oracle_interval(option_type, spot, strike, rate, days);
        // a fifth of the prices sit on an endpoint or one ulp outside it
        let price = match rng.gen_range(0..10) {
            0 => lo,
            1 => hi,
            2 if lo > 0.0 => lo.next_down(),
            3 => hi.next_up(),
            _ => rng.gen_range(0.0..(1.3 * hi)),
        };
        if price == lo || price == hi || price == lo.next_down() || price == hi.next_up() {
            on_boundary += 1;
        }
        let ctx = MarketContext::new(spot, rate).map_err(|e| e.to_string())?;
        let q = OptionQuote {
            id: i,
            option_type,
            strike,
            maturity_days: days,
            price,
            open_interest: 0,
        };
        let out = filter_arbitrage(&[q], &ctx, &config);
        let removed = !out.removed.is_empty();
        let expected = !(lo <= price && price <= hi);
        removed_total += usize::from(removed);
        if removed != expected {
            disagreements.push((q, lo, hi));
        }
    }
    let elapsed = started.elapsed();
    ensure(disagreements.is_empty(), || {
        format!("{} disagreements, first {:?}", disagreements.len(), disagreements[0])
    })?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{TUPLES} tuples ({on_boundary} at an endpoint or one ulp outside, {removed_total} removed), 0 disagreements, {elapsed:.2?}"
    ))
}

// 2

fn critical_value_formula() -> Verdict {
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for (n, expected, tol) in [(1usize, 2.575829, 1e-5), (10, 3.29053, 1e-4)] {
        let got = critical_value(1.0, n, 0.01);
        let line = format!("c(1, {n}, 0.01) = {got:.7} vs {expected} ± {tol:e}");
        if (got - expected).abs() <= tol {
            notes.push(line);
        } else {
            failures.push(format!("{line} (off by {:.2e})", (got - expected).abs()));
        }
    }

    // the same value from the textbook form with an independent quantile
    let normal = statrs::distribution::Normal::standard();
    let textbook = statrs::distribution::ContinuousCDF::inverse_cdf(
        &normal,
        0.5 + 0.5 * 0.99f64.powf(1.0 / 10.0),
    );
    notes.push(format!("independent quantile gives {textbook:.7} for n = 10"));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let sigma = 10f64.powf(rng.gen_range(-6.0..6.0));
        let n = rng.gen_range(1..=5000usize);
        let alpha = rng.gen_range(1e-6..0.5);
        let unit = critical_value(1.0, n, alpha);
        let scaled = critical_value(sigma, n, alpha);
        worst = worst.max((scaled - sigma * unit).abs() / (sigma * unit));
    }
    if worst > 1e-12 {
        failures.push(format!("linearity off by {worst:e}"));
    } else {
        notes.push(format!("linearity within {worst:.1e}"));
    }

    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(format!("{}; passing: {}", failures.join("; "), notes.join("; ")))
    }
}

// 3

fn band_calibration() -> Verdict {
    const GROUPS: usize = 10_000;
    const N: usize = 50;
    const ALPHA: f64 = 0.01;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut flagged_groups = 0;
    let mut residuals = vec![0.0; N];
    for _ in 0..GROUPS {
        let sigma = 10f64.powf(rng.gen_range(-2.0..1.0));
        for r in residuals.iter_mut() {
            *r = sigma * rng.sample::<f64, _>(StandardNormal);
        }
        let c = critical_value(sigma, N, ALPHA);
        if !exceedances(&residuals, c).is_empty() {
            flagged_groups += 1;
        }
    }
    let elapsed = started.elapsed();
    let rate = flagged_groups as f64 / GROUPS as f64;
    ensure((rate - ALPHA).abs() <= 0.005, || {
        format!("{flagged_groups}/{GROUPS} groups flagged ({:.2}%)", 100.0 * rate)
    })?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{flagged_groups}/{GROUPS} groups of n = {N} flagged ({:.2}%, target 1.00 ± 0.50%), {elapsed:.2?}",
        100.0 * rate
    ))
}

// 4

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Least squares through the exact normal equations `XᵀX β = Xᵀy`.
fn exact_least_squares(points: &[(f64, f64)], degree: usize) -> Vec<f64> {
    let m = degree + 1;
    let mut a = vec![vec![BigRational::zero(); m + 1]; m];
    for &(x, y) in points {
        let x = rational(x);
        let y = rational(y);
        let mut powers = vec![BigRational::from_integer(BigInt::from(1))];
        for k in 1..(2 * m - 1) {
            let next = &powers[k - 1] * &x;
            powers.push(next);
        }
        for i in 0..m {
            for j in 0..m {
                a[i][j] += &powers[i + j];
            }
            a[i][m] += &powers[i] * &y;
        }
    }
    for col in 0..m {
        let pivot = (col..m).find(|&r| !a[r][col].is_zero()).expect("non-singular");
        a.swap(col, pivot);
        let pivot_row = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col && !row[col].is_zero() {
                let f = &row[col] / &pivot_row[col];
                for (x, p) in row.iter_mut().zip(&pivot_row).skip(col) {
                    *x -= &f * p;
                }
            }
        }
    }
    (0..m).map(|i| (&a[i][m] / &a[i][i]).to_f64().unwrap()).collect()
}

fn regression_oracle() -> Verdict {
    const INSTANCES: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..INSTANCES {
        let n = rng.gen_range(3..=50usize);
        let lo = rng.gen_range(0.5..1900.0);
        let hi = rng.gen_range(lo + 1.0..=2000.0f64);
        let strikes: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
        let vertex = rng.gen_range(lo..=hi);
        let curvature = rng.gen_range(0.1..10.0) / (hi - lo).powi(2);
        let level = rng.gen_range(0.5..50.0);
        let noise = rng.gen_range(0.001..1.0);
        let points: Vec<(f64, f64)> = strikes
            .iter()
            .map(|&k| {
                let clean = level + curvature * (k - vertex).powi(2);
                (k, clean + noise * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let fit = fit_polynomial(&points, 2).map_err(|e| format!("case {case}: {e}"))?;
        let exact = exact_least_squares(&points, 2);
        for (got, want) in fit.as_slice().iter().zip(&exact) {
            let rel = (got - want).abs() / want.abs();
            worst = worst.max(rel);
            ensure(rel <= 1e-8, || {
                format!("case {case} (n = {n}, strikes {lo:.1}..{hi:.1}): {got} vs {want}, relative error {rel:e}")
            })?;
        }
    }
    Ok(format!("{INSTANCES} instances, worst coefficient relative error {worst:.1e}"))
}

// 5

fn injection_recovery() -> Verdict {
    let config = CleaningConfig::default();
    let mut outliers_total = 0;
    let mut outliers_flagged = 0;
    let mut groups_total = 0;
    let mut groups_with_false_flag = 0;
    for seed in 1..=FIXTURE_COUNT {
        let f = load_standard(seed);
        ensure(
            f.label_ids(InjectedKind::BoundViolation).len() == 5
                && f.label_ids(InjectedKind::Outlier).len() == 3
                && f.label_ids(InjectedKind::Duplicate).len() == 4,
            || format!("fixture {seed} does not carry 5/3/4 injections"),
        )?;
        let out = run_pipeline(&f.quotes, &f.ctx, &config).map_err(|e| e.to_string())?;

        for (stages, stage_name, kind) in [
            (BOUNDS, "stage 1", InjectedKind::BoundViolation),
            (DUPLICATES, "stage 3", InjectedKind::Duplicate),
        ] {
            let got = removed_ids(&out, stages);
            let want = f.label_ids(kind);
            ensure(got == want, || {
                let fp: Vec<_> = got.difference(&want).collect();
                let fn_: Vec<_> = want.difference(&got).collect();
                format!("fixture {seed}, {stage_name}: extra {fp:?}, missed {fn_:?}")
            })?;
        }

        let flagged = removed_ids(&out, OUTLIERS);
        let injected = f.label_ids(InjectedKind::Outlier);
        outliers_total += injected.len();
        outliers_flagged += injected.intersection(&flagged).count();

        let group_of: HashMap<usize, (OptionType, u32)> =
            f.quotes.iter().map(|q| (q.id, (q.option_type, q.maturity_days))).collect();
        let groups: HashSet<_> = group_of.values().copied().collect();
        groups_total += groups.len();
        let false_groups: HashSet<_> = flagged.difference(&injected).map(|id| group_of[id]).collect();
        groups_with_false_flag += false_groups.len();
    }

    let recall = outliers_flagged as f64 / outliers_total as f64;
    let alpha = config.alpha;
    let fp_rate = groups_with_false_flag as f64 / groups_total as f64;
    // α plus three binomial standard errors over the number of groups
    let fp_limit = alpha + 3.0 * (alpha * (1.0 - alpha) / groups_total as f64).sqrt();
    ensure(recall >= 0.95, || {
        format!("{outliers_flagged}/{outliers_total} injected outliers flagged")
    })?;
    ensure(fp_rate <= fp_limit, || {
        format!("{groups_with_false_flag}/{groups_total} groups with a false stage-2 flag (limit {:.2}%)", 100.0 * fp_limit)
    })?;
    Ok(format!(
        "{FIXTURE_COUNT} fixtures: stages 1 and 3 exact, {outliers_flagged}/{outliers_total} outliers flagged, {groups_with_false_flag}/{groups_total} groups with a false stage-2 flag (limit {:.2}%)",
        100.0 * fp_limit
    ))
}

// 6

fn check_reconciled(input: &[OptionQuote], out: &CleaningOutcome) -> Result<(), String> {
    let mut keys = HashSet::new();
    for q in &out.clean {
        ensure(keys.insert(q.contract_key()), || format!("contract of quote {} repeats", q.id))?;
    }
    for t in OptionType::ALL {
        let inputs = input.iter().filter(|q| q.option_type == t).count();
        let outputs = out.clean.iter().filter(|q| q.option_type == t).count();
        let removed = out.removals.iter().filter(|r| r.option_type == t).count();
        ensure(inputs == outputs + removed, || {
            format!("{}: {inputs} in, {outputs} out, {removed} removed", t.as_str())
        })?;
        let c = out.report.counts(t);
        ensure(
            c.input_count == inputs && c.output_count == outputs && c.removed_count == removed,
            || format!("{} report counts disagree with the data", t.as_str()),
        )?;
    }
    let removed: HashSet<usize> = out.removals.iter().map(|r| r.quote_id).collect();
    ensure(removed.len() == out.removals.len(), || "a quote was removed twice".into())?;
    ensure(out.clean.iter().all(|q| !removed.contains(&q.id)), || {
        "a removed quote is in the output".into()
    })
}

/// Small chains with many repeated contracts and arbitrary prices.
fn messy_chain(rng: &mut ChaCha8Rng) -> Vec<OptionQuote> {
    let n = rng.gen_range(1..400);
    let maturities = [7u32, 30, 60, 120];
    (0..n)
        .map(|id| OptionQuote {
            id,
            option_type: if rng.gen_bool(0.5) { OptionType::Call } else { OptionType::Put },
            strike: 80.0 + 2.5 * f64::from(rng.gen_range(0..16u32)),
            maturity_days: maturities[rng.gen_range(0..maturities.len())],
            price: rng.gen_range(0.0..40.0),
            open_interest: rng.gen_range(0..20),
        })
        .collect()
}

fn uniqueness_and_reconciliation() -> Verdict {
    let config = CleaningConfig::default();
    let mut runs = 0;
    for seed in 1..=FIXTURE_COUNT {
        let f = load_standard(seed);
        let out = run_pipeline(&f.quotes, &f.ctx, &config).map_err(|e| e.to_string())?;
        check_reconciled(&f.quotes, &out).map_err(|e| format!("fixture {seed}: {e}"))?;
        runs += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ctx = MarketContext::new(100.0, 0.01).map_err(|e| e.to_string())?;
    for case in 0..500 {
        let quotes = messy_chain(&mut rng);
        let out = run_pipeline(&quotes, &ctx, &config).map_err(|e| e.to_string())?;
        check_reconciled(&quotes, &out).map_err(|e| format!("random chain {case}: {e}"))?;
        runs += 1;
    }
    Ok(format!("{runs} pipeline runs, no repeated contracts, counts reconcile per type"))
}

// 7

fn published_dir() -> PathBuf {
    std::env::var_os("OPTCLEAN_PUBLISHED_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/published"))
}

fn published_datasets(dir: &Path) -> Vec<(PathBuf, PathBuf)> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut found: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .filter_map(|p| {
            let ctx = p.with_extension("context.json");
            ctx.exists().then_some((p, ctx))
        })
        .collect();
    found.sort();
    found
}

/// Stage 1 and 3 removals plus the stage-2 share of the input.
fn recleaning(quotes: &[OptionQuote], ctx: &MarketContext) -> Result<(usize, usize, f64), String> {
    let out = run_pipeline(quotes, ctx, &CleaningConfig::default()).map_err(|e| e.to_string())?;
    let s1 = removed_ids(&out, BOUNDS).len();
    let s3 = removed_ids(&out, DUPLICATES).len();
    let s2 = removed_ids(&out, OUTLIERS).len() as f64 / quotes.len() as f64;
    Ok((s1, s3, s2))
}

fn published_idempotence() -> Verdict {
    let dir = published_dir();
    let datasets = published_datasets(&dir);
    if datasets.is_empty() {
        // the same property on data this pipeline has already cleaned
        let mut worst = (0, 0, 0.0f64);
        for seed in 1..=FIXTURE_COUNT {
            let f = load_standard(seed);
            let once = run_pipeline(&f.quotes, &f.ctx, &CleaningConfig::default())
                .map_err(|e| e.to_string())?;
            let (s1, s3, s2) = recleaning(&once.clean, &f.ctx)?;
            worst = (worst.0.max(s1), worst.1.max(s3), worst.2.max(s2));
        }
        return Err(format!(
            "no published datasets (NAME.csv + NAME.context.json) under {}; \
             on re-cleaned synthetic fixtures: at most {} stage-1 and {} stage-3 removals, \
             largest stage-2 share {:.2}%",
            dir.display(),
            worst.0,
            worst.1,
            100.0 * worst.2
        ));
    }
    let mut lines = Vec::new();
    for (csv, ctx_path) in &datasets {
        let table = ingest::read_quotes(csv, &ReadOptions::default()).map_err(|e| e.to_string())?;
        let ctx = ingest::read_market_context(ctx_path).map_err(|e| e.to_string())?;
        let (s1, s3, s2) = recleaning(&table.quotes, &ctx)?;
        let name = csv.file_stem().unwrap().to_string_lossy().into_owned();
        ensure(s1 == 0 && s3 == 0 && s2 <= 0.02, || {
            format!("{name}: {s1} stage-1, {s3} stage-3 removals, stage-2 share {:.2}%", 100.0 * s2)
        })?;
        lines.push(format!("{name} stage-2 {:.2}%", 100.0 * s2));
    }
    Ok(format!("{} datasets, no stage-1/3 removals; {}", datasets.len(), lines.join(", ")))
}

// 8

fn performance_dataset() -> (MarketContext, Vec<OptionQuote>) {
    let ctx = MarketContext::new(100.0, 0.0015).unwrap();
    let strikes: Vec<f64> = (0..250).map(|i| 80.0 + 0.16 * f64::from(i)).collect();
    let mut specs = Vec::new();
    for m in 0..20u32 {
        let days = 10 * (m + 1);
        let level = 0.5 + 0.05 * f64::from(m);
        for (option_type, vertex) in [(OptionType::Call, 125.0), (OptionType::Put, 75.0)] {
            let c = 0.0125;
            specs.push(SmileSpec {
                option_type,
                maturity_days: days,
                smile: PolyCoeffs(vec![level + c * vertex * vertex, -2.0 * c * vertex, c]),
                strikes: strikes.clone(),
                noise_sigma: 0.05,
                open_interest: (10, 5000),
            });
        }
    }
    let plan = InjectionPlan {
        bound_violations: 40,
        outliers: 40,
        outlier_k: 10.0,
        duplicates: 0,
    };
    let f = build_fixture(&ctx, &specs, &plan, 365.0, 8).expect("feasible layout");
    (ctx, f.quotes)
}

fn performance() -> Verdict {
    let (ctx, quotes) = performance_dataset();
    let config = CleaningConfig::default();
    let maturities: BTreeMap<u32, ()> = quotes.iter().map(|q| (q.maturity_days, ())).collect();
    let mut best = Duration::MAX;
    let mut removed = 0;
    for _ in 0..3 {
        let started = Instant::now();
        let out = run_pipeline(&quotes, &ctx, &config).map_err(|e| e.to_string())?;
        best = best.min(started.elapsed());
        removed = out.removals.len();
    }
    ensure(quotes.len() == 10_000 && maturities.len() == 20, || {
        format!("dataset has {} quotes over {} maturities", quotes.len(), maturities.len())
    })?;
    ensure(best < Duration::from_secs(1), || format!("best of 3 runs took {best:?}"))?;
    Ok(format!(
        "{} quotes over {} maturities cleaned in {best:.2?} (best of 3, {removed} removed)",
        quotes.len(),
        maturities.len()
    ))
}
