//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rcast_core::arima::{fit_arima, forecast_arima, ArimaOrder};
use rcast_core::dataset::{preprocess, PreprocessConfig, Role, TimeSeriesFrame};
use rcast_core::ensemble::{confidence_bands, standard_error, BandConfig, EnsembleParams, ForecastBand};
use rcast_core::evaluation::{
    backtest_report, classify_delta, confusion_and_metrics, ensemble_size_sweep, grid_search,
    make_splits, run_backtest, DeltaClass, SplitPlan,
};
use rcast_core::models::{
    ArimaFamily, EsnFamily, EsnForecaster, Forecaster, GridSpec, ModelFamily, ModelForecast, RunContext,
};
use rcast_core::panel::ForecastInput;
use rcast_core::reservoir::{build_reservoir, fit_readout, EsnParams};
use rcast_core::synthetic::{SineFixture, EXO};
use rcast_core::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn ctx() -> RunContext {
    RunContext { workers: workers() }
}

/// Dominant eigenvalue modulus from a dense real Schur form.
fn dense_radius(m: DMatrix<f64>) -> f64 {
    let schur = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 1_000_000).expect("Schur converges");
    schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn c1_ridge_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for k in 0..50 {
        let d = rng.gen_range(1..=8);
        let p = 2 * rng.gen_range(1..=100);
        let t = p + rng.gen_range(20..200);
        let beta = [0.0, 0.1, 10.0][k % 3];
        let x = DMatrix::from_fn(p, t, |_, _| normal.sample(&mut rng));
        let y = DMatrix::from_fn(d, t, |_, _| normal.sample(&mut rng));
        let w = fit_readout(&x, &y, beta).unwrap().w_out;
        // W = Y Xᵀ (X Xᵀ + βI)⁻¹ via a full-pivot LU solve of the transpose.
        let a = &x * x.transpose() + DMatrix::identity(p, p) * beta;
        let oracle = a.full_piv_lu().solve(&(&x * y.transpose())).unwrap().transpose();
        worst = worst.max((&w - &oracle).norm() / oracle.norm());
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(worst <= 1e-8 && secs < 5.0, format!("max rel Frobenius error {worst:.2e} (<= 1e-8), {secs:.2}s (< 5s)"))
}

fn c2_spectral_radius() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for &n in &[50, 500] {
        for &rho in &[0.3, 0.9, 2.1] {
            let params = EsnParams {
                n_nodes: n,
                spectral_radius: rho,
                seed: 42,
                ..EsnParams::default()
            };
            let res = build_reservoir(&params, 1, 1).unwrap();
            let measured = dense_radius(res.adjacency.to_dense());
            worst = worst.max((measured - rho).abs() / rho);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(worst <= 1e-6 && secs < 10.0, format!("max |rho - target|/target {worst:.2e} (<= 1e-6), {secs:.2}s (< 10s)"))
}

/// The three-year fixture after default preprocessing, with the last 60 days
/// held out.
fn skill_fixture() -> (TimeSeriesFrame, SplitPlan, f64) {
    let fx = SineFixture::default();
    let (frame, _) = preprocess(&fx.frame().unwrap(), &PreprocessConfig::default()).unwrap();
    let cutoff = frame.dates()[frame.n_dates() - 60];
    (frame, make_splits(cutoff, 1, 60).unwrap(), fx.amplitude)
}

fn backtest_rmse(model: &dyn Forecaster, frame: &TimeSeriesFrame, plan: &SplitPlan) -> Result<f64> {
    let curves = run_backtest(model, frame, plan, &ctx())?;
    Ok(curves[0].rmse())
}

fn default_esn() -> EsnForecaster {
    EsnForecaster {
        params: EnsembleParams::default(),
        features: EsnFamily::default().features,
    }
}

fn c3_closed_loop_skill(esn_rmse: &Mutex<Option<f64>>) -> Outcome {
    let (frame, plan, amplitude) = skill_fixture();
    let t0 = Instant::now();
    let esn = backtest_rmse(&default_esn(), &frame, &plan).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    *esn_rmse.lock().unwrap() = Some(esn);

    let arima = ArimaFamily::default();
    let mut best: Option<(String, f64)> = None;
    for m in arima.grid_models(&GridSpec::default()) {
        if let Ok(r) = backtest_rmse(m.as_ref(), &frame, &plan) {
            if best.as_ref().map_or(true, |(_, b)| r < *b) {
                best = Some((m.config_id(), r));
            }
        }
    }
    let (best_id, best_rmse) = best.expect("some ARIMA order fits");

    // Not a criterion: the same ensemble without the calendar input.
    let no_calendar = EsnForecaster {
        params: EnsembleParams {
            day_of_year: false,
            ..EnsembleParams::default()
        },
        ..default_esn()
    };
    if let Ok(r) = backtest_rmse(&no_calendar, &frame, &plan) {
        println!("  info: ensemble without day-of-year input RMSE {r:.4}");
    }

    let limit = 0.1 * amplitude;
    outcome(
        esn <= limit && esn < best_rmse && secs < 120.0,
        format!(
            "ensemble RMSE {esn:.4} (<= {limit:.3}), best ARIMA {best_id} RMSE {best_rmse:.4} (must be beaten), ensemble {secs:.1}s (< 120s)"
        ),
    )
}

fn c4_exogenous_matters(esn_rmse: &Mutex<Option<f64>>) -> Outcome {
    let (frame, plan, _) = skill_fixture();
    let with = match *esn_rmse.lock().unwrap() {
        Some(r) => r,
        None => backtest_rmse(&default_esn(), &frame, &plan).unwrap(),
    };
    let without_exo = frame.filter_series(|k, _| k.feature != EXO);
    let without = backtest_rmse(&default_esn(), &without_exo, &plan).unwrap();
    let rel = without / with - 1.0;
    outcome(rel >= 0.2, format!("RMSE {with:.4} with exogenous, {without:.4} without, +{:.0}% (>= 20%)", 100.0 * rel))
}

/// Wraps a model and records every input that breaks the cutoff contract.
struct LeakCheck {
    inner: Box<dyn Forecaster>,
    violations: &'static Mutex<Vec<String>>,
    calls: &'static Mutex<usize>,
}

impl Forecaster for LeakCheck {
    fn family(&self) -> &'static str {
        self.inner.family()
    }

    fn config_id(&self) -> String {
        self.inner.config_id()
    }

    fn forecast(&self, input: &ForecastInput, ctx: &RunContext) -> Result<ModelForecast> {
        *self.calls.lock().unwrap() += 1;
        let mut v = self.violations.lock().unwrap();
        if let Some(last) = input.history.dates().last() {
            if *last >= input.cutoff {
                v.push(format!("{}: training date {last} >= cutoff {}", self.config_id(), input.cutoff));
            }
        }
        if input.known_future.dates().iter().any(|d| *d < input.cutoff) {
            v.push(format!("{}: known-future date before {}", self.config_id(), input.cutoff));
        }
        let kf = &input.known_future;
        if (0..kf.n_series()).any(|i| kf.role(i) != Role::ExogenousKnownFuture) {
            v.push(format!("{}: non-exogenous series after {}", self.config_id(), input.cutoff));
        }
        drop(v);
        self.inner.forecast(input, ctx)
    }
}

fn leak_models(violations: &'static Mutex<Vec<String>>, calls: &'static Mutex<usize>) -> Vec<Box<dyn Forecaster>> {
    let esn = EsnFamily {
        base: EnsembleParams {
            n_members: 3,
            min_train_days: 300,
            member: EsnParams {
                n_nodes: 40,
                ..EsnParams::default()
            },
            ..EnsembleParams::default()
        },
        ..EsnFamily::default()
    };
    let arima = ArimaFamily {
        min_train_days: 300,
        ..ArimaFamily::default()
    };
    let mut inner: Vec<Box<dyn Forecaster>> = vec![
        Box::new(arima.model(ArimaOrder::new(1, 0, 0))),
        Box::new(arima.model(ArimaOrder::new(1, 1, 1))),
        Box::new(arima.model(ArimaOrder::new(2, 1, 0))),
    ];
    for rho in [0.5, 0.9] {
        inner.push(Box::new(esn.model(
            EsnParams {
                spectral_radius: rho,
                ..esn.base.member.clone()
            },
            esn.features,
        )));
    }
    inner
        .into_iter()
        .map(|m| Box::new(LeakCheck { inner: m, violations, calls }) as Box<dyn Forecaster>)
        .collect()
}

/// Frame with every value on or after `from` shifted and scaled.
fn perturb_after(frame: &TimeSeriesFrame, from: NaiveDate) -> TimeSeriesFrame {
    let start = frame.date_index(from).unwrap();
    let mut out = frame.clone();
    for i in 0..frame.n_series() {
        let mut v = frame.values(i).to_vec();
        for x in &mut v[start..] {
            *x = 0.9 - 0.5 * *x;
        }
        out.set_series(i, v).unwrap();
    }
    out
}

fn c5_no_leakage() -> Outcome {
    static VIOLATIONS: Mutex<Vec<String>> = Mutex::new(Vec::new());
    static CALLS: Mutex<usize> = Mutex::new(0);
    let fx = SineFixture {
        days: 560,
        regions: vec!["north".into(), "south".into()],
        ..SineFixture::default()
    };
    let (frame, _) = preprocess(&fx.frame().unwrap(), &PreprocessConfig::default()).unwrap();
    let plan = make_splits("2021-01-10".parse().unwrap(), 5, 30).unwrap();
    let models = leak_models(&VIOLATIONS, &CALLS);

    for m in &models {
        backtest_report(m.as_ref(), &frame, &plan, &ctx()).unwrap();
    }
    let base = grid_search(&models, models[1].as_ref(), &frame, &plan, &ctx()).unwrap();
    let mut changed = Vec::new();
    for (k, split) in plan.splits.iter().enumerate() {
        let perturbed = perturb_after(&frame, split.cutoff);
        let run = grid_search(&models, models[1].as_ref(), &perturbed, &plan, &ctx()).unwrap();
        let (a, b) = (&base.report.selections[k], &run.report.selections[k]);
        if (&a.config_id, a.fallback, a.selection_rmse) != (&b.config_id, b.fallback, b.selection_rmse) {
            changed.push(split.cutoff.to_string());
        }
    }
    let v = VIOLATIONS.lock().unwrap();
    let calls = *CALLS.lock().unwrap();
    let non_fallback = base.report.selections.iter().filter(|s| !s.fallback).count();
    outcome(
        v.is_empty() && changed.is_empty() && calls > 0,
        format!(
            "{calls} model calls, {} cutoff violations, selection changed under perturbation at {} of {} splits ({non_fallback} non-fallback)",
            v.len(),
            changed.len(),
            plan.splits.len()
        ),
    )
}

fn c6_standard_error() -> Outcome {
    let alt = standard_error(&[1.0, -1.0, 1.0, -1.0]).unwrap();
    let zero = standard_error(&[0.0; 4]).unwrap();
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let point: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
        let se = rng.gen_range(0.0..0.1);
        let b = ForecastBand::new("r".into(), point, se, None, 20);
        for (lo, hi) in b.lower.iter().zip(&b.upper) {
            worst = worst.max(((hi - lo) - 4.0 * se).abs());
        }
    }
    // Bands from a real ensemble run.
    let fx = SineFixture {
        days: 560,
        ..SineFixture::default()
    };
    let (frame, _) = preprocess(&fx.frame().unwrap(), &PreprocessConfig::default()).unwrap();
    let params = EnsembleParams {
        n_members: 3,
        min_train_days: 300,
        member: EsnParams {
            n_nodes: 40,
            ..EsnParams::default()
        },
        ..EnsembleParams::default()
    };
    let cfg = BandConfig {
        n_splits: 4,
        ..BandConfig::default()
    };
    let banded = confidence_bands(&frame, frame.dates()[500], 30, &params, &cfg, workers()).unwrap();
    let bands = banded.bands.expect("bands computed");
    for b in &bands {
        for (lo, hi) in b.lower.iter().zip(&b.upper) {
            worst = worst.max(((hi - lo) - 4.0 * b.se).abs());
        }
    }
    outcome(
        alt == 0.5 && zero == 0.0 && worst <= 1e-12,
        format!("SE[1,-1,1,-1] = {alt}, SE[0,0,0,0] = {zero}, max |width - 4 SE| {worst:.1e}"),
    )
}

fn brute_label(curve: &[f64]) -> usize {
    let delta = curve[curve.len() - 1] - curve[0];
    if delta > 0.04 {
        0
    } else if delta < -0.04 {
        2
    } else {
        1
    }
}

fn c7_classification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let curve = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let n = rng.gen_range(1..=61);
        let mut x = rng.gen_range(0.0..1.0);
        (0..n)
            .map(|_| {
                x += rng.gen_range(-0.01..0.01);
                x
            })
            .collect()
    };
    let mut actual = Vec::new();
    let mut predicted = Vec::new();
    let mut brute = [[0u64; 3]; 3];
    let mut label_mismatch = 0;
    for _ in 0..1000 {
        let (a, p) = (curve(&mut rng), curve(&mut rng));
        let (la, lp) = (classify_delta(&a).label, classify_delta(&p).label);
        let (ba, bp) = (brute_label(&a), brute_label(&p));
        if DeltaClass::ALL[ba] != la || DeltaClass::ALL[bp] != lp {
            label_mismatch += 1;
        }
        brute[ba][bp] += 1;
        actual.push(la);
        predicted.push(lp);
    }
    let conf = confusion_and_metrics(&actual, &predicted).unwrap();
    let mut metric_mismatch = 0;
    let total = 1000.0;
    for (i, c) in DeltaClass::ALL.iter().enumerate() {
        let tp = brute[i][i] as f64;
        let row: f64 = brute[i].iter().sum::<u64>() as f64;
        let col: f64 = (0..3).map(|r| brute[r][i]).sum::<u64>() as f64;
        let mut tn = 0.0;
        for r in 0..3 {
            for q in 0..3 {
                if r != i && q != i {
                    tn += brute[r][q] as f64;
                }
            }
        }
        let m = conf.per_class[c];
        let expect = (
            Some((tp + tn) / total),
            (col > 0.0).then(|| tp / col),
            (row > 0.0).then(|| tp / row),
        );
        if (m.accuracy, m.precision, m.recall) != expect {
            metric_mismatch += 1;
        }
    }
    let trace = (0..3).map(|i| brute[i][i]).sum::<u64>() as f64;
    let boundaries = [
        (0.04, DeltaClass::NoChange),
        (0.0400001, DeltaClass::Deterioration),
        (-0.04, DeltaClass::NoChange),
        (-0.0400001, DeltaClass::Improvement),
    ]
    .iter()
    .all(|&(d, want)| classify_delta(&[0.0, d]).label == want);
    let pass = label_mismatch == 0
        && conf.counts == brute
        && metric_mismatch == 0
        && conf.total_accuracy == Some(trace / total)
        && boundaries;
    outcome(
        pass,
        format!(
            "{label_mismatch} label mismatches, counts equal: {}, {metric_mismatch} metric mismatches, boundaries ok: {boundaries}",
            conf.counts == brute
        ),
    )
}

fn c8_arima_recovery() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut x = vec![0.0; 2000];
    for t in 1..x.len() {
        x[t] = 0.8 * x[t - 1] + noise.sample(&mut rng);
    }
    let phi = fit_arima(&x, ArimaOrder::new(1, 0, 0)).unwrap().ar[0];

    let drift = 0.5;
    let mut w = vec![0.0; 2000];
    for t in 1..w.len() {
        w[t] = w[t - 1] + drift + noise.sample(&mut rng);
    }
    let model = fit_arima(&w, ArimaOrder::new(1, 1, 1)).unwrap();
    let h = 200;
    let f = forecast_arima(&model, &w, h).unwrap();
    let est = (f[h - 1] - f[0]) / (h - 1) as f64;
    let rel = (est - drift).abs() / drift;
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        (0.7..=0.9).contains(&phi) && rel <= 0.1 && secs < 5.0,
        format!("phi_hat {phi:.4} (in [0.7, 0.9]), drift {est:.4} vs {drift} ({:.1}% <= 10%), {secs:.2}s (< 5s)", 100.0 * rel),
    )
}

fn c9_determinism() -> Outcome {
    let fx = SineFixture {
        days: 560,
        regions: vec!["north".into(), "south".into()],
        ..SineFixture::default()
    };
    let (frame, _) = preprocess(&fx.frame().unwrap(), &PreprocessConfig::default()).unwrap();
    let plan = make_splits("2021-01-10".parse().unwrap(), 3, 30).unwrap();
    let model = EsnForecaster {
        params: EnsembleParams {
            n_members: 8,
            base_seed: 99,
            min_train_days: 300,
            member: EsnParams {
                n_nodes: 60,
                ..EsnParams::default()
            },
            ..EnsembleParams::default()
        },
        ..default_esn()
    };
    let report = |workers: usize| {
        let (r, _) = backtest_report(&model, &frame, &plan, &RunContext { workers }).unwrap();
        serde_json::to_string_pretty(&r).unwrap()
    };
    let (a, b, c) = (report(1), report(8), report(1));
    outcome(a == b && a == c, format!("{} report bytes; workers 1 vs 8 identical: {}, rerun identical: {}", a.len(), a == b, a == c))
}

fn c10_sweep() -> Outcome {
    let (frame, plan, _) = skill_fixture();
    let sizes = [1, 10, 20, 30, 100];
    let rows = ensemble_size_sweep(
        &sizes,
        |n| {
            Box::new(EsnForecaster {
                params: EnsembleParams {
                    n_members: n,
                    ..EnsembleParams::default()
                },
                ..default_esn()
            })
        },
        &frame,
        &plan,
        &ctx(),
    )
    .unwrap();
    println!("  {:>5}  {:>10}  {:>9}", "size", "RMSE", "seconds");
    for r in &rows {
        println!("  {:>5}  {:>10.4}  {:>9.2}", r.size, r.median_rmse, r.seconds);
    }
    let ok = rows.len() == sizes.len() && rows.iter().all(|r| r.median_rmse.is_finite());
    outcome(ok, format!("{} sizes run end to end", rows.len()))
}

fn main() {
    let esn_rmse = Mutex::new(None);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("ridge readout matches normal-equations oracle", Box::new(c1_ridge_oracle)),
        ("reservoir spectral radius matches dense oracle", Box::new(c2_spectral_radius)),
        ("closed-loop skill on the synthetic fixture", Box::new(|| c3_closed_loop_skill(&esn_rmse))),
        ("withholding the exogenous channel raises RMSE", Box::new(|| c4_exogenous_matters(&esn_rmse))),
        ("no leakage across cutoffs", Box::new(c5_no_leakage)),
        ("standard error and band width", Box::new(c6_standard_error)),
        ("classification matches brute-force recount", Box::new(c7_classification)),
        ("ARIMA parameter and drift recovery", Box::new(c8_arima_recovery)),
        ("deterministic reports across worker counts", Box::new(c9_determinism)),
        ("ensemble size sweep", Box::new(c10_sweep)),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {:>2} {tag}: {name}: {} [{:.1}s]",
            i + 1,
            result.detail,
            Duration::as_secs_f64(&t0.elapsed())
        );
        if !result.pass {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
