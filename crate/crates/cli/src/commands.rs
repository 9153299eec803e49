use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use serde::Serialize;

use rcast_core::dataset::{load_csv, preprocess, Metadata, TimeSeriesFrame};
use rcast_core::ensemble::{
    confidence_bands, fit_predict_ensemble, forecast_rows, write_forecast_csv, EnsembleParams,
};
use rcast_core::evaluation::{
    backtest_report, bench as run_bench, ensemble_size_sweep, grid_search, make_splits,
    write_confusion_csv, write_csv_rows, write_results_csv, SplitPlan,
};
use rcast_core::models::{sample_configs, EsnFamily, EsnForecaster, Forecaster, RunContext};
use rcast_core::panel::ForecastInput;
use rcast_core::{Error, Result};

use crate::config::RunConfig;

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

fn create(path: PathBuf) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    log::info!("writing {}", path.display());
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    Ok(())
}

/// Frame from the ingest artifact if configured, else read and preprocessed
/// from the CSV.
fn load_frame(cfg: &RunConfig) -> Result<TimeSeriesFrame> {
    if let Some(p) = &cfg.data.frame {
        return TimeSeriesFrame::from_json(&fs::read_to_string(p)?);
    }
    Ok(ingest_csv(cfg)?.0)
}

fn ingest_csv(cfg: &RunConfig) -> Result<(TimeSeriesFrame, rcast_core::dataset::PreprocessReport)> {
    let csv = cfg
        .data
        .csv
        .as_ref()
        .ok_or_else(|| Error::Config("no input: set data.csv or pass --data".into()))?;
    let meta = match &cfg.data.metadata {
        Some(p) => Metadata::load(p)?,
        None => Metadata::default(),
    };
    let raw = load_csv(csv, &cfg.data.columns, &meta)?;
    preprocess(&raw, &cfg.preprocess)
}

fn plan(cfg: &RunConfig) -> Result<SplitPlan> {
    let first = cfg
        .splits
        .first_cutoff
        .ok_or_else(|| Error::Config("splits.first_cutoff is required".into()))?;
    let n = cfg
        .splits
        .n_splits
        .ok_or_else(|| Error::Config("splits.n_splits is required".into()))?;
    make_splits(first, n, cfg.horizon)
}

fn ctx(cfg: &RunConfig) -> RunContext {
    RunContext { workers: cfg.workers }
}

fn save_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let (frame, report) = ingest_csv(cfg)?;
    let dir = out_dir(cfg)?;
    fs::write(dir.join("frame.json"), frame.to_json()?)?;
    write_json(dir.join("preprocess_report.json"), &report)?;
    log::info!(
        "{} series over {} days, {} regions dropped",
        frame.n_series(),
        frame.n_dates(),
        report.dropped_regions.len()
    );
    Ok(())
}

/// Day after the last observed target value of any region.
fn default_cutoff(frame: &TimeSeriesFrame) -> Result<NaiveDate> {
    let last = frame
        .regions()
        .iter()
        .filter_map(|r| frame.target_index(r))
        .filter_map(|i| frame.values(i).iter().rposition(|x| !x.is_nan()))
        .max()
        .ok_or_else(|| Error::Data("no observed target values".into()))?;
    Ok(frame.dates()[last] + Duration::days(1))
}

pub fn forecast(cfg: &RunConfig) -> Result<()> {
    let frame = load_frame(cfg)?;
    let cutoff = match cfg.forecast.cutoff {
        Some(c) => c,
        None => default_cutoff(&frame)?,
    };
    let h = cfg.horizon;
    let rows = if cfg.model.family == EsnFamily::NAME {
        let frame = frame.select_feature_group(cfg.model.features);
        let params: EnsembleParams = cfg.ensemble();
        if cfg.forecast.bands {
            let b = confidence_bands(&frame, cutoff, h, &params, &cfg.bands, cfg.workers)?;
            let n = Some(b.forecast.members.len());
            forecast_rows(&b.forecast.regions, cutoff, &b.point, b.bands.as_deref(), n)
        } else {
            let run = fit_predict_ensemble(&params, &frame, cutoff, h, cfg.workers)?;
            forecast_rows(&run.regions, cutoff, &run.median()?, None, Some(run.members.len()))
        }
    } else {
        let model = cfg.registry().get(&cfg.model.family)?.default_model();
        let input = ForecastInput::at_cutoff(&frame, cutoff, h)?;
        let f = model.forecast(&input, &ctx(cfg))?;
        forecast_rows(&f.regions, cutoff, &f.point, None, f.n_members)
    };
    let dir = out_dir(cfg)?;
    save_config(cfg, dir)?;
    write_forecast_csv(create(dir.join("forecast.csv"))?, &rows)
}

pub fn backtest(cfg: &RunConfig) -> Result<()> {
    let frame = load_frame(cfg)?;
    let plan = plan(cfg)?;
    let model = cfg.registry().get(&cfg.model.family)?.default_model();
    let (report, curves) = backtest_report(model.as_ref(), &frame, &plan, &ctx(cfg))?;
    let dir = out_dir(cfg)?;
    save_config(cfg, dir)?;
    write_json(dir.join("report.json"), &report)?;
    write_results_csv(create(dir.join("results.csv"))?, &curves)?;
    write_confusion_csv(create(dir.join("confusion.csv"))?, &report.metrics.confusion)?;
    log::info!("{}: median RMSE {:.4}", report.config_id, report.metrics.median_rmse);
    Ok(())
}

#[derive(Serialize)]
struct ComparisonRow {
    family: String,
    cutoff: NaiveDate,
    config_id: String,
    fallback: bool,
    split_rmse: Option<f64>,
}

pub fn gridsearch(cfg: &RunConfig) -> Result<()> {
    let frame = load_frame(cfg)?;
    let plan = plan(cfg)?;
    let registry = cfg.registry();
    let dir = out_dir(cfg)?;
    save_config(cfg, dir)?;
    let mut comparison = Vec::new();
    for name in &cfg.grid.families {
        let family = registry.get(name)?;
        let models = sample_configs(family.grid_models(&cfg.grid.space), cfg.grid.max_configs, cfg.seed);
        log::info!("{name}: {} configurations x {} splits", models.len(), plan.splits.len());
        let fallback = family.default_model();
        let outcome = grid_search(&models, fallback.as_ref(), &frame, &plan, &ctx(cfg))?;
        let sub = dir.join(name);
        write_json(sub.join("selection.json"), &outcome.report)?;
        write_csv_rows(create(sub.join("leaderboard.csv"))?, &outcome.report.leaderboard)?;
        write_results_csv(create(sub.join("results.csv"))?, &outcome.curves)?;
        if let Some(m) = &outcome.report.metrics {
            write_confusion_csv(create(sub.join("confusion.csv"))?, &m.confusion)?;
        }
        comparison.extend(outcome.report.selections.iter().map(|s| ComparisonRow {
            family: name.clone(),
            cutoff: s.cutoff,
            config_id: s.config_id.clone(),
            fallback: s.fallback,
            split_rmse: s.split_rmse,
        }));
    }
    write_csv_rows(create(dir.join("comparison.csv"))?, &comparison)
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let frame = load_frame(cfg)?;
    let plan = plan(cfg)?;
    let base = cfg.ensemble();
    let features = cfg.model.features;
    let model_for = |n: usize| -> Box<dyn Forecaster> {
        Box::new(EsnForecaster {
            params: EnsembleParams {
                n_members: n,
                ..base.clone()
            },
            features,
        })
    };
    let rows = ensemble_size_sweep(&cfg.sweep.sizes, model_for, &frame, &plan, &ctx(cfg))?;
    for r in &rows {
        log::info!("size {:>4}: median RMSE {:.4} in {:.1}s", r.size, r.median_rmse, r.seconds);
    }
    let dir = out_dir(cfg)?;
    save_config(cfg, dir)?;
    write_csv_rows(create(dir.join("sweep.csv"))?, &rows)
}

pub fn bench(cfg: &RunConfig) -> Result<()> {
    let frame = load_frame(cfg)?;
    let plan = plan(cfg)?;
    let registry = cfg.registry();
    let models: Vec<Box<dyn Forecaster>> = registry
        .names()
        .into_iter()
        .map(|n| registry.get(n).map(|f| f.default_model()))
        .collect::<Result<_>>()?;
    let split = plan.splits.last().expect("plan has splits");
    let rows = run_bench(&models, &frame, split, &ctx(cfg))?;
    let dir = out_dir(cfg)?;
    save_config(cfg, dir)?;
    write_csv_rows(create(dir.join("bench.csv"))?, &rows)
}
