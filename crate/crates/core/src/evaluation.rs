//! Walk-forward backtests, grid search and forecast scoring.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use chrono::{Duration, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesFrame;
use crate::ensemble::median_in_place;
use crate::error::{Error, ErrorKind, Result};
use crate::models::{Forecaster, RunContext};
use crate::panel::{actuals, ForecastInput};
use crate::parallel::par_map;

pub const DELTA_THRESHOLD: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub cutoff: NaiveDate,
    pub horizon: usize,
}

impl Split {
    /// First day after the forecast window.
    pub fn window_end(&self) -> NaiveDate {
        self.cutoff + Duration::days(self.horizon as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub splits: Vec<Split>,
}

impl SplitPlan {
    pub fn new(splits: Vec<Split>) -> Result<Self> {
        if splits.is_empty() {
            return Err(Error::Config("a split plan needs at least one split".into()));
        }
        if splits.windows(2).any(|w| w[0].cutoff >= w[1].cutoff) {
            return Err(Error::Config("split cutoffs must be strictly increasing".into()));
        }
        if splits.iter().any(|s| s.horizon == 0) {
            return Err(Error::Config("split horizon must be >= 1".into()));
        }
        Ok(Self { splits })
    }

    /// Checks that every forecast window lies inside the frame's dates.
    pub fn check_coverage(&self, frame: &TimeSeriesFrame) -> Result<()> {
        let (Some(first), Some(last)) = (frame.dates().first(), frame.dates().last()) else {
            return Err(Error::Data("empty frame".into()));
        };
        for (i, s) in self.splits.iter().enumerate() {
            if s.cutoff <= *first || s.window_end() - Duration::days(1) > *last {
                return Err(Error::Data(format!(
                    "split {} (cutoff {}, {} days) falls outside the data range {first}..={last}",
                    i + 1,
                    s.cutoff,
                    s.horizon
                )));
            }
        }
        Ok(())
    }

    /// Indices of splits whose forecast window ends no later than split
    /// `k`'s cutoff.
    pub fn eligible_before(&self, k: usize) -> Vec<usize> {
        let cutoff = self.splits[k].cutoff;
        (0..k).filter(|&j| self.splits[j].window_end() <= cutoff).collect()
    }
}

/// Monthly cutoffs starting at `first_cutoff`.
pub fn make_splits(first_cutoff: NaiveDate, n_splits: usize, horizon: usize) -> Result<SplitPlan> {
    let splits = (0..n_splits)
        .map(|i| {
            first_cutoff
                .checked_add_months(Months::new(i as u32))
                .map(|cutoff| Split { cutoff, horizon })
                .ok_or_else(|| Error::Config("split date out of range".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    SplitPlan::new(splits)
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(Error::Data(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            actual.len()
        )));
    }
    let ss: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    Some(median_in_place(&mut v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeltaClass {
    Deterioration,
    NoChange,
    Improvement,
}

impl DeltaClass {
    pub const ALL: [DeltaClass; 3] = [DeltaClass::Deterioration, DeltaClass::NoChange, DeltaClass::Improvement];

    fn index(self) -> usize {
        self as usize
    }

    pub fn from_delta(delta: f64) -> Self {
        if delta > DELTA_THRESHOLD {
            DeltaClass::Deterioration
        } else if delta < -DELTA_THRESHOLD {
            DeltaClass::Improvement
        } else {
            DeltaClass::NoChange
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaLabel {
    pub label: DeltaClass,
    pub delta: f64,
}

/// Labels a curve by its endpoint change. Rising prevalence is a
/// deterioration.
pub fn classify_delta(curve: &[f64]) -> DeltaLabel {
    let delta = match (curve.first(), curve.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    DeltaLabel {
        label: DeltaClass::from_delta(delta),
        delta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// Rows are actual classes, columns predicted, in [`DeltaClass::ALL`] order.
    pub counts: [[u64; 3]; 3],
    pub per_class: BTreeMap<DeltaClass, ClassMetrics>,
    pub total_accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion matrix and one-vs-rest metrics. Metrics whose denominator is
/// zero, and all metrics of a class absent from both lists, are `None`.
pub fn confusion_and_metrics(actual: &[DeltaClass], predicted: &[DeltaClass]) -> Result<Confusion> {
    if actual.len() != predicted.len() {
        return Err(Error::Data(format!(
            "{} actual labels vs {} predicted",
            actual.len(),
            predicted.len()
        )));
    }
    let mut counts = [[0u64; 3]; 3];
    for (a, p) in actual.iter().zip(predicted) {
        counts[a.index()][p.index()] += 1;
    }
    let total = actual.len() as u64;
    let mut per_class = BTreeMap::new();
    for c in DeltaClass::ALL {
        let i = c.index();
        let tp = counts[i][i];
        let actual_n: u64 = counts[i].iter().sum();
        let pred_n: u64 = (0..3).map(|r| counts[r][i]).sum();
        let metrics = if actual_n + pred_n == 0 {
            ClassMetrics {
                accuracy: None,
                precision: None,
                recall: None,
            }
        } else {
            let tn = total + tp - actual_n - pred_n;
            ClassMetrics {
                accuracy: ratio(tp + tn, total),
                precision: ratio(tp, pred_n),
                recall: ratio(tp, actual_n),
            }
        };
        per_class.insert(c, metrics);
    }
    let trace: u64 = (0..3).map(|i| counts[i][i]).sum();
    Ok(Confusion {
        counts,
        per_class,
        total_accuracy: ratio(trace, total),
    })
}

pub fn write_confusion_csv<W: Write>(out: W, confusion: &Confusion) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["actual\\predicted", "Deterioration", "NoChange", "Improvement"])?;
    for c in DeltaClass::ALL {
        let row = confusion.counts[c.index()];
        w.write_record([
            format!("{c:?}"),
            row[0].to_string(),
            row[1].to_string(),
            row[2].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One forecast window of one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub config_id: String,
    pub cutoff: NaiveDate,
    pub region: String,
    /// Last observed target value before the cutoff.
    pub origin: f64,
    pub pred: Vec<f64>,
    pub actual: Vec<f64>,
}

impl Curve {
    pub fn rmse(&self) -> f64 {
        rmse(&self.pred, &self.actual).unwrap_or(f64::NAN)
    }

    fn with_origin(&self, v: &[f64]) -> Vec<f64> {
        std::iter::once(self.origin).chain(v.iter().copied()).collect()
    }

    pub fn actual_label(&self) -> DeltaLabel {
        classify_delta(&self.with_origin(&self.actual))
    }

    pub fn predicted_label(&self) -> DeltaLabel {
        classify_delta(&self.with_origin(&self.pred))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBin {
    /// `None` for the open outer bins.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub count: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_curves: usize,
    /// Median over curves of the per-curve RMSE.
    pub median_rmse: f64,
    pub rmse_by_step: Vec<f64>,
    pub rmse_by_delta_bin: Vec<DeltaBin>,
    pub rmse_by_region: BTreeMap<String, f64>,
    pub confusion: Confusion,
}

/// Edges of the Δ bins: width 0.04 over `[-0.2, 0.2]`, open beyond.
pub fn delta_bin_edges() -> Vec<f64> {
    (0..=10).map(|i| -0.2 + 0.04 * i as f64).collect()
}

pub fn aggregate(curves: &[Curve]) -> Result<MetricsReport> {
    if curves.is_empty() {
        return Err(Error::Data("no evaluated curves to aggregate".into()));
    }
    let horizon = curves.iter().map(|c| c.pred.len()).max().unwrap_or(0);
    let per_curve: Vec<f64> = curves.iter().map(Curve::rmse).collect();
    if per_curve.iter().any(|r| !r.is_finite()) {
        return Err(Error::Data("curve with mismatched or empty forecast".into()));
    }

    let rmse_by_step = (0..horizon)
        .map(|t| {
            let errs: Vec<f64> = curves
                .iter()
                .filter(|c| t < c.pred.len())
                .map(|c| (c.pred[t] - c.actual[t]).abs())
                .collect();
            median(&errs).unwrap_or(f64::NAN)
        })
        .collect();

    let edges = delta_bin_edges();
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); edges.len() + 1];
    for (c, r) in curves.iter().zip(&per_curve) {
        let d = c.actual_label().delta;
        bins[edges.partition_point(|e| *e <= d)].push(*r);
    }
    let rmse_by_delta_bin = bins
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(i, b)| DeltaBin {
            lower: i.checked_sub(1).map(|j| edges[j]),
            upper: edges.get(i).copied(),
            count: b.len(),
            rmse: median(b).expect("non-empty bin"),
        })
        .collect();

    let mut regions: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (c, r) in curves.iter().zip(&per_curve) {
        regions.entry(c.region.clone()).or_default().push(*r);
    }
    let rmse_by_region = regions
        .into_iter()
        .map(|(k, v)| (k, median(&v).expect("non-empty region")))
        .collect();

    let actual: Vec<DeltaClass> = curves.iter().map(|c| c.actual_label().label).collect();
    let predicted: Vec<DeltaClass> = curves.iter().map(|c| c.predicted_label().label).collect();
    Ok(MetricsReport {
        n_curves: curves.len(),
        median_rmse: median(&per_curve).expect("non-empty"),
        rmse_by_step,
        rmse_by_delta_bin,
        rmse_by_region,
        confusion: confusion_and_metrics(&actual, &predicted)?,
    })
}

/// Forecasts one split and pairs each region's forecast with its actuals.
/// Regions without complete actuals in the window are skipped.
pub fn evaluate_split(model: &dyn Forecaster, frame: &TimeSeriesFrame, split: &Split, ctx: &RunContext) -> Result<Vec<Curve>> {
    let input = ForecastInput::at_cutoff(frame, split.cutoff, split.horizon)?;
    input.assert_no_leakage();
    let out = model.forecast(&input, ctx)?;
    let mut curves = Vec::new();
    for (r, region) in out.regions.iter().enumerate() {
        let Some(actual) = actuals(frame, region, split.cutoff, split.horizon) else {
            log::warn!("{region}: incomplete actuals after {}, split skipped", split.cutoff);
            continue;
        };
        let idx = input.history.target_index(region).expect("target present");
        let origin = *input.history.values(idx).last().expect("non-empty history");
        curves.push(Curve {
            config_id: model.config_id(),
            cutoff: split.cutoff,
            region: region.clone(),
            origin,
            pred: out.point.row(r).iter().copied().collect(),
            actual,
        });
    }
    Ok(curves)
}

/// Evaluates one configuration on every split.
pub fn run_backtest(model: &dyn Forecaster, frame: &TimeSeriesFrame, plan: &SplitPlan, ctx: &RunContext) -> Result<Vec<Curve>> {
    plan.check_coverage(frame)?;
    let per_split = par_map(ctx.workers, plan.splits.len(), |i| evaluate_split(model, frame, &plan.splits[i], ctx));
    let mut curves = Vec::new();
    for c in per_split {
        curves.extend(c?);
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config_id: String,
    pub plan: SplitPlan,
    pub metrics: MetricsReport,
}

pub fn backtest_report(model: &dyn Forecaster, frame: &TimeSeriesFrame, plan: &SplitPlan, ctx: &RunContext) -> Result<(BacktestReport, Vec<Curve>)> {
    let curves = run_backtest(model, frame, plan, ctx)?;
    let report = BacktestReport {
        config_id: model.config_id(),
        plan: plan.clone(),
        metrics: aggregate(&curves)?,
    };
    Ok((report, curves))
}

/// Outcome of one (configuration, split) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub curves: Vec<Curve>,
    /// Median over regions of curve RMSE; `None` if the model failed
    /// numerically or no region could be scored.
    pub score: Option<f64>,
}

fn run_cell(model: &dyn Forecaster, frame: &TimeSeriesFrame, split: &Split, ctx: &RunContext) -> Result<Cell> {
    match evaluate_split(model, frame, split, ctx) {
        Ok(curves) => {
            let r: Vec<f64> = curves.iter().map(Curve::rmse).collect();
            Ok(Cell {
                score: median(&r),
                curves,
            })
        }
        Err(e) if e.kind() == ErrorKind::Numerical => {
            log::warn!("{} failed at {}: {e}", model.config_id(), split.cutoff);
            Ok(Cell {
                curves: Vec::new(),
                score: None,
            })
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub cutoff: NaiveDate,
    pub config_id: String,
    /// True when no earlier split was eligible and the default was used.
    pub fallback: bool,
    /// Median RMSE of the chosen configuration over the eligible splits.
    pub selection_rmse: Option<f64>,
    /// Score of the chosen configuration on this split.
    pub split_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub config_id: String,
    pub median_rmse: Option<f64>,
    pub splits_scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub plan: SplitPlan,
    pub n_configs: usize,
    pub selections: Vec<Selection>,
    pub leaderboard: Vec<LeaderboardRow>,
    /// Scores of the selected configurations on their splits.
    pub metrics: Option<MetricsReport>,
}

/// Result of a grid search: the report plus every evaluated curve.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub report: GridReport,
    pub curves: Vec<Curve>,
}

/// Median of `scores`, counting failed cells as worst.
fn selection_score(scores: &[Option<f64>]) -> f64 {
    let v: Vec<f64> = scores.iter().map(|s| s.unwrap_or(f64::INFINITY)).collect();
    median(&v).unwrap_or(f64::INFINITY)
}

/// For split `k`, picks the configuration with the lowest median score over
/// the eligible earlier splits; ties go to the earliest configuration.
/// Returns `None` when no split is eligible.
pub fn select_config(scores: &[Vec<Option<f64>>], eligible: &[usize]) -> Option<(usize, f64)> {
    if eligible.is_empty() {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in scores.iter().enumerate() {
        let s = selection_score(&eligible.iter().map(|&j| row[j]).collect::<Vec<_>>());
        if best.map_or(true, |(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    best
}

/// Evaluates every configuration on every split, then selects a
/// configuration for each split from the splits that ended before it.
pub fn grid_search(
    models: &[Box<dyn Forecaster>],
    fallback: &dyn Forecaster,
    frame: &TimeSeriesFrame,
    plan: &SplitPlan,
    ctx: &RunContext,
) -> Result<GridOutcome> {
    if models.is_empty() {
        return Err(Error::Config("empty configuration grid".into()));
    }
    plan.check_coverage(frame)?;
    let n_splits = plan.splits.len();
    let fallback_idx = models.iter().position(|m| m.config_id() == fallback.config_id());
    let extra = usize::from(fallback_idx.is_none());
    let n_cells = (models.len() + extra) * n_splits;
    let cells = par_map(ctx.workers, n_cells, |c| {
        let (m, s) = (c / n_splits, c % n_splits);
        let model: &dyn Forecaster = if m < models.len() { models[m].as_ref() } else { fallback };
        run_cell(model, frame, &plan.splits[s], ctx)
    });
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let cell = |m: usize, s: usize| &cells[m * n_splits + s];
    let scores: Vec<Vec<Option<f64>>> = (0..models.len())
        .map(|m| (0..n_splits).map(|s| cell(m, s).score).collect())
        .collect();
    let fallback_row = fallback_idx.unwrap_or(models.len());

    let mut selections = Vec::new();
    let mut chosen_curves = Vec::new();
    for (k, split) in plan.splits.iter().enumerate() {
        let (row, fb, sel_score) = match select_config(&scores, &plan.eligible_before(k)) {
            Some((i, s)) => (i, false, s.is_finite().then_some(s)),
            None => (fallback_row, true, None),
        };
        let c = cell(row, k);
        chosen_curves.extend(c.curves.iter().cloned());
        selections.push(Selection {
            cutoff: split.cutoff,
            config_id: if row < models.len() { models[row].config_id() } else { fallback.config_id() },
            fallback: fb,
            selection_rmse: sel_score,
            split_rmse: c.score,
        });
    }

    let mut leaderboard: Vec<LeaderboardRow> = models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let s = selection_score(&scores[i]);
            LeaderboardRow {
                rank: 0,
                config_id: m.config_id(),
                median_rmse: s.is_finite().then_some(s),
                splits_scored: scores[i].iter().flatten().count(),
            }
        })
        .collect();
    // Stable sort keeps grid order among ties.
    leaderboard.sort_by(|a, b| {
        a.median_rmse
            .unwrap_or(f64::INFINITY)
            .total_cmp(&b.median_rmse.unwrap_or(f64::INFINITY))
    });
    for (i, row) in leaderboard.iter_mut().enumerate() {
        row.rank = i + 1;
    }

    let metrics = if chosen_curves.is_empty() { None } else { Some(aggregate(&chosen_curves)?) };
    Ok(GridOutcome {
        report: GridReport {
            plan: plan.clone(),
            n_configs: models.len(),
            selections,
            leaderboard,
            metrics,
        },
        curves: cells.into_iter().flat_map(|c| c.curves).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub median_rmse: f64,
    pub n_curves: usize,
    pub seconds: f64,
}

/// Runs the full backtest once per ensemble size. `model_for` builds the
/// configuration for a given number of members.
pub fn ensemble_size_sweep<F>(sizes: &[usize], model_for: F, frame: &TimeSeriesFrame, plan: &SplitPlan, ctx: &RunContext) -> Result<Vec<SweepRow>>
where
    F: Fn(usize) -> Box<dyn Forecaster>,
{
    let mut rows = Vec::new();
    for &size in sizes {
        if size == 0 {
            return Err(Error::Config("ensemble sizes must be >= 1".into()));
        }
        let model = model_for(size);
        let t0 = Instant::now();
        let curves = run_backtest(model.as_ref(), frame, plan, ctx)?;
        let seconds = t0.elapsed().as_secs_f64();
        let report = aggregate(&curves)?;
        rows.push(SweepRow {
            size,
            median_rmse: report.median_rmse,
            n_curves: report.n_curves,
            seconds,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub family: String,
    pub config_id: String,
    pub cutoff: NaiveDate,
    pub seconds: f64,
}

/// Wall-clock time of a single fit and forecast per model.
pub fn bench(models: &[Box<dyn Forecaster>], frame: &TimeSeriesFrame, split: &Split, ctx: &RunContext) -> Result<Vec<BenchRow>> {
    let input = ForecastInput::at_cutoff(frame, split.cutoff, split.horizon)?;
    let mut rows = Vec::new();
    for m in models {
        let t0 = Instant::now();
        m.forecast(&input, ctx)?;
        rows.push(BenchRow {
            family: m.family().to_string(),
            config_id: m.config_id(),
            cutoff: split.cutoff,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct ResultRow<'a> {
    config_id: &'a str,
    split_cutoff: NaiveDate,
    region: &'a str,
    step: usize,
    pred: f64,
    actual: f64,
}

/// Writes `config_id,split_cutoff,region,step,pred,actual`; steps count
/// from 1.
pub fn write_results_csv<W: Write>(out: W, curves: &[Curve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in curves {
        for (t, (p, a)) in c.pred.iter().zip(&c.actual).enumerate() {
            w.serialize(ResultRow {
                config_id: &c.config_id,
                split_cutoff: c.cutoff,
                region: &c.region,
                step: t + 1,
                pred: *p,
                actual: *a,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
