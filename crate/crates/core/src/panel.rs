//! Cutting a frame into leakage-free model inputs.

use chrono::{Duration, NaiveDate};
use nalgebra::DMatrix;

use crate::dataset::features::day_of_year;
use crate::dataset::{Role, SeriesKey, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::reservoir::PanelSeries;

/// Data visible to a model at a cutoff: the history strictly before the
/// cutoff and the known-future channels on the forecast days.
#[derive(Debug, Clone)]
pub struct ForecastInput {
    pub cutoff: NaiveDate,
    pub horizon: usize,
    pub history: TimeSeriesFrame,
    pub known_future: TimeSeriesFrame,
}

impl ForecastInput {
    /// Splits `frame` at `cutoff`. The cutoff may be at most one day past the
    /// last date of the frame; known-future days beyond the frame are
    /// reported as missing.
    pub fn at_cutoff(frame: &TimeSeriesFrame, cutoff: NaiveDate, horizon: usize) -> Result<Self> {
        let first = *frame
            .dates()
            .first()
            .ok_or_else(|| Error::Data("empty frame".into()))?;
        let cut = (cutoff - first).num_days();
        if cut <= 0 || cut as usize > frame.n_dates() {
            return Err(Error::Data(format!(
                "cutoff {cutoff} outside the data range {first}..={}",
                frame.dates()[frame.n_dates() - 1]
            )));
        }
        let cut = cut as usize;
        let history = frame.slice_dates(0, cut);
        let future = frame
            .slice_dates(cut, cut + horizon)
            .filter_series(|_, m| m.role == Role::ExogenousKnownFuture);
        let input = Self {
            cutoff,
            horizon,
            history,
            known_future: future,
        };
        input.assert_no_leakage();
        Ok(input)
    }

    /// Structural guarantee that training data ends before the cutoff and
    /// the forecast window starts at it.
    pub fn assert_no_leakage(&self) {
        if let Some(last) = self.history.dates().last() {
            assert!(*last < self.cutoff, "training date {last} not before cutoff {}", self.cutoff);
        }
        if let Some(first) = self.known_future.dates().first() {
            assert!(*first >= self.cutoff, "forecast date {first} before cutoff {}", self.cutoff);
        }
    }

    pub fn forecast_dates(&self) -> Vec<NaiveDate> {
        (0..self.horizon)
            .map(|h| self.cutoff + Duration::days(h as i64))
            .collect()
    }
}

/// Which frame series feed which model rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelLayout {
    pub endo_keys: Vec<SeriesKey>,
    pub exo_keys: Vec<SeriesKey>,
    /// `(region, endogenous row)` of each target channel.
    pub targets: Vec<(String, usize)>,
}

impl PanelLayout {
    pub fn from_frame(frame: &TimeSeriesFrame) -> Self {
        let mut endo_keys = Vec::new();
        let mut exo_keys = Vec::new();
        let mut targets = Vec::new();
        for (i, key) in frame.keys().iter().enumerate() {
            match frame.role(i) {
                Role::ExogenousKnownFuture => exo_keys.push(key.clone()),
                role => {
                    if role == Role::Target {
                        targets.push((key.region.clone(), endo_keys.len()));
                    }
                    endo_keys.push(key.clone());
                }
            }
        }
        Self {
            endo_keys,
            exo_keys,
            targets,
        }
    }

    pub fn regions(&self) -> Vec<String> {
        self.targets.iter().map(|(r, _)| r.clone()).collect()
    }
}

/// Training block and layout built from a history frame.
#[derive(Debug, Clone)]
pub struct TrainingPanel {
    pub layout: PanelLayout,
    pub series: PanelSeries,
    /// Index into the history frame of the first training day.
    pub start: usize,
}

/// Extracts the longest fully observed block that ends on the last history
/// day. Trailing gaps in non-target endogenous feeds (publication lags) are
/// filled by carrying the last value forward; targets are never filled.
pub fn training_panel(history: &TimeSeriesFrame, min_train_days: usize) -> Result<TrainingPanel> {
    let end = history.n_dates();
    let mut filled = history.clone();
    for i in 0..history.n_series() {
        if history.role(i) != Role::Endogenous {
            continue;
        }
        let v = history.values(i);
        if let Some(last) = v.iter().rposition(|x| !x.is_nan()) {
            if last + 1 < end {
                let mut w = v.to_vec();
                for slot in &mut w[last + 1..] {
                    *slot = v[last];
                }
                filled.set_series(i, w)?;
            }
        }
    }
    let layout = PanelLayout::from_frame(&filled);
    if layout.targets.is_empty() {
        return Err(Error::Data("history has no target channel".into()));
    }
    let start = filled.complete_run_start(end);
    let days = end - start;
    if days < min_train_days.max(3) {
        let gap = (0..filled.n_series())
            .find(|&i| start > 0 && filled.is_missing(i, start - 1))
            .map(|i| format!(" ({} missing on {})", filled.keys()[i], filled.dates()[start - 1]))
            .unwrap_or_default();
        return Err(Error::Data(format!(
            "only {days} fully observed training days before the cutoff, need {min_train_days}{gap}"
        )));
    }
    let block = |keys: &[SeriesKey]| {
        DMatrix::from_fn(keys.len(), days, |r, c| {
            filled.series(&keys[r]).expect("layout key present")[start + c]
        })
    };
    Ok(TrainingPanel {
        series: PanelSeries {
            endo: block(&layout.endo_keys),
            exo: block(&layout.exo_keys),
            clip_rows: layout.targets.iter().map(|(_, r)| *r).collect(),
        },
        layout,
        start,
    })
}

/// Known-future block (`d_exo × horizon`) in layout order.
pub fn known_future_block(input: &ForecastInput, layout: &PanelLayout) -> Result<DMatrix<f64>> {
    let h = input.horizon;
    if input.known_future.n_dates() < h && !layout.exo_keys.is_empty() {
        return Err(Error::Data(format!(
            "known-future channels cover {} of {h} forecast days after {}",
            input.known_future.n_dates(),
            input.cutoff
        )));
    }
    let mut out = DMatrix::zeros(layout.exo_keys.len(), h);
    for (r, key) in layout.exo_keys.iter().enumerate() {
        let v = input
            .known_future
            .series(key)
            .ok_or_else(|| Error::Data(format!("no known-future values for {key}")))?;
        for c in 0..h {
            if v[c].is_nan() {
                return Err(Error::Data(format!(
                    "known-future value for {key} missing on {}",
                    input.cutoff + Duration::days(c as i64)
                )));
            }
            out[(r, c)] = v[c];
        }
    }
    Ok(out)
}

/// Feature names already carrying the calendar position.
const DAY_OF_YEAR_NAMES: [&str; 2] = ["day_of_year", "doy"];

/// Appends a day-of-year row to the training and known-future exogenous
/// blocks unless the layout already has one. The calendar is known for any
/// date, so the channel never needs to be supplied with the data.
pub fn append_day_of_year(
    train: &mut TrainingPanel,
    history: &TimeSeriesFrame,
    input: &ForecastInput,
    exo_future: &mut DMatrix<f64>,
) {
    if train.layout.exo_keys.iter().any(|k| DAY_OF_YEAR_NAMES.contains(&k.feature.as_str())) {
        return;
    }
    let past = day_of_year(&history.dates()[train.start..]);
    let future = day_of_year(&input.forecast_dates());
    let exo = &mut train.series.exo;
    let n = exo.nrows();
    *exo = exo.clone().insert_row(n, 0.0);
    exo.row_mut(n).iter_mut().zip(&past).for_each(|(v, d)| *v = *d);
    let n = exo_future.nrows();
    *exo_future = exo_future.clone().insert_row(n, 0.0);
    exo_future.row_mut(n).iter_mut().zip(&future).for_each(|(v, d)| *v = *d);
}

/// Observed target values on the forecast days, per region (for scoring).
pub fn actuals(frame: &TimeSeriesFrame, region: &str, cutoff: NaiveDate, horizon: usize) -> Option<Vec<f64>> {
    let idx = frame.target_index(region)?;
    let start = frame.date_index(cutoff)?;
    let v = frame.values(idx).get(start..start + horizon)?;
    v.iter().all(|x| !x.is_nan()).then(|| v.to_vec())
}
