use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::frame::{Frequency, Role, TimeSeriesFrame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    None,
    /// Per-channel min-max onto `[-1, 1]`, fitted on the training range.
    #[default]
    MinMaxSymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub smoothing_window: usize,
    /// Longest internal gap (days) of a daily feed that is filled linearly.
    pub interpolation_max_gap: usize,
    pub scaling: Scaling,
    pub coverage_min_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            smoothing_window: 10,
            interpolation_max_gap: 7,
            scaling: Scaling::MinMaxSymmetric,
            coverage_min_fraction: 0.5,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smoothing_window < 1 {
            return Err(Error::Config("smoothing_window must be >= 1".into()));
        }
        if !(self.coverage_min_fraction > 0.0 && self.coverage_min_fraction <= 1.0) {
            return Err(Error::Config("coverage_min_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRegion {
    pub region: String,
    pub target_coverage: f64,
}

/// What preprocessing changed. Maps are keyed by `region/feature`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub dropped_regions: Vec<DroppedRegion>,
    pub dropped_series: Vec<String>,
    pub interpolated_cells: BTreeMap<String, usize>,
    pub interpolated_total: usize,
    pub step_filled_cells: BTreeMap<String, usize>,
    pub remaining_missing: BTreeMap<String, usize>,
    pub events: Vec<String>,
}

/// Fills internal gaps by linear interpolation and drops under-covered regions.
///
/// Daily feeds are filled across gaps of at most `interpolation_max_gap`
/// days. Dekad and monthly feeds are interpolated between consecutive native
/// observations, and their last observation is carried to the end of its
/// period. Leading and other trailing gaps stay missing. Known-future
/// exogenous channels are passed through untouched.
pub fn resample_and_interpolate(
    frame: &TimeSeriesFrame,
    cfg: &PreprocessConfig,
) -> (TimeSeriesFrame, PreprocessReport) {
    let mut report = PreprocessReport::default();
    let dates = frame.dates().to_vec();
    let filled = frame.map_series(|key, meta, values| {
        if !meta.is_interpolated() {
            return values.to_vec();
        }
        let max_gap = cfg.interpolation_max_gap.max(meta.frequency.max_period_days());
        let (mut out, n_interp) = interpolate_gaps(values, max_gap);
        if n_interp > 0 {
            report.interpolated_cells.insert(key.to_string(), n_interp);
            report.interpolated_total += n_interp;
        }
        let n_step = step_fill_period(&mut out, &dates, meta.frequency);
        if n_step > 0 {
            report.step_filled_cells.insert(key.to_string(), n_step);
        }
        out
    });

    // Coverage is measured over the span in which any target is observed.
    let target_idx: Vec<(String, usize)> = filled
        .regions()
        .into_iter()
        .filter_map(|r| filled.target_index(&r).map(|i| (r, i)))
        .collect();
    let span = target_idx.iter().fold(None, |acc: Option<(usize, usize)>, (_, i)| {
        let v = filled.values(*i);
        let first = v.iter().position(|x| !x.is_nan());
        let last = v.iter().rposition(|x| !x.is_nan());
        match (acc, first, last) {
            (None, Some(f), Some(l)) => Some((f, l)),
            (Some((a, b)), Some(f), Some(l)) => Some((a.min(f), b.max(l))),
            (acc, _, _) => acc,
        }
    });
    let mut keep: BTreeSet<String> = BTreeSet::new();
    let all_regions = filled.regions();
    for region in &all_regions {
        let coverage = match (filled.target_index(region), span) {
            (Some(i), Some((a, b))) => {
                let v = &filled.values(i)[a..=b];
                v.iter().filter(|x| !x.is_nan()).count() as f64 / v.len() as f64
            }
            _ => 0.0,
        };
        if coverage < cfg.coverage_min_fraction {
            report.dropped_regions.push(DroppedRegion {
                region: region.clone(),
                target_coverage: coverage,
            });
        } else {
            keep.insert(region.clone());
        }
    }
    let mut out = filled.retain_regions(&keep);

    let empty: BTreeSet<String> = out
        .keys()
        .iter()
        .enumerate()
        .filter(|(i, _)| out.values(*i).iter().all(|x| x.is_nan()))
        .map(|(_, k)| k.to_string())
        .collect();
    if !empty.is_empty() {
        report.dropped_series = empty.iter().cloned().collect();
        out = out.filter_series(|k, m| m.role == Role::Target || !empty.contains(&k.to_string()));
    }
    for (i, k) in out.keys().iter().enumerate() {
        let n = out.values(i).iter().filter(|x| x.is_nan()).count();
        if n > 0 {
            report.remaining_missing.insert(k.to_string(), n);
        }
    }
    (out, report)
}

/// Linear interpolation across internal runs of at most `max_gap` NaNs.
/// Returns the filled vector and the number of cells written.
pub fn interpolate_gaps(values: &[f64], max_gap: usize) -> (Vec<f64>, usize) {
    let mut out = values.to_vec();
    let mut filled = 0;
    let mut last_obs: Option<usize> = None;
    for i in 0..values.len() {
        if values[i].is_nan() {
            continue;
        }
        if let Some(j) = last_obs {
            let gap = i - j - 1;
            if gap > 0 && gap <= max_gap {
                let (a, b) = (values[j], values[i]);
                let span = (i - j) as f64;
                for (k, slot) in out.iter_mut().enumerate().take(i).skip(j + 1) {
                    *slot = a + (b - a) * (k - j) as f64 / span;
                }
                filled += gap;
            }
        }
        last_obs = Some(i);
    }
    (out, filled)
}

fn same_period(a: NaiveDate, b: NaiveDate, freq: Frequency) -> bool {
    let dekad = |d: NaiveDate| ((d.day() - 1) / 10).min(2);
    match freq {
        Frequency::Daily => false,
        Frequency::Monthly => (a.year(), a.month()) == (b.year(), b.month()),
        Frequency::Dekad => (a.year(), a.month(), dekad(a)) == (b.year(), b.month(), dekad(b)),
    }
}

/// Carries the final observation of a coarse feed to the end of its period.
fn step_fill_period(values: &mut [f64], dates: &[NaiveDate], freq: Frequency) -> usize {
    let Some(last) = values.iter().rposition(|x| !x.is_nan()) else {
        return 0;
    };
    let mut n = 0;
    for t in last + 1..values.len() {
        if !same_period(dates[last], dates[t], freq) {
            break;
        }
        values[t] = values[last];
        n += 1;
    }
    n
}

/// Trailing moving average; the first `window - 1` entries use the available
/// prefix. Missing cells stay missing and are skipped inside windows.
pub fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    for t in 0..values.len() {
        if values[t].is_nan() {
            out.push(f64::NAN);
            continue;
        }
        let lo = (t + 1).saturating_sub(window);
        let (sum, n) = values[lo..=t]
            .iter()
            .filter(|x| !x.is_nan())
            .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        out.push(sum / n as f64);
    }
    out
}

/// Applies [`trailing_mean`] to every channel whose metadata allows smoothing.
pub fn smooth_trailing_mean(frame: &TimeSeriesFrame, window: usize) -> TimeSeriesFrame {
    frame.map_series(|_, meta, values| {
        if meta.is_smoothed() {
            trailing_mean(values, window)
        } else {
            values.to_vec()
        }
    })
}

/// Interpolation followed by smoothing.
pub fn preprocess(
    frame: &TimeSeriesFrame,
    cfg: &PreprocessConfig,
) -> Result<(TimeSeriesFrame, PreprocessReport)> {
    cfg.validate()?;
    let (filled, report) = resample_and_interpolate(frame, cfg);
    Ok((smooth_trailing_mean(&filled, cfg.smoothing_window), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::frame::{FeatureMeta, Metadata, SeriesKey};
    use chrono::Duration;

    fn dates(start: &str, n: usize) -> Vec<NaiveDate> {
        let s: NaiveDate = start.parse().unwrap();
        (0..n).map(|i| s + Duration::days(i as i64)).collect()
    }

    #[test]
    fn midpoint_fill() {
        let (v, n) = interpolate_gaps(&[2.0, f64::NAN, 4.0], 3);
        assert_eq!(v, vec![2.0, 3.0, 4.0]);
        assert_eq!(n, 1);
    }

    #[test]
    fn long_and_edge_gaps_left_alone() {
        let nan = f64::NAN;
        let (v, n) = interpolate_gaps(&[nan, 1.0, nan, nan, nan, 2.0, nan], 2);
        assert_eq!(n, 0);
        assert!(v[0].is_nan() && v[3].is_nan() && v[6].is_nan());
    }

    #[test]
    fn monthly_feed_linear_between_anchors() {
        let d = dates("2022-01-01", 45);
        let mut v = vec![f64::NAN; 45];
        v[0] = 10.0;
        v[31] = 40.0;
        let mut meta = Metadata::default().resolve(["fcs", "alps"]).unwrap();
        meta.insert("alps".into(), FeatureMeta::new(Role::Endogenous).with_frequency(Frequency::Monthly));
        let frame = TimeSeriesFrame::new(
            d,
            [
                (SeriesKey::new("r", "alps"), v),
                (SeriesKey::new("r", "fcs"), vec![0.5; 45]),
            ],
            meta,
        )
        .unwrap();
        let cfg = PreprocessConfig {
            interpolation_max_gap: 2,
            ..Default::default()
        };
        let (out, report) = resample_and_interpolate(&frame, &cfg);
        let alps = out.series(&SeriesKey::new("r", "alps")).unwrap();
        // Jan-16 is 15 days into a 31-day span.
        assert!((alps[15] - (10.0 + 30.0 * 15.0 / 31.0)).abs() < 1e-12);
        // February is carried forward to the end of the data.
        assert!(alps[31..].iter().all(|x| *x == 40.0));
        assert_eq!(report.interpolated_cells["r/alps"], 30);
        assert_eq!(report.step_filled_cells["r/alps"], 13);
    }

    #[test]
    fn under_covered_region_dropped() {
        let d = dates("2022-01-01", 10);
        let mut sparse = vec![f64::NAN; 10];
        sparse[0] = 0.2;
        let meta = Metadata::default().resolve(["fcs"]).unwrap();
        let frame = TimeSeriesFrame::new(
            d,
            [
                (SeriesKey::new("good", "fcs"), vec![0.3; 10]),
                (SeriesKey::new("poor", "fcs"), sparse),
            ],
            meta,
        )
        .unwrap();
        let (out, report) = resample_and_interpolate(&frame, &PreprocessConfig::default());
        assert_eq!(out.regions(), vec!["good".to_string()]);
        assert_eq!(report.dropped_regions.len(), 1);
        assert_eq!(report.dropped_regions[0].region, "poor");
        assert!((report.dropped_regions[0].target_coverage - 0.1).abs() < 1e-12);
    }

    #[test]
    fn trailing_mean_examples() {
        assert_eq!(trailing_mean(&[5.0; 20], 10), vec![5.0; 20]);
        assert_eq!(trailing_mean(&[1.0, 2.0, 3.0], 2), vec![1.0, 1.5, 2.5]);
        // Window longer than the series is an expanding mean.
        assert_eq!(trailing_mean(&[1.0, 2.0, 3.0], 10), vec![1.0, 1.5, 2.0]);
    }

    #[test]
    fn exogenous_channels_not_smoothed() {
        let meta = Metadata::default().resolve(["fcs", "ramadan"]).unwrap();
        let frame = TimeSeriesFrame::new(
            dates("2022-01-01", 3),
            [
                (SeriesKey::new("r", "ramadan"), vec![0.0, 1.0, 1.0]),
                (SeriesKey::new("r", "fcs"), vec![0.1, 0.2, 0.3]),
            ],
            meta,
        )
        .unwrap();
        let out = smooth_trailing_mean(&frame, 10);
        assert_eq!(out.series(&SeriesKey::new("r", "ramadan")).unwrap(), &[0.0, 1.0, 1.0]);
        let fcs = out.series(&SeriesKey::new("r", "fcs")).unwrap();
        assert!((fcs[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let bad = PreprocessConfig {
            smoothing_window: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
