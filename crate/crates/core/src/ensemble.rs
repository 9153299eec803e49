//! Seeded ESN ensembles, median aggregation and residual-based bands.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Scaling, TimeSeriesFrame};
use crate::error::{Error, ErrorKind, Result};
use crate::panel::{self, ForecastInput};
use crate::parallel::par_map;
use crate::reservoir::{EsnParams, PreparedInputs, TrainedEsn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleParams {
    pub n_members: usize,
    pub base_seed: u64,
    /// Shared by every member; `member.seed` is ignored.
    pub member: EsnParams,
    pub scaling: Scaling,
    /// Fewest fully observed days before a cutoff needed to train.
    pub min_train_days: usize,
    /// Feed the day of year as a known-future input when the frame has no
    /// such channel.
    pub day_of_year: bool,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            n_members: 100,
            base_seed: 0,
            member: EsnParams::default(),
            scaling: Scaling::default(),
            min_train_days: 365,
            day_of_year: true,
        }
    }
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_members == 0 {
            return Err(Error::Config("n_members must be >= 1".into()));
        }
        self.member.validate()
    }

    pub fn member_params(&self, i: usize) -> EsnParams {
        EsnParams {
            seed: self.base_seed.wrapping_add(i as u64),
            ..self.member.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberRun {
    pub index: usize,
    pub seed: u64,
    /// Target forecasts, regions × horizon.
    pub forecast: DMatrix<f64>,
}

/// Per-member target forecasts of one ensemble run.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberForecasts {
    pub regions: Vec<String>,
    pub cutoff: NaiveDate,
    pub horizon: usize,
    /// Surviving members in index order.
    pub members: Vec<MemberRun>,
    pub dropped: Vec<usize>,
}

impl MemberForecasts {
    /// Member forecasts for one region, members × horizon.
    pub fn region_matrix(&self, region: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.members.len(), self.horizon, |m, h| self.members[m].forecast[(region, h)])
    }

    /// Median forecast, regions × horizon.
    pub fn median(&self) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.regions.len(), self.horizon);
        for r in 0..self.regions.len() {
            let med = aggregate_median(&self.region_matrix(r))?;
            for (h, v) in med.into_iter().enumerate() {
                out[(r, h)] = v;
            }
        }
        Ok(out)
    }
}

/// Elementwise median over rows (members); even counts average the two
/// central values.
pub fn aggregate_median(members: &DMatrix<f64>) -> Result<Vec<f64>> {
    if members.nrows() == 0 {
        return Err(Error::Numerical("no ensemble members to aggregate".into()));
    }
    let mut col = Vec::with_capacity(members.nrows());
    Ok(members
        .column_iter()
        .map(|c| {
            col.clear();
            col.extend(c.iter().copied());
            median_in_place(&mut col)
        })
        .collect())
}

pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains `n_members` networks on the history before `cutoff` and forecasts
/// `horizon` days of every target channel.
pub fn fit_predict_ensemble(
    params: &EnsembleParams,
    frame: &TimeSeriesFrame,
    cutoff: NaiveDate,
    horizon: usize,
    workers: usize,
) -> Result<MemberForecasts> {
    let input = ForecastInput::at_cutoff(frame, cutoff, horizon)?;
    fit_predict_input(params, &input, workers)
}

pub fn fit_predict_input(params: &EnsembleParams, input: &ForecastInput, workers: usize) -> Result<MemberForecasts> {
    params.validate()?;
    let mut train = panel::training_panel(&input.history, params.min_train_days)?;
    let mut exo_future = panel::known_future_block(input, &train.layout)?;
    if params.day_of_year {
        panel::append_day_of_year(&mut train, &input.history, input, &mut exo_future);
    }
    let prepared = PreparedInputs::new(&train.series, params.member.differencing, params.scaling)?;
    let target_rows: Vec<usize> = train.layout.targets.iter().map(|(_, r)| *r).collect();
    let horizon = input.horizon;

    let runs = par_map(workers, params.n_members, |i| {
        let p = params.member_params(i);
        let model = TrainedEsn::fit_prepared(&p, &prepared)?;
        let f = model.forecast(&exo_future, horizon)?;
        Ok::<_, Error>(DMatrix::from_fn(target_rows.len(), horizon, |r, h| f[(target_rows[r], h)]))
    });

    let mut members = Vec::new();
    let mut dropped = Vec::new();
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok(forecast) => members.push(MemberRun {
                index: i,
                seed: params.member_params(i).seed,
                forecast,
            }),
            Err(e) if e.kind() == ErrorKind::Numerical => {
                log::warn!("ensemble member {i} dropped at cutoff {}: {e}", input.cutoff);
                dropped.push(i);
            }
            Err(e) => return Err(e),
        }
    }
    if 2 * dropped.len() > params.n_members {
        return Err(Error::EnsembleCollapsed {
            dropped: dropped.len(),
            total: params.n_members,
        });
    }
    Ok(MemberForecasts {
        regions: train.layout.regions(),
        cutoff: input.cutoff,
        horizon,
        members,
        dropped,
    })
}

/// `sqrt(mean(r²)) / sqrt(N)`; the residual mean is taken to be zero.
pub fn standard_error(residuals: &[f64]) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Numerical("standard error of zero residuals".into()));
    }
    let n = residuals.len() as f64;
    let ms = residuals.iter().map(|r| r * r).sum::<f64>() / n;
    Ok(ms.sqrt() / n.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandConfig {
    pub n_splits: usize,
    /// Days before the cutoff in which the rolling splits are placed.
    pub window_days: usize,
    /// One SE per lead time instead of one per region.
    pub per_step: bool,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            n_splits: 20,
            window_days: 120,
            per_step: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastBand {
    pub region: String,
    pub point: Vec<f64>,
    pub se: f64,
    pub se_by_step: Option<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub residual_count: usize,
}

impl ForecastBand {
    pub fn new(region: String, point: Vec<f64>, se: f64, se_by_step: Option<Vec<f64>>, residual_count: usize) -> Self {
        let width = |h: usize| se_by_step.as_ref().map_or(se, |s| s[h]);
        let lower = point.iter().enumerate().map(|(h, p)| p - 2.0 * width(h)).collect();
        let upper = point.iter().enumerate().map(|(h, p)| p + 2.0 * width(h)).collect();
        Self {
            region,
            point,
            se,
            se_by_step,
            lower,
            upper,
            residual_count,
        }
    }
}

/// Point forecast at `cutoff` plus bands from rolling out-of-sample splits.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedForecast {
    pub forecast: MemberForecasts,
    pub point: DMatrix<f64>,
    /// `None` when the history before the cutoff cannot host the splits.
    pub bands: Option<Vec<ForecastBand>>,
}

/// Cutoffs of the rolling splits: evenly spaced over
/// `[cutoff - window, cutoff - horizon]` so each window ends before `cutoff`.
pub fn band_cutoffs(cutoff: NaiveDate, horizon: usize, cfg: &BandConfig) -> Result<Vec<NaiveDate>> {
    if cfg.n_splits == 0 {
        return Err(Error::Config("band n_splits must be >= 1".into()));
    }
    if horizon > cfg.window_days {
        return Err(Error::Config(format!(
            "horizon {horizon} does not fit in a band window of {} days",
            cfg.window_days
        )));
    }
    let span = (cfg.window_days - horizon) as f64;
    let k = cfg.n_splits;
    Ok((0..k)
        .map(|j| {
            let off = if k == 1 { 0.0 } else { span * j as f64 / (k - 1) as f64 };
            cutoff - Duration::days(cfg.window_days as i64) + Duration::days(off.round() as i64)
        })
        .collect())
}

pub fn confidence_bands(
    frame: &TimeSeriesFrame,
    cutoff: NaiveDate,
    horizon: usize,
    params: &EnsembleParams,
    cfg: &BandConfig,
    workers: usize,
) -> Result<BandedForecast> {
    let forecast = fit_predict_ensemble(params, frame, cutoff, horizon, workers)?;
    let point = forecast.median()?;
    let bands = match split_residuals(frame, cutoff, horizon, params, cfg, workers) {
        Ok(res) => Some(
            forecast
                .regions
                .iter()
                .enumerate()
                .map(|(r, region)| {
                    let per_split = &res[r];
                    let rms: Vec<f64> = per_split
                        .iter()
                        .map(|e| (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt())
                        .collect();
                    let se = standard_error(&rms)?;
                    let se_by_step = if cfg.per_step {
                        Some(
                            (0..horizon)
                                .map(|h| standard_error(&per_split.iter().map(|e| e[h]).collect::<Vec<_>>()))
                                .collect::<Result<Vec<_>>>()?,
                        )
                    } else {
                        None
                    };
                    let pt = point.row(r).iter().copied().collect();
                    Ok(ForecastBand::new(region.clone(), pt, se, se_by_step, per_split.len()))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        Err(e) if e.kind() == ErrorKind::Data => {
            log::warn!("confidence bands omitted at {cutoff}: {e}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(BandedForecast { forecast, point, bands })
}

/// Residuals (point − actual) per region, per split, per step.
fn split_residuals(
    frame: &TimeSeriesFrame,
    cutoff: NaiveDate,
    horizon: usize,
    params: &EnsembleParams,
    cfg: &BandConfig,
    workers: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let first = *frame.dates().first().ok_or_else(|| Error::Data("empty frame".into()))?;
    let cutoffs = band_cutoffs(cutoff, horizon, cfg).map_err(|e| Error::Data(e.to_string()))?;
    if cutoffs[0] - first < Duration::days(params.min_train_days as i64) {
        return Err(Error::Data(format!(
            "band splits start on {} with less than {} days of history",
            cutoffs[0], params.min_train_days
        )));
    }
    let mut out: Vec<Vec<Vec<f64>>> = Vec::new();
    for c in cutoffs {
        let run = fit_predict_ensemble(params, frame, c, horizon, workers)?;
        let med = run.median()?;
        if out.is_empty() {
            out = vec![Vec::new(); run.regions.len()];
        }
        for (r, region) in run.regions.iter().enumerate() {
            let actual = panel::actuals(frame, region, c, horizon)
                .ok_or_else(|| Error::Data(format!("no complete actuals for {region} after {c}")))?;
            out[r].push((0..horizon).map(|h| med[(r, h)] - actual[h]).collect());
        }
    }
    Ok(out)
}

/// One line of the forecast CSV. Band columns are empty for models
/// without bands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRow {
    pub region: String,
    pub date: NaiveDate,
    pub point: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub se: Option<f64>,
    pub n_members: Option<usize>,
}

pub fn forecast_rows(
    regions: &[String],
    cutoff: NaiveDate,
    point: &DMatrix<f64>,
    bands: Option<&[ForecastBand]>,
    n_members: Option<usize>,
) -> Vec<ForecastRow> {
    let mut rows = Vec::new();
    for (r, region) in regions.iter().enumerate() {
        let band = bands.and_then(|b| b.iter().find(|b| &b.region == region));
        for h in 0..point.ncols() {
            rows.push(ForecastRow {
                region: region.clone(),
                date: cutoff + Duration::days(h as i64),
                point: point[(r, h)],
                lower: band.map(|b| b.lower[h]),
                upper: band.map(|b| b.upper[h]),
                se: band.map(|b| b.se_by_step.as_ref().map_or(b.se, |s| s[h])),
                n_members,
            });
        }
    }
    rows
}

pub fn write_forecast_csv<W: Write>(out: W, rows: &[ForecastRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        let m = DMatrix::from_column_slice(3, 1, &[1.0, 3.0, 100.0]);
        assert_eq!(aggregate_median(&m).unwrap(), vec![3.0]);
        let m = DMatrix::from_column_slice(4, 1, &[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(aggregate_median(&m).unwrap(), vec![2.5]);
        assert!(aggregate_median(&DMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn se_examples() {
        assert_eq!(standard_error(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(standard_error(&[1.0, -1.0, 1.0, -1.0]).unwrap(), 0.5);
        assert_eq!(standard_error(&[2.0]).unwrap(), 2.0);
        assert!(standard_error(&[]).is_err());
    }

    #[test]
    fn band_width_is_four_se() {
        let b = ForecastBand::new("r".into(), vec![0.2, 0.3], 0.05, None, 20);
        for h in 0..2 {
            assert!((b.upper[h] - b.lower[h] - 0.2).abs() < 1e-15);
            assert!(b.lower[h] <= b.point[h] && b.point[h] <= b.upper[h]);
        }
    }

    #[test]
    fn band_cutoffs_fill_the_window() {
        let c: NaiveDate = "2023-01-01".parse().unwrap();
        let cuts = band_cutoffs(c, 60, &BandConfig::default()).unwrap();
        assert_eq!(cuts.len(), 20);
        assert_eq!(cuts[0], c - Duration::days(120));
        assert_eq!(*cuts.last().unwrap(), c - Duration::days(60));
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn csv_leaves_band_columns_empty() {
        let c: NaiveDate = "2023-01-01".parse().unwrap();
        let rows = forecast_rows(&["a".into()], c, &DMatrix::from_element(1, 2, 0.5), None, None);
        let mut buf = Vec::new();
        write_forecast_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "region,date,point,lower,upper,se,n_members\na,2023-01-01,0.5,,,,\na,2023-01-02,0.5,,,,\n"
        );
    }
}
