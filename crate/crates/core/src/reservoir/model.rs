use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{build_reservoir, fit_readout, ChannelScaler, EsnParams, Readout, Reservoir, ReservoirState};
use crate::dataset::Scaling;
use crate::error::{Error, Result};

/// Training block for one network, in levels: endogenous channels
/// (`d_endo × T`) and known-future channels (`d_exo × T`) on the same days.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSeries {
    pub endo: DMatrix<f64>,
    pub exo: DMatrix<f64>,
    /// Endogenous rows holding prevalences, clipped to `[0, 1]` on output.
    pub clip_rows: Vec<usize>,
}

/// Scaled, optionally differenced model inputs. Independent of the
/// reservoir seed, so ensemble members share one copy.
#[derive(Debug, Clone)]
pub struct PreparedInputs {
    inputs: DMatrix<f64>,
    d_endo: usize,
    endo_scaler: ChannelScaler,
    exo_scaler: ChannelScaler,
    last_levels: Vec<f64>,
    clip_rows: Vec<usize>,
    differencing: bool,
}

impl PreparedInputs {
    pub fn new(panel: &PanelSeries, differencing: bool, scaling: Scaling) -> Result<Self> {
        let t = panel.endo.ncols();
        if panel.exo.ncols() != t {
            return Err(Error::Data("endogenous and exogenous blocks differ in length".into()));
        }
        if panel.endo.nrows() == 0 {
            return Err(Error::Data("no endogenous channels".into()));
        }
        if t < 3 {
            return Err(Error::Data(format!("training block of {t} days is too short")));
        }
        if let Some(i) = panel.endo.iter().chain(panel.exo.iter()).position(|v| !v.is_finite()) {
            let rows = panel.endo.nrows();
            let n_endo = panel.endo.len();
            let (block, idx, nrows) = if i < n_endo { ("endogenous", i, rows) } else { ("exogenous", i - n_endo, panel.exo.nrows()) };
            return Err(Error::Data(format!(
                "missing or non-finite {block} value at channel {}, day {}",
                idx % nrows,
                idx / nrows
            )));
        }
        let (endo, exo) = if differencing {
            let endo = DMatrix::from_fn(panel.endo.nrows(), t - 1, |i, j| {
                panel.endo[(i, j + 1)] - panel.endo[(i, j)]
            });
            (endo, panel.exo.columns(1, t - 1).into_owned())
        } else {
            (panel.endo.clone(), panel.exo.clone())
        };
        let endo_scaler = ChannelScaler::fit(&endo, scaling);
        let exo_scaler = ChannelScaler::fit(&exo, scaling);
        let mut inputs = DMatrix::zeros(endo.nrows() + exo.nrows(), endo.ncols());
        inputs.rows_mut(0, endo.nrows()).copy_from(&endo_scaler.transform(&endo));
        inputs
            .rows_mut(endo.nrows(), exo.nrows())
            .copy_from(&exo_scaler.transform(&exo));
        Ok(Self {
            inputs,
            d_endo: endo.nrows(),
            endo_scaler,
            exo_scaler,
            last_levels: panel.endo.column(t - 1).iter().copied().collect(),
            clip_rows: panel.clip_rows.clone(),
            differencing,
        })
    }

    pub fn d_endo(&self) -> usize {
        self.d_endo
    }

    pub fn d_exo(&self) -> usize {
        self.inputs.nrows() - self.d_endo
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }
}

/// A network with trained readout, ready to forecast from the end of its
/// training block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEsn {
    pub params: EsnParams,
    pub reservoir: Reservoir,
    pub readout: Readout,
    pub endo_scaler: ChannelScaler,
    pub exo_scaler: ChannelScaler,
    /// State after the last training input.
    pub warm_state: ReservoirState,
    pub last_levels: Vec<f64>,
    pub clip_rows: Vec<usize>,
}

impl TrainedEsn {
    pub fn fit(params: &EsnParams, panel: &PanelSeries, scaling: Scaling) -> Result<Self> {
        let prepared = PreparedInputs::new(panel, params.differencing, scaling)?;
        Self::fit_prepared(params, &prepared)
    }

    /// Builds the reservoir, drives it over the whole block and trains the
    /// readout so that the state after input `t` predicts endogenous input
    /// `t + 1`.
    pub fn fit_prepared(params: &EsnParams, prep: &PreparedInputs) -> Result<Self> {
        if params.differencing != prep.differencing {
            return Err(Error::Config("prepared inputs use a different differencing setting".into()));
        }
        let t = prep.len();
        if t < params.washout + 2 {
            return Err(Error::Data(format!(
                "{t} training steps leave nothing after a washout of {}",
                params.washout
            )));
        }
        let reservoir = build_reservoir(params, prep.d_endo, prep.d_exo())?;
        let driven = reservoir.drive(&prep.inputs, &ReservoirState::zeros(params.n_nodes), params.washout)?;
        let states = driven.augmented(params.washout..t - 1);
        let targets = prep.inputs.view((0, params.washout + 1), (prep.d_endo, t - 1 - params.washout)).into_owned();
        let readout = fit_readout(&states, &targets, params.ridge)?;
        Ok(Self {
            params: params.clone(),
            reservoir,
            readout,
            endo_scaler: prep.endo_scaler.clone(),
            exo_scaler: prep.exo_scaler.clone(),
            warm_state: driven.last().expect("non-empty drive"),
            last_levels: prep.last_levels.clone(),
            clip_rows: prep.clip_rows.clone(),
        })
    }

    /// Closed-loop forecast of `horizon` days in levels (`d_endo × horizon`).
    ///
    /// `exo_future` holds the known-future channels (raw units) for the
    /// forecast days, column `h` for day `h`. Differenced models are
    /// integrated from the last observed level; clip rows are bounded to
    /// `[0, 1]`.
    pub fn forecast(&self, exo_future: &DMatrix<f64>, horizon: usize) -> Result<DMatrix<f64>> {
        let d_exo = self.reservoir.d_exo;
        if exo_future.nrows() != d_exo || (d_exo > 0 && exo_future.ncols() < horizon) {
            return Err(Error::Data(format!(
                "known-future block is {}x{}, need {d_exo}x{horizon}",
                exo_future.nrows(),
                exo_future.ncols()
            )));
        }
        if let Some(i) = exo_future.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "missing known-future value for channel {} on forecast day {}",
                i % d_exo.max(1),
                i / d_exo.max(1)
            )));
        }
        let exo_scaled = self.exo_scaler.transform(exo_future);
        let scaled = self
            .reservoir
            .run_closed_loop(&self.readout, &self.warm_state, &exo_scaled, horizon)?;
        let mut out = self.endo_scaler.inverse(&scaled);
        if self.params.differencing {
            for (i, mut row) in out.row_iter_mut().enumerate() {
                let mut level = self.last_levels[i];
                for v in row.iter_mut() {
                    level += *v;
                    *v = level;
                }
            }
        }
        for &i in &self.clip_rows {
            out.row_mut(i).apply(|v| *v = v.clamp(0.0, 1.0));
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: i / out.nrows().max(1) });
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
