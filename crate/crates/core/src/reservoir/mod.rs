//! Single echo state network: construction, driving, readout training and
//! closed-loop forecasting.

mod model;
mod scaling;

pub use model::{PanelSeries, PreparedInputs, TrainedEsn};
pub use scaling::ChannelScaler;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, PowerIterationConfig, SparseMatrix};

/// Hyperparameters of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsnParams {
    pub n_nodes: usize,
    pub spectral_radius: f64,
    pub input_strength: f64,
    pub ridge: f64,
    /// Expected number of nonzeros per row of the adjacency matrix.
    pub avg_degree: usize,
    /// Leading states excluded from readout training.
    pub washout: usize,
    pub differencing: bool,
    pub seed: u64,
}

impl Default for EsnParams {
    fn default() -> Self {
        Self {
            n_nodes: 500,
            spectral_radius: 0.9,
            input_strength: 0.5,
            ridge: 0.1,
            avg_degree: 3,
            washout: 30,
            differencing: true,
            seed: 0,
        }
    }
}

impl EsnParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_nodes == 0 {
            return bad("n_nodes must be positive");
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius.is_finite()) {
            return bad("spectral_radius must be finite and > 0");
        }
        if !(self.input_strength > 0.0 && self.input_strength.is_finite()) {
            return bad("input_strength must be finite and > 0");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be finite and >= 0");
        }
        if self.avg_degree == 0 {
            return bad("avg_degree must be >= 1");
        }
        Ok(())
    }
}

/// Input matrix with exactly one nonzero per row: reservoir node `i` reads
/// input channel `channel[i]` with weight `weight[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputMatrix {
    pub d_in: usize,
    pub channel: Vec<usize>,
    pub weight: Vec<f64>,
}

impl InputMatrix {
    pub fn n_nodes(&self) -> usize {
        self.channel.len()
    }

    /// Dense `N × d_in` form.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_nodes(), self.d_in);
        for (i, (&c, &w)) in self.channel.iter().zip(&self.weight).enumerate() {
            m[(i, c)] = w;
        }
        m
    }
}

/// The fixed random part of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservoir {
    pub adjacency: SparseMatrix,
    pub input: InputMatrix,
    pub d_endo: usize,
    pub d_exo: usize,
}

/// Reservoir activation vector `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirState {
    pub r: Vec<f64>,
}

impl ReservoirState {
    pub fn zeros(n: usize) -> Self {
        Self { r: vec![0.0; n] }
    }

    /// `(r_1..r_N, r_1²..r_N²)`
    pub fn augmented(&self) -> DVector<f64> {
        linalg::augment_quadratic(&self.r)
    }
}

/// Trained linear map from augmented states to endogenous channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub w_out: DMatrix<f64>,
}

impl Readout {
    pub fn predict(&self, state: &ReservoirState) -> DVector<f64> {
        &self.w_out * state.augmented()
    }
}

/// States produced by [`Reservoir::drive`]: column `t` holds `r_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivenStates {
    pub states: DMatrix<f64>,
    pub washout: usize,
}

impl DrivenStates {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn state(&self, t: usize) -> ReservoirState {
        ReservoirState {
            r: self.states.column(t).iter().copied().collect(),
        }
    }

    pub fn last(&self) -> Option<ReservoirState> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    /// Augmented states for columns `range`, as a `2N × len` matrix.
    pub fn augmented(&self, range: std::ops::Range<usize>) -> DMatrix<f64> {
        let n = self.states.nrows();
        let mut out = DMatrix::zeros(2 * n, range.len());
        for (j, t) in range.enumerate() {
            for i in 0..n {
                let v = self.states[(i, t)];
                out[(i, j)] = v;
                out[(n + i, j)] = v * v;
            }
        }
        out
    }
}

/// Builds a reservoir for `d_endo + d_exo` input channels, fully determined
/// by `params.seed`.
///
/// The adjacency matrix keeps each entry with probability
/// `avg_degree / N`, draws weights uniformly from `[-1, 1]` and is rescaled
/// to the requested spectral radius. Each node reads one uniformly chosen
/// input channel with a weight from `[-1, 1]` times the input strength.
pub fn build_reservoir(params: &EsnParams, d_endo: usize, d_exo: usize) -> Result<Reservoir> {
    params.validate()?;
    if d_endo == 0 {
        return Err(Error::Config("at least one endogenous channel is required".into()));
    }
    let n = params.n_nodes;
    let d_in = d_endo + d_exo;
    if n < 2 * d_in {
        log::warn!("reservoir of {n} nodes is small for {d_in} input channels");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let p = (params.avg_degree as f64 / n as f64).min(1.0);
    let cfg = PowerIterationConfig {
        rel_tol: 1e-10,
        ..Default::default()
    };

    let mut triplets = Vec::with_capacity(n * params.avg_degree * 2);
    for i in 0..n {
        for j in 0..n {
            if rng.gen::<f64>() < p {
                triplets.push((i, j, rng.gen_range(-1.0..=1.0)));
            }
        }
    }
    let mut adjacency = SparseMatrix::from_triplets(n, triplets.iter().copied())?;
    let mut radius = linalg::spectral_radius(&adjacency, &cfg)?;
    if radius == 0.0 {
        // Degenerate draw (empty or nilpotent): give every empty row one entry.
        for i in 0..n {
            if adjacency.row_nnz(i) == 0 {
                triplets.push((i, rng.gen_range(0..n), rng.gen_range(-1.0..=1.0)));
            }
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        triplets.dedup_by_key(|t| (t.0, t.1));
        adjacency = SparseMatrix::from_triplets(n, triplets)?;
        radius = linalg::spectral_radius(&adjacency, &cfg)?;
        if radius == 0.0 {
            return Err(Error::Numerical(format!(
                "seed {} produced a nilpotent adjacency matrix",
                params.seed
            )));
        }
    }
    adjacency.scale(params.spectral_radius / radius);

    let mut channel = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);
    for _ in 0..n {
        channel.push(rng.gen_range(0..d_in));
        weight.push(rng.gen_range(-1.0..=1.0) * params.input_strength);
    }
    Ok(Reservoir {
        adjacency,
        input: InputMatrix {
            d_in,
            channel,
            weight,
        },
        d_endo,
        d_exo,
    })
}

impl Reservoir {
    pub fn n_nodes(&self) -> usize {
        self.adjacency.dim()
    }

    pub fn d_in(&self) -> usize {
        self.d_endo + self.d_exo
    }

    /// One update `r ← tanh(A r + W_in x)`.
    pub fn step(&self, r: &[f64], x: &[f64], out: &mut [f64]) {
        self.adjacency.mul_vec_into(r, out);
        for ((o, &c), &w) in out.iter_mut().zip(&self.input.channel).zip(&self.input.weight) {
            *o = (*o + w * x[c]).tanh();
        }
    }

    /// Iterates the update over the columns of `inputs` (`d_in × T`) from
    /// `r0`. The first `washout` returned states are transient.
    pub fn drive(&self, inputs: &DMatrix<f64>, r0: &ReservoirState, washout: usize) -> Result<DrivenStates> {
        let n = self.n_nodes();
        if inputs.nrows() != self.d_in() {
            return Err(Error::Data(format!(
                "inputs have {} channels, reservoir expects {}",
                inputs.nrows(),
                self.d_in()
            )));
        }
        if r0.r.len() != n {
            return Err(Error::Data("initial state has the wrong size".into()));
        }
        if let Some(idx) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                step: idx / inputs.nrows(),
                channel: idx % inputs.nrows(),
            });
        }
        let mut states = DMatrix::zeros(n, inputs.ncols());
        let mut r = r0.r.clone();
        let mut next = vec![0.0; n];
        for t in 0..inputs.ncols() {
            self.step(&r, inputs.column(t).as_slice(), &mut next);
            std::mem::swap(&mut r, &mut next);
            states.column_mut(t).copy_from_slice(&r);
        }
        Ok(DrivenStates { states, washout })
    }

    /// Feeds predictions back as inputs for `horizon` steps. `exo_future`
    /// (`d_exo × ≥horizon`) supplies the known-future channels; column `h`
    /// is the input paired with prediction `h`. Works in model space.
    pub fn run_closed_loop(
        &self,
        readout: &Readout,
        warm: &ReservoirState,
        exo_future: &DMatrix<f64>,
        horizon: usize,
    ) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.d_endo, horizon);
        if horizon == 0 {
            return Ok(out);
        }
        if exo_future.nrows() != self.d_exo || (self.d_exo > 0 && exo_future.ncols() < horizon) {
            return Err(Error::Data(format!(
                "known-future input is {}x{}, need {}x{horizon}",
                exo_future.nrows(),
                exo_future.ncols(),
                self.d_exo
            )));
        }
        if readout.w_out.nrows() != self.d_endo || readout.w_out.ncols() != 2 * self.n_nodes() {
            return Err(Error::Data("readout shape does not match reservoir".into()));
        }
        let mut r = warm.r.clone();
        let mut next = vec![0.0; r.len()];
        let mut x = vec![0.0; self.d_in()];
        for h in 0..horizon {
            let y = &readout.w_out * linalg::augment_quadratic(&r);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { step: h });
            }
            out.column_mut(h).copy_from(&y);
            if h + 1 == horizon {
                break;
            }
            x[..self.d_endo].copy_from_slice(y.as_slice());
            for e in 0..self.d_exo {
                x[self.d_endo + e] = exo_future[(e, h)];
            }
            self.step(&r, &x, &mut next);
            std::mem::swap(&mut r, &mut next);
        }
        Ok(out)
    }
}

/// Ridge regression of `targets` (`d × T`) on augmented states (`2N × T`).
pub fn fit_readout(states: &DMatrix<f64>, targets: &DMatrix<f64>, ridge: f64) -> Result<Readout> {
    Ok(Readout {
        w_out: linalg::ridge_solve(states, targets, ridge)?,
    })
}
