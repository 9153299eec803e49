//! ARIMA(p, d, q) baseline estimated by the Hannan–Rissanen procedure.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{difference, integrate};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub const fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d > 1 {
            return Err(Error::Config(format!("differencing order d must be 0 or 1, got {}", self.d)));
        }
        Ok(())
    }

    /// Orders searched by default: `d ∈ {0,1}`, `p ∈ {1..4}`, `q ∈ {1,3,5,7,9}`.
    pub fn default_grid() -> Vec<ArimaOrder> {
        let mut out = Vec::new();
        for d in [0, 1] {
            for p in [1, 2, 3, 4] {
                for q in [1, 3, 5, 7, 9] {
                    out.push(ArimaOrder::new(p, d, q));
                }
            }
        }
        out
    }
}

impl fmt::Display for ArimaOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.p, self.d, self.q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub order: ArimaOrder,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub intercept: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArimaFitConfig {
    /// Required differenced length per estimated lag coefficient.
    pub min_obs_per_coef: usize,
    pub max_long_ar: usize,
}

impl Default for ArimaFitConfig {
    fn default() -> Self {
        Self {
            min_obs_per_coef: 10,
            max_long_ar: 20,
        }
    }
}

fn difference_n(series: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut z = series.to_vec();
    for _ in 0..d {
        z = difference(&z)?;
    }
    Ok(z)
}

/// Least squares `y ≈ X b`, rejecting rank-deficient designs.
fn least_squares(x: DMatrix<f64>, y: DVector<f64>) -> Result<DVector<f64>> {
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Singular(
            "ARIMA regression is rank deficient; try a smaller order".into(),
        ));
    }
    svd.solve(&y, 0.0).map_err(|e| Error::Numerical(e.to_string()))
}

/// Regresses `z[t]` on `[1, z[t-1..t-p], e[t-1..t-q]]` for `t >= start`.
fn arma_regression(z: &[f64], e: &[f64], p: usize, q: usize, start: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let rows = z.len().saturating_sub(start);
    let cols = 1 + p + q;
    if rows <= cols {
        return Err(Error::Data(format!(
            "{rows} usable observations for {cols} ARMA coefficients"
        )));
    }
    let x = DMatrix::from_fn(rows, cols, |r, c| {
        let t = start + r;
        match c {
            0 => 1.0,
            c if c <= p => z[t - c],
            c => e[t - (c - p)],
        }
    });
    let y = DVector::from_fn(rows, |r, _| z[start + r]);
    let b = least_squares(x, y)?;
    Ok((b[0], b.rows(1, p).iter().copied().collect(), b.rows(1 + p, q).iter().copied().collect()))
}

impl ArimaModel {
    /// One-step innovations of `z` under the model. Entries before
    /// `max(p, q)` are zero.
    fn innovations(&self, z: &[f64]) -> Vec<f64> {
        let (p, q) = (self.order.p, self.order.q);
        let start = p.max(q);
        let mut e = vec![0.0; z.len()];
        for t in start..z.len() {
            let mut pred = self.intercept;
            for (i, phi) in self.ar.iter().enumerate() {
                pred += phi * z[t - 1 - i];
            }
            for (j, theta) in self.ma.iter().enumerate() {
                pred += theta * e[t - 1 - j];
            }
            e[t] = z[t] - pred;
        }
        e
    }

    /// Long-run mean of the differenced process (`None` if the AR part has a unit root).
    pub fn process_mean(&self) -> Option<f64> {
        let s: f64 = self.ar.iter().sum();
        ((1.0 - s).abs() > 1e-12).then(|| self.intercept / (1.0 - s))
    }
}

/// Fits an ARIMA model by Hannan–Rissanen: a long autoregression supplies
/// innovation estimates, the ARMA regression is solved by least squares,
/// and one refinement pass re-estimates it with innovations recomputed from
/// the fitted model.
pub fn fit_arima(series: &[f64], order: ArimaOrder) -> Result<ArimaModel> {
    fit_arima_with(series, order, &ArimaFitConfig::default())
}

pub fn fit_arima_with(series: &[f64], order: ArimaOrder, cfg: &ArimaFitConfig) -> Result<ArimaModel> {
    order.validate()?;
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("ARIMA input contains missing or non-finite values".into()));
    }
    if series.len() <= order.d {
        return Err(Error::Data("series shorter than the differencing order".into()));
    }
    let z = difference_n(series, order.d)?;
    let (p, q) = (order.p, order.q);
    let n = z.len();
    let needed = (cfg.min_obs_per_coef * (p + q)).max(p + q + 3);
    if n < needed {
        return Err(Error::Data(format!(
            "ARIMA{order} needs at least {needed} differenced observations, got {n}"
        )));
    }

    let mut model = if q == 0 {
        let (c, ar, _) = arma_regression(&z, &[], p, 0, p)?;
        ArimaModel {
            order,
            ar,
            ma: Vec::new(),
            intercept: c,
            sigma2: 0.0,
        }
    } else {
        let m = (n / 4).min(cfg.max_long_ar).max(p.max(q)).max(1);
        let (c_long, a_long, _) = arma_regression(&z, &[], m, 0, m)?;
        let mut e = vec![0.0; n];
        for t in m..n {
            let mut pred = c_long;
            for (i, a) in a_long.iter().enumerate() {
                pred += a * z[t - 1 - i];
            }
            e[t] = z[t] - pred;
        }
        let (c, ar, ma) = arma_regression(&z, &e, p, q, p.max(m + q))?;
        let first = ArimaModel {
            order,
            ar,
            ma,
            intercept: c,
            sigma2: 0.0,
        };
        let scale = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        let bounded = |m: &ArimaModel| m.innovations(&z).iter().all(|v| v.is_finite() && v.abs() < 1e6 * scale);
        let refined = bounded(&first)
            .then(|| arma_regression(&z, &first.innovations(&z), p, q, p.max(q)).ok())
            .flatten()
            .map(|(c, ar, ma)| ArimaModel {
                order,
                ar,
                ma,
                intercept: c,
                sigma2: 0.0,
            });
        match refined {
            Some(m) if bounded(&m) => m,
            _ => {
                // Non-invertible MA part: damp θ_j by λ^j, which scales the MA
                // roots outward, until the innovations stay bounded.
                let mut m = first;
                for _ in 0..60 {
                    if bounded(&m) {
                        break;
                    }
                    for (j, theta) in m.ma.iter_mut().enumerate() {
                        *theta *= 0.9f64.powi(j as i32 + 1);
                    }
                }
                m
            }
        }
    };
    let e = model.innovations(&z);
    let start = p.max(q);
    let used = &e[start..];
    model.sigma2 = used.iter().map(|v| v * v).sum::<f64>() / used.len() as f64;
    if !model.sigma2.is_finite() || model.ar.iter().chain(&model.ma).any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("ARIMA{order} estimation produced non-finite values")));
    }
    Ok(model)
}

/// Iterates the ARMA recursion past the end of `history` with future
/// innovations set to zero, then undoes the differencing.
pub fn forecast_arima(model: &ArimaModel, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Ok(Vec::new());
    }
    let (p, q, d) = (model.order.p, model.order.q, model.order.d);
    if history.len() < p.max(q) + d || history.len() <= d {
        return Err(Error::Data(format!(
            "history of {} values is too short for ARIMA{}",
            history.len(),
            model.order
        )));
    }
    if history.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("ARIMA history contains missing values".into()));
    }
    let mut z = difference_n(history, d)?;
    let mut e = model.innovations(&z);
    let n = z.len();
    for t in n..n + horizon {
        let mut pred = model.intercept;
        for (i, phi) in model.ar.iter().enumerate() {
            if t > i {
                pred += phi * z[t - 1 - i];
            }
        }
        for (j, theta) in model.ma.iter().enumerate() {
            if t > j {
                pred += theta * e[t - 1 - j];
            }
        }
        z.push(pred);
        e.push(0.0);
    }
    let future = &z[n..];
    let out = if d == 1 {
        integrate(future, history[history.len() - 1])[1..].to_vec()
    } else {
        future.to_vec()
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { step: 0 });
    }
    Ok(out)
}
