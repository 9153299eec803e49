use crate::error::{Error, Result};

/// First differences: `out[t] = series[t + 1] - series[t]`.
pub fn difference(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::Data(format!(
            "differencing needs at least 2 values, got {}",
            series.len()
        )));
    }
    Ok(series.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Inverse of [`difference`]: cumulative sums prefixed by `x0`.
pub fn integrate(diffs: &[f64], x0: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(diffs.len() + 1);
    out.push(x0);
    let mut acc = x0;
    for d in diffs {
        acc += d;
        out.push(acc);
    }
    out
}
