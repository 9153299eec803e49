use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Scaling;

/// Per-channel affine map onto `[-1, 1]`, fitted on a training block.
/// Constant channels map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScaler {
    pub mode: Scaling,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ChannelScaler {
    /// Fits on the rows of `data` (channels × time).
    pub fn fit(data: &DMatrix<f64>, mode: Scaling) -> Self {
        let (mut min, mut max) = (Vec::new(), Vec::new());
        for row in data.row_iter() {
            min.push(row.iter().copied().fold(f64::INFINITY, f64::min));
            max.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        Self { mode, min, max }
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    fn forward_one(&self, c: usize, x: f64) -> f64 {
        match self.mode {
            Scaling::None => x,
            Scaling::MinMaxSymmetric => {
                let span = self.max[c] - self.min[c];
                if span > 0.0 {
                    2.0 * (x - self.min[c]) / span - 1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn inverse_one(&self, c: usize, z: f64) -> f64 {
        match self.mode {
            Scaling::None => z,
            Scaling::MinMaxSymmetric => {
                let span = self.max[c] - self.min[c];
                if span > 0.0 {
                    (z + 1.0) * span / 2.0 + self.min[c]
                } else {
                    self.min[c]
                }
            }
        }
    }

    pub fn transform(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| self.forward_one(i, data[(i, j)]))
    }

    pub fn inverse(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| self.inverse_one(i, data[(i, j)]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_training_range_to_unit_interval() {
        let d = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]);
        let s = ChannelScaler::fit(&d, Scaling::MinMaxSymmetric);
        let z = s.transform(&d);
        assert_eq!(z.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert!(z.row(1).iter().all(|v| *v == 0.0));
        let back = s.inverse(&z);
        assert!((back - d).amax() < 1e-15);
    }

    #[test]
    fn none_is_identity() {
        let d = DMatrix::from_row_slice(1, 2, &[7.0, -3.0]);
        let s = ChannelScaler::fit(&d, Scaling::None);
        assert_eq!(s.transform(&d), d);
    }
}
