//! Seeded synthetic panels for tests, demos and benchmarks.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Metadata, SeriesKey, TimeSeriesFrame};
use crate::error::Result;

/// Target = `base + amplitude·sin(2πt/period) + shift·exo_t + noise`, where
/// `exo` is a known-future square wave switching every `half_period` days.
#[derive(Debug, Clone, PartialEq)]
pub struct SineFixture {
    pub start: NaiveDate,
    pub days: usize,
    pub regions: Vec<String>,
    pub base: f64,
    pub amplitude: f64,
    pub period: f64,
    /// Noise standard deviation as a fraction of `amplitude`.
    pub noise_fraction: f64,
    pub shift: f64,
    pub half_period: usize,
    pub seed: u64,
}

impl Default for SineFixture {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            days: 3 * 365,
            regions: vec!["north".into()],
            base: 0.5,
            amplitude: 0.2,
            period: 365.0,
            noise_fraction: 0.05,
            shift: 0.1,
            half_period: 30,
            seed: 0,
        }
    }
}

pub const TARGET: &str = "fcs";
pub const EXO: &str = "calendar_shift";

impl SineFixture {
    pub fn dates(&self) -> Vec<NaiveDate> {
        (0..self.days).map(|i| self.start + Duration::days(i as i64)).collect()
    }

    pub fn exo(&self) -> Vec<f64> {
        (0..self.days).map(|t| ((t / self.half_period) % 2) as f64).collect()
    }

    /// Noise-free target of region `r` (regions are phase-shifted).
    pub fn clean(&self, r: usize) -> Vec<f64> {
        let exo = self.exo();
        let phase = r as f64 * 0.7;
        (0..self.days)
            .map(|t| {
                let w = 2.0 * std::f64::consts::PI * t as f64 / self.period + phase;
                self.base + self.amplitude * w.sin() + self.shift * exo[t]
            })
            .collect()
    }

    pub fn frame(&self) -> Result<TimeSeriesFrame> {
        let noise = Normal::new(0.0, self.noise_fraction * self.amplitude).expect("valid sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut series = Vec::new();
        for (r, region) in self.regions.iter().enumerate() {
            let y = self.clean(r).into_iter().map(|v| v + noise.sample(&mut rng)).collect();
            series.push((SeriesKey::new(region.clone(), TARGET), y));
            series.push((SeriesKey::new(region.clone(), EXO), self.exo()));
        }
        let meta = Metadata::default().resolve([TARGET, EXO])?;
        TimeSeriesFrame::new(self.dates(), series, meta)
    }

    /// Long-format CSV (`date,region,feature,value`) of [`frame`](Self::frame).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let frame = self.frame()?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "region", "feature", "value"])?;
        for (i, key) in frame.keys().iter().enumerate() {
            for (d, v) in frame.dates().iter().zip(frame.values(i)) {
                w.write_record([d.to_string(), key.region.clone(), key.feature.clone(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Role;

    #[test]
    fn fixture_layout() {
        let f = SineFixture::default().frame().unwrap();
        assert_eq!(f.n_dates(), 1095);
        assert_eq!(f.target_feature(), TARGET);
        let exo = f.index_of(&SeriesKey::new("north", EXO)).unwrap();
        assert_eq!(f.role(exo), Role::ExogenousKnownFuture);
        assert_eq!(SineFixture::default().frame().unwrap(), f);
    }
}
