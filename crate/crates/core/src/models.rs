//! Model families behind one forecasting interface, looked up by name.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arima::{fit_arima_with, forecast_arima, ArimaFitConfig, ArimaOrder};
use crate::dataset::FeatureGroup;
use crate::ensemble::{fit_predict_input, EnsembleParams};
use crate::error::{Error, Result};
use crate::panel::{ForecastInput, PanelLayout};
use crate::reservoir::EsnParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunContext {
    pub workers: usize,
}

impl Default for RunContext {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

/// Target forecasts of one model at one cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelForecast {
    pub regions: Vec<String>,
    /// regions × horizon
    pub point: DMatrix<f64>,
    pub n_members: Option<usize>,
}

/// One fully specified model configuration.
pub trait Forecaster: Send + Sync {
    fn family(&self) -> &'static str;

    /// Stable identifier used in reports and result files.
    fn config_id(&self) -> String;

    fn forecast(&self, input: &ForecastInput, ctx: &RunContext) -> Result<ModelForecast>;
}

/// Produces configured forecasters of one kind.
pub trait ModelFamily: Send + Sync {
    fn name(&self) -> &'static str;

    /// Configuration used when nothing has been selected yet.
    fn default_model(&self) -> Box<dyn Forecaster>;

    /// Every configuration of the family's grid, in grid order.
    fn grid_models(&self, grid: &GridSpec) -> Vec<Box<dyn Forecaster>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsnForecaster {
    pub params: EnsembleParams,
    pub features: FeatureGroup,
}

impl Forecaster for EsnForecaster {
    fn family(&self) -> &'static str {
        EsnFamily::NAME
    }

    fn config_id(&self) -> String {
        let m = &self.params.member;
        format!(
            "esn:rho={};beta={};s={};features={};diff={}",
            m.spectral_radius, m.ridge, m.input_strength, self.features, m.differencing
        )
    }

    fn forecast(&self, input: &ForecastInput, ctx: &RunContext) -> Result<ModelForecast> {
        let narrowed = ForecastInput {
            history: input.history.select_feature_group(self.features),
            ..input.clone()
        };
        let run = fit_predict_input(&self.params, &narrowed, ctx.workers)?;
        Ok(ModelForecast {
            point: run.median()?,
            n_members: Some(run.members.len()),
            regions: run.regions,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArimaForecaster {
    pub order: ArimaOrder,
    pub fit: ArimaFitConfig,
    pub min_train_days: usize,
}

impl Forecaster for ArimaForecaster {
    fn family(&self) -> &'static str {
        ArimaFamily::NAME
    }

    fn config_id(&self) -> String {
        format!("arima:{}", self.order)
    }

    /// One model per region, fitted on the latest gap-free run of its target.
    fn forecast(&self, input: &ForecastInput, _ctx: &RunContext) -> Result<ModelForecast> {
        let layout = PanelLayout::from_frame(&input.history);
        let h = input.horizon;
        let mut point = DMatrix::zeros(layout.targets.len(), h);
        for (r, (region, _)) in layout.targets.iter().enumerate() {
            let idx = input.history.target_index(region).expect("target present");
            let v = input.history.values(idx);
            let end = v.iter().rposition(|x| !x.is_nan()).map_or(0, |i| i + 1);
            let start = v[..end].iter().rposition(|x| x.is_nan()).map_or(0, |i| i + 1);
            if end - start < self.min_train_days.max(1) {
                return Err(Error::Data(format!(
                    "{region}: {} observed target days before {}, need {}",
                    end - start,
                    input.cutoff,
                    self.min_train_days
                )));
            }
            let series = &v[start..end];
            let model = fit_arima_with(series, self.order, &self.fit)?;
            let f = forecast_arima(&model, series, h)?;
            for (c, x) in f.into_iter().enumerate() {
                point[(r, c)] = x.clamp(0.0, 1.0);
            }
        }
        Ok(ModelForecast {
            regions: layout.regions(),
            point,
            n_members: None,
        })
    }
}

/// Hyperparameter grids of both families. Each grid is the Cartesian
/// product of its lists, enumerated with the first list varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub spectral_radius: Vec<f64>,
    pub ridge: Vec<f64>,
    pub input_strength: Vec<f64>,
    pub features: Vec<FeatureGroup>,
    pub differencing: Vec<bool>,
    pub arima_d: Vec<usize>,
    pub arima_p: Vec<usize>,
    pub arima_q: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            spectral_radius: vec![0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7, 1.9, 2.1],
            ridge: vec![1e-5, 1e-3, 1e-1, 10.0, 100.0],
            input_strength: vec![0.1, 0.3, 0.5, 1.0, 1.5],
            features: FeatureGroup::ALL_GROUPS.to_vec(),
            differencing: vec![true, false],
            arima_d: vec![0, 1],
            arima_p: vec![1, 2, 3, 4],
            arima_q: vec![1, 3, 5, 7, 9],
        }
    }
}

impl GridSpec {
    pub fn esn_size(&self) -> usize {
        self.spectral_radius.len()
            * self.ridge.len()
            * self.input_strength.len()
            * self.features.len()
            * self.differencing.len()
    }

    pub fn arima_orders(&self) -> Vec<ArimaOrder> {
        let mut out = Vec::new();
        for &d in &self.arima_d {
            for &p in &self.arima_p {
                for &q in &self.arima_q {
                    out.push(ArimaOrder::new(p, d, q));
                }
            }
        }
        out
    }
}

/// Keeps at most `max` of `models`, chosen with a seeded RNG; grid order is
/// preserved.
pub fn sample_configs<T>(models: Vec<T>, max: Option<usize>, seed: u64) -> Vec<T> {
    let Some(max) = max else { return models };
    if max >= models.len() {
        return models;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = sample(&mut rng, models.len(), max).into_vec();
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    models
        .into_iter()
        .enumerate()
        .filter_map(|(i, m)| {
            (keep.peek() == Some(&i)).then(|| {
                keep.next();
                m
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsnFamily {
    /// Settings not covered by the grid (members, seed, size, washout).
    pub base: EnsembleParams,
    pub features: FeatureGroup,
}

impl EsnFamily {
    pub const NAME: &'static str = "esn-ensemble";

    pub fn model(&self, member: EsnParams, features: FeatureGroup) -> EsnForecaster {
        EsnForecaster {
            params: EnsembleParams {
                member,
                ..self.base.clone()
            },
            features,
        }
    }
}

impl Default for EsnFamily {
    fn default() -> Self {
        Self {
            base: EnsembleParams::default(),
            features: FeatureGroup::FcsPlus,
        }
    }
}

impl ModelFamily for EsnFamily {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn default_model(&self) -> Box<dyn Forecaster> {
        Box::new(self.model(self.base.member.clone(), self.features))
    }

    fn grid_models(&self, grid: &GridSpec) -> Vec<Box<dyn Forecaster>> {
        let mut out: Vec<Box<dyn Forecaster>> = Vec::with_capacity(grid.esn_size());
        for &rho in &grid.spectral_radius {
            for &beta in &grid.ridge {
                for &s in &grid.input_strength {
                    for &features in &grid.features {
                        for &differencing in &grid.differencing {
                            let member = EsnParams {
                                spectral_radius: rho,
                                ridge: beta,
                                input_strength: s,
                                differencing,
                                ..self.base.member.clone()
                            };
                            out.push(Box::new(self.model(member, features)));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArimaFamily {
    pub order: ArimaOrder,
    pub fit: ArimaFitConfig,
    pub min_train_days: usize,
}

impl ArimaFamily {
    pub const NAME: &'static str = "arima";

    pub fn model(&self, order: ArimaOrder) -> ArimaForecaster {
        ArimaForecaster {
            order,
            fit: self.fit,
            min_train_days: self.min_train_days,
        }
    }
}

impl Default for ArimaFamily {
    fn default() -> Self {
        Self {
            order: ArimaOrder::new(1, 1, 1),
            fit: ArimaFitConfig::default(),
            min_train_days: 365,
        }
    }
}

impl ModelFamily for ArimaFamily {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn default_model(&self) -> Box<dyn Forecaster> {
        Box::new(self.model(self.order))
    }

    fn grid_models(&self, grid: &GridSpec) -> Vec<Box<dyn Forecaster>> {
        grid.arima_orders()
            .into_iter()
            .map(|o| Box::new(self.model(o)) as Box<dyn Forecaster>)
            .collect()
    }
}

/// Model families by name.
#[derive(Default)]
pub struct Registry {
    families: BTreeMap<&'static str, Box<dyn ModelFamily>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the reservoir ensemble and the ARIMA baseline.
    pub fn standard(esn: EsnFamily, arima: ArimaFamily) -> Self {
        let mut r = Self::new();
        r.register(Box::new(esn));
        r.register(Box::new(arima));
        r
    }

    pub fn register(&mut self, family: Box<dyn ModelFamily>) {
        self.families.insert(family.name(), family);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ModelFamily> {
        self.families.get(name).map(|f| f.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown model family `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.families.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grids_have_expected_sizes() {
        let g = GridSpec::default();
        assert_eq!(g.esn_size(), 2500);
        assert_eq!(EsnFamily::default().grid_models(&g).len(), 2500);
        assert_eq!(ArimaFamily::default().grid_models(&g).len(), 40);
        assert_eq!(g.arima_orders(), ArimaOrder::default_grid());
    }

    #[test]
    fn grid_order_is_lexicographic() {
        let g = GridSpec::default();
        let ids: Vec<String> = EsnFamily::default().grid_models(&g).iter().map(|m| m.config_id()).collect();
        assert_eq!(ids[0], "esn:rho=0.3;beta=0.00001;s=0.1;features=FCS;diff=true");
        assert_eq!(ids[1], "esn:rho=0.3;beta=0.00001;s=0.1;features=FCS;diff=false");
        assert_eq!(ids[2499], "esn:rho=2.1;beta=100;s=1.5;features=all;diff=false");
        let unique: std::collections::BTreeSet<_> = ids.iter().collect();
        assert_eq!(unique.len(), 2500);
    }

    #[test]
    fn default_esn_config_matches_fallback() {
        let id = EsnFamily::default().default_model().config_id();
        assert_eq!(id, "esn:rho=0.9;beta=0.1;s=0.5;features=FCSplus;diff=true");
    }

    #[test]
    fn sampling_is_seeded_and_ordered() {
        let a = sample_configs((0..100).collect::<Vec<_>>(), Some(7), 42);
        let b = sample_configs((0..100).collect::<Vec<_>>(), Some(7), 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_configs(vec![1, 2], Some(5), 0), vec![1, 2]);
    }

    #[test]
    fn registry_lookup() {
        let r = Registry::standard(EsnFamily::default(), ArimaFamily::default());
        assert_eq!(r.names(), vec!["arima", "esn-ensemble"]);
        assert!(r.get("esn-ensemble").is_ok());
        assert!(matches!(r.get("lstm"), Err(Error::Config(_))));
    }
}
