use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use rcast_core::arima::{ArimaFitConfig, ArimaOrder};
use rcast_core::dataset::{ColumnMapping, FeatureGroup, PreprocessConfig};
use rcast_core::ensemble::{BandConfig, EnsembleParams};
use rcast_core::models::{ArimaFamily, EsnFamily, GridSpec, Registry};
use rcast_core::{Error, Result};

/// Everything a run depends on. Command-line flags override the matching
/// fields after the file is read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub horizon: usize,
    pub out: PathBuf,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub forecast: ForecastConfig,
    pub bands: BandConfig,
    pub splits: SplitConfig,
    pub grid: GridConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            horizon: 60,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            forecast: ForecastConfig::default(),
            bands: BandConfig::default(),
            splits: SplitConfig::default(),
            grid: GridConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Long-format observations, read and preprocessed on every run.
    pub csv: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub columns: ColumnMapping,
    /// Preprocessed frame written by `ingest`; used instead of `csv` when set.
    pub frame: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: String,
    pub features: FeatureGroup,
    pub ensemble: EnsembleParams,
    pub arima: ArimaSettings,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: EsnFamily::NAME.into(),
            features: FeatureGroup::FcsPlus,
            ensemble: EnsembleParams::default(),
            arima: ArimaSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArimaSettings {
    pub order: ArimaOrder,
    pub min_train_days: usize,
    pub fit: ArimaFitConfig,
}

impl Default for ArimaSettings {
    fn default() -> Self {
        let f = ArimaFamily::default();
        Self {
            order: f.order,
            min_train_days: f.min_train_days,
            fit: f.fit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Forecast origin; defaults to the day after the last observed target
    /// value.
    pub cutoff: Option<NaiveDate>,
    /// Confidence bands for the reservoir ensemble.
    pub bands: bool,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            cutoff: None,
            bands: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub first_cutoff: Option<NaiveDate>,
    pub n_splits: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub families: Vec<String>,
    pub max_configs: Option<usize>,
    pub space: GridSpec,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            families: vec![EsnFamily::NAME.into()],
            max_configs: None,
            space: GridSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1, 10, 20, 30, 100],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.preprocess.validate()?;
        self.model.ensemble.validate()?;
        self.model.arima.order.validate()?;
        self.registry().get(&self.model.family)?;
        Ok(())
    }

    /// Ensemble settings with the run seed applied.
    pub fn ensemble(&self) -> EnsembleParams {
        EnsembleParams {
            base_seed: self.seed,
            ..self.model.ensemble.clone()
        }
    }

    pub fn esn_family(&self) -> EsnFamily {
        EsnFamily {
            base: self.ensemble(),
            features: self.model.features,
        }
    }

    pub fn arima_family(&self) -> ArimaFamily {
        ArimaFamily {
            order: self.model.arima.order,
            fit: self.model.arima.fit,
            min_train_days: self.model.arima.min_train_days,
        }
    }

    pub fn registry(&self) -> Registry {
        Registry::standard(self.esn_family(), self.arima_family())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml_str(
            r#"
            seed = 7
            [model]
            family = "arima"
            [model.arima.order]
            p = 2
            d = 1
            q = 1
            [model.ensemble.member]
            n_nodes = 50
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.arima.order, ArimaOrder::new(2, 1, 1));
        assert_eq!(cfg.model.ensemble.member.n_nodes, 50);
        assert_eq!(cfg.model.ensemble.n_members, 100);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_families_rejected() {
        assert!(RunConfig::from_toml_str("sed = 1").is_err());
        assert!(RunConfig::from_toml_str("[grid.space]\nrho = [0.5]").is_err());
        assert!(RunConfig::from_toml_str("[bands]\nsplits = 3").is_err());
        let cfg = RunConfig::from_toml_str("[grid]\nmax_configs = 4\n[grid.space]\nspectral_radius = [0.5]").unwrap();
        assert_eq!(cfg.grid.space.spectral_radius, vec![0.5]);
        let cfg = RunConfig::from_toml_str("[model]\nfamily = \"lstm\"").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
