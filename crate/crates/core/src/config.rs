//! Run configuration files (TOML). Every key is optional; unknown keys are
//! rejected by their dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, TapPoint};
use crate::data::{SynthConfig, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::train::{ModelSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `"default"` (ResNet-34 depths) or `"tiny"`.
    pub preset: String,
    pub tap: TapPoint,
    pub mode: Modality,
    pub hidden_units: usize,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "default".into(),
            tap: TapPoint::AvgPool,
            mode: Modality::T1T2,
            hidden_units: 64,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Cohort directory or `cohort.json`; the `--data` flag takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cohort_path: Option<PathBuf>,
    pub split_seed: u64,
    pub split_fraction: f64,
    pub kfolds: usize,
    pub patch_size: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            cohort_path: None,
            split_seed: 0,
            split_fraction: 0.7,
            kfolds: 10,
            patch_size: PATCH_SIZE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub data: DataSection,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        if let Some(key) = unknown_key(&table, &schema(), "") {
            return Err(Error::UnknownConfigKey(key));
        }
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| {
            Err(Error::ConfigValue {
                key: key.into(),
                reason,
            })
        };
        if let Err(e) = BackboneConfig::preset(&self.model.preset) {
            return bad("model.preset", e.to_string());
        }
        if self.model.hidden_units == 0 {
            return bad("model.hidden_units", "must be positive".into());
        }
        self.train.validate()?;
        if !(self.data.split_fraction > 0.0 && self.data.split_fraction < 1.0) {
            return bad("data.split_fraction", format!("{} outside (0, 1)", self.data.split_fraction));
        }
        if self.data.kfolds < 2 {
            return bad("data.kfolds", format!("{} is below 2", self.data.kfolds));
        }
        if self.data.patch_size < 4 {
            return bad("data.patch_size", format!("{} is below 4", self.data.patch_size));
        }
        self.synth.validate().map_err(|e| Error::ConfigValue {
            key: "synth".into(),
            reason: e.to_string(),
        })
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        Ok(ModelSpec {
            backbone: BackboneConfig::preset(&self.model.preset)?,
            tap: self.model.tap,
            modality: self.model.mode,
            hidden_units: self.model.hidden_units,
            patch_extent: self.data.patch_size,
            init_seed: self.model.init_seed,
        })
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_toml(&text)
}

/// Every accepted key, as a fully populated table.
fn schema() -> toml::Table {
    let mut full = RunConfig::default();
    full.data.cohort_path = Some(PathBuf::from("cohort"));
    toml::Table::try_from(&full).expect("RunConfig serialises to a table")
}

fn unknown_key(table: &toml::Table, schema: &toml::Table, prefix: &str) -> Option<String> {
    for (key, value) in table {
        let path = format!("{prefix}{key}");
        match (schema.get(key), value) {
            (None, _) => return Some(path),
            (Some(toml::Value::Table(inner)), toml::Value::Table(given)) => {
                if let Some(k) = unknown_key(given, inner, &format!("{path}.")) {
                    return Some(k);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!((cfg.train.epochs, cfg.train.batch_size, cfg.train.patience), (150, 32, 10));
        assert_eq!((cfg.train.lr, cfg.train.dropout), (1e-4, 0.3));
        assert_eq!((cfg.data.split_fraction, cfg.data.kfolds), (0.7, 10));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("[train]\nlerning_rate = 0.1\n").unwrap_err();
        assert!(matches!(&err, Error::UnknownConfigKey(k) if k == "train.lerning_rate"), "{err}");
        let err = RunConfig::from_toml("[optimiser]\n").unwrap_err();
        assert!(matches!(&err, Error::UnknownConfigKey(k) if k == "optimiser"), "{err}");
    }

    #[test]
    fn invalid_values_and_types() {
        assert!(matches!(RunConfig::from_toml("[train]\nlr = 0.0\n"), Err(Error::ConfigValue { .. })));
        assert!(matches!(RunConfig::from_toml("[train]\ndropout = 1.0\n"), Err(Error::ConfigValue { .. })));
        assert!(matches!(RunConfig::from_toml("[train]\nepochs = \"many\"\n"), Err(Error::ConfigParse(_))));
        assert!(matches!(RunConfig::from_toml("[model]\ntap = \"block9\"\n"), Err(Error::ConfigParse(_))));
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::from_toml("[model]\npreset = \"tiny\"\ntap = \"block2\"\nmode = \"t1\"\n[data]\ncohort_path = \"c\"\n").unwrap();
        assert_eq!(cfg.model.tap, TapPoint::Block2);
        assert_eq!(cfg.model.mode, Modality::T1);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
