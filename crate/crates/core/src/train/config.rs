use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, TapPoint};
use crate::error::{Error, Result};
use crate::model::{build_model, HeadConfig, Modality, TwoStreamModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    /// Epochs without a strictly lower validation loss before stopping.
    pub patience: usize,
    pub seed: u64,
    /// When off, the seed is replaced by one drawn from the OS at the start
    /// of each run.
    pub deterministic: bool,
    pub freeze_backbone: bool,
    /// Memorisation check: the validation set may overlap the training set,
    /// augmentation is disabled and training ends at the first epoch with a
    /// validation F1 of 1.0.
    pub overfit_probe: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            lr: 1e-4,
            batch_size: 32,
            dropout: 0.3,
            patience: 10,
            seed: 0,
            deterministic: true,
            freeze_backbone: false,
            overfit_probe: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| {
            Err(Error::ConfigValue {
                key: format!("train.{key}"),
                reason,
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("{} must be positive and finite", self.lr));
        }
        if self.batch_size < 2 {
            return bad("batch_size", format!("{} is below 2; head batch norm needs two samples", self.batch_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("{} outside [0, 1)", self.dropout));
        }
        if self.patience >= self.epochs {
            return bad(
                "patience",
                format!("{} must be smaller than epochs ({})", self.patience, self.epochs),
            );
        }
        Ok(())
    }

    /// The seed a run actually uses.
    pub fn effective_seed(&self) -> u64 {
        if self.deterministic {
            self.seed
        } else {
            rand::random()
        }
    }
}

/// Everything needed to build a fresh, untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneConfig,
    pub tap: TapPoint,
    pub modality: Modality,
    pub hidden_units: usize,
    pub patch_extent: usize,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn tiny(tap: TapPoint, modality: Modality) -> Self {
        Self {
            backbone: BackboneConfig::tiny(),
            tap,
            modality,
            hidden_units: 64,
            patch_extent: crate::model::PATCH_EXTENT,
            init_seed: 0,
        }
    }

    pub fn with_tap(&self, tap: TapPoint) -> Self {
        Self { tap, ..self.clone() }
    }

    pub fn with_modality(&self, modality: Modality) -> Self {
        Self {
            modality,
            ..self.clone()
        }
    }

    pub fn head_config(&self, dropout: f64) -> Result<HeadConfig> {
        let mut head = HeadConfig::for_tap(&self.backbone, self.tap, self.modality.stream_mode(), self.patch_extent)?;
        head.hidden_units = self.hidden_units;
        head.dropout_rate = dropout;
        Ok(head)
    }

    pub fn build(&self, dropout: f64) -> Result<TwoStreamModel<f32>> {
        self.backbone.validate()?;
        build_model(
            &self.backbone,
            self.tap,
            &self.head_config(dropout)?,
            self.modality.stream_mode(),
            self.patch_extent,
            self.init_seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_values() {
        let cases = [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { dropout: 1.0, ..Default::default() },
            TrainConfig { patience: 150, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(Error::ConfigValue { .. })), "{c:?}");
        }
    }
}
