use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shiprec::data::SynthConfig;
use shiprec::trainer::TrainConfig;

use crate::failure::Failure;

/// Everything one experiment needs besides the data location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Generator settings, used with `--synth` and by `gen-data`.
    pub synth: SynthConfig,
    /// Held-out samples per class generated next to the synthetic training set.
    pub test_per_class: usize,
    /// Resample-augment the training set to this many samples per class; 0 disables.
    pub augment_per_class: usize,
    /// Training seeds for `ablate`.
    pub ablation_seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            test_per_class: 100,
            augment_per_class: 200,
            ablation_seeds: vec![0, 1, 2],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<(), Failure> {
        self.synth.validate().map_err(Failure::from)?;
        self.train.validate(self.synth.num_classes).map_err(Failure::from)?;
        if self.test_per_class == 0 {
            return Err(Failure::config("test_per_class must be positive"));
        }
        if self.ablation_seeds.is_empty() {
            return Err(Failure::config("ablation_seeds is empty"));
        }
        if self.synth.image_size != self.train.extractor.input_size {
            return Err(Failure::config(format!(
                "synth.image_size {} differs from train.extractor.input_size {}",
                self.synth.image_size, self.train.extractor.input_size
            )));
        }
        Ok(())
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical (sorted-key, compact) JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_value().to_string().as_bytes()))
    }
}
