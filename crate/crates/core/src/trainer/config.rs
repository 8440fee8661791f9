use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::ExtractorConfig;
use crate::mfcc::CenterConfig;
use crate::sfd::SfdConfig;

/// Which of the two mechanisms are active.
///
/// Ablations are realized by degenerating parameters of the full model:
/// a single center per class with zero margin stands in for a plain cosine
/// softmax classifier, and `lambda2 = 0` removes the discrimination loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Ablation {
    /// Plain single-center classifier, no discrimination loss.
    V1,
    /// Discrimination loss with a single-center classifier.
    V2,
    /// Multi-center classifier without the discrimination loss.
    V3,
    /// Both mechanisms.
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::V1, Ablation::V2, Ablation::V3, Ablation::Full];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::V1 => "V1",
            Ablation::V2 => "V2",
            Ablation::V3 => "V3",
            Ablation::Full => "FULL",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the classifier loss.
    pub lambda1: f64,
    /// Weight of the discrimination loss.
    pub lambda2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub extractor: ExtractorConfig,
    pub sfd: SfdConfig,
    pub centers: CenterConfig,
}

impl Default for TrainConfig {
    /// Desk-scale configuration used by the synthetic benchmark.
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.5,
            batch_size: 30,
            epochs: 60,
            lr0: 0.02,
            decay_factor: 0.5,
            decay_every_epochs: 20,
            warmup_epochs: 3,
            seed: 0,
            ablation: Ablation::Full,
            extractor: ExtractorConfig::default(),
            sfd: SfdConfig::default(),
            centers: CenterConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Hyperparameters as published for the 224-pixel setting.
    pub fn published() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.5,
            batch_size: 32,
            epochs: 100,
            lr0: 0.01,
            decay_factor: 0.5,
            decay_every_epochs: 25,
            warmup_epochs: 5,
            seed: 0,
            ablation: Ablation::Full,
            extractor: ExtractorConfig::published(),
            sfd: SfdConfig { psi: 0.1 },
            centers: CenterConfig { centers_per_class: 10, scale: 16.0, delta: 0.1, global_orthogonal: false },
        }
    }

    /// The full-model configuration this ablation degenerates to.
    pub fn effective(&self) -> TrainConfig {
        let mut c = self.clone();
        let single_center = |c: &mut TrainConfig| {
            c.centers.centers_per_class = 1;
            c.centers.delta = 0.0;
        };
        match self.ablation {
            Ablation::V1 => {
                single_center(&mut c);
                c.lambda2 = 0.0;
            }
            Ablation::V2 => single_center(&mut c),
            Ablation::V3 => c.lambda2 = 0.0,
            Ablation::Full => {}
        }
        c.ablation = Ablation::Full;
        c
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if num_classes < 2 {
            return bad(format!("need at least 2 classes, got {num_classes}"));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} {v} must be finite and non-negative"));
            }
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor {} must lie in (0, 1]", self.decay_factor));
        }
        if self.decay_every_epochs == 0 {
            return bad("decay_every_epochs must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size / num_classes < 2 {
            return bad(format!(
                "batch_size {} gives fewer than 2 samples per class for {num_classes} classes",
                self.batch_size
            ));
        }
        self.extractor.validate()?;
        self.sfd.validate()?;
        self.effective().centers.validate(self.extractor.embed_dim, num_classes)
    }
}
