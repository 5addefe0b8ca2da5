use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataKind, MinoritySpec};
use crate::error::{Error, Result};
use crate::losses::{AdvVariant, LossWeights};
use crate::models::{Backbone, FeatureKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// DCGAN for images, MLP for point sets.
    Auto,
    Mlp,
    Dcgan,
}

/// Every knob of a training run. Serialises to a flat `key = value` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub rematch_period: usize,
    pub pool_multiplier: usize,
    pub perturb_sigma: f32,
    /// Reconstruction weight; the feature space's default when unset.
    pub lambda: Option<f32>,
    /// Interpolation weight; `0.4 * lambda` when unset.
    pub beta: Option<f32>,
    pub learning_rate: f32,
    pub b1: f32,
    pub b2: f32,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub feature: FeatureKind,
    /// Attribute conjunction such as `row_0=1,col_0=1`; targets every sample when unset.
    pub minority: Option<String>,
    pub seed: u64,
    pub adv_variant: AdvVariant,
    pub backbone: BackboneKind,
    pub width: usize,
    pub depth: usize,
    /// Reconstruction pairs per step; half the batch when unset.
    pub pairs_per_step: Option<usize>,
    /// Epochs between checkpoints; the rematch period when unset.
    pub checkpoint_every: Option<usize>,
    pub perceptual_widths: Vec<usize>,
    pub extractor_seed: u64,
    pub embedding_bank_per_class: usize,
    /// Stop after this many optimisation steps in total.
    pub max_steps: Option<u64>,
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            rematch_period: 20,
            pool_multiplier: 10,
            perturb_sigma: 0.05,
            lambda: None,
            beta: None,
            learning_rate: 0.002,
            b1: 0.0,
            b2: 0.99,
            batch_size: 64,
            latent_dim: 32,
            feature: FeatureKind::Pixel,
            minority: None,
            seed: 0,
            adv_variant: AdvVariant::NonSaturating,
            backbone: BackboneKind::Auto,
            width: 32,
            depth: 3,
            pairs_per_step: None,
            checkpoint_every: None,
            perceptual_widths: vec![16, 32],
            extractor_seed: 7,
            embedding_bank_per_class: 500,
            max_steps: None,
            divergence_patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.rematch_period == 0 {
            return bad("rematch_period must be at least 1".into());
        }
        if self.pool_multiplier == 0 {
            return bad("pool_multiplier must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.b1) || !(0.0..1.0).contains(&self.b2) {
            return bad("b1 and b2 must lie in [0, 1)".into());
        }
        if self.batch_size == 0 || self.latent_dim == 0 || self.width == 0 {
            return bad("batch_size, latent_dim and width must be positive".into());
        }
        if !(self.perturb_sigma >= 0.0 && self.perturb_sigma.is_finite()) {
            return bad(format!("perturb_sigma must be non-negative, got {}", self.perturb_sigma));
        }
        if self.checkpoint_every == Some(0) || self.divergence_patience == 0 {
            return bad("checkpoint_every and divergence_patience must be positive".into());
        }
        if self.pairs_per_step == Some(0) {
            return bad("pairs_per_step must be positive".into());
        }
        if let Some(m) = &self.minority {
            MinoritySpec::parse(m)?;
        }
        self.weights()?;
        Ok(())
    }

    pub fn weights(&self) -> Result<LossWeights> {
        let lambda = self.lambda.unwrap_or_else(|| self.feature.default_lambda());
        LossWeights::new(lambda, self.beta.unwrap_or(LossWeights::ITP_RATIO * lambda))
    }

    pub fn minority_spec(&self) -> Result<Option<MinoritySpec>> {
        self.minority.as_deref().map(MinoritySpec::parse).transpose()
    }

    pub fn pairs(&self) -> usize {
        self.pairs_per_step.unwrap_or((self.batch_size / 2).max(1))
    }

    pub fn checkpoint_period(&self) -> usize {
        self.checkpoint_every.unwrap_or(self.rematch_period)
    }

    pub fn backbone_for(&self, kind: DataKind) -> Backbone {
        let mlp = Backbone::Mlp { hidden: self.width, depth: self.depth };
        match (self.backbone, kind) {
            (BackboneKind::Mlp, _) | (BackboneKind::Auto, DataKind::Points) => mlp,
            (BackboneKind::Dcgan, _) | (BackboneKind::Auto, DataKind::Images) => Backbone::Dcgan { base: self.width },
        }
    }
}
