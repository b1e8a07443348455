use serde::{Deserialize, Serialize};

use crate::diffcore::AdamConfig;
use crate::model::{IemKind, ModelConfig, ModelVariant, ScoringInput};
use crate::stm::SearchOptions;
use crate::{Error, Result};

/// Everything one training run depends on besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Maximum click-history length.
    pub n: usize,
    /// Exposure-context capacity per click.
    pub l: usize,
    /// Embedding width per field.
    pub d: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub variant: ModelVariant,
    pub iem_kind: IemKind,
    pub per_side: bool,
    pub past_only: bool,
    pub scoring: ScoringInput,
    pub scorer_hidden: [usize; 2],
    pub head_hidden: [usize; 2],
    /// Prefix samples drawn per user for training.
    pub samples_per_user: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 30,
            l: 10,
            d: 16,
            learning_rate: 0.005,
            batch_size: 256,
            epochs: 3,
            seed: 0,
            variant: ModelVariant::Full,
            iem_kind: IemKind::TargetAttention,
            per_side: false,
            past_only: false,
            scoring: ScoringInput::Interaction,
            scorer_hidden: [36, 16],
            head_hidden: [64, 32],
            samples_per_user: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("n", self.n),
            ("l", self.l),
            ("d", self.d),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("samples_per_user", self.samples_per_user),
            ("scorer_hidden[0]", self.scorer_hidden[0]),
            ("scorer_hidden[1]", self.scorer_hidden[1]),
            ("head_hidden[0]", self.head_hidden[0]),
            ("head_hidden[1]", self.head_hidden[1]),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            per_side: self.per_side,
            past_only: self.past_only,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn model_config(&self, num_items: usize, num_categories: usize, dense_dim: Option<usize>) -> ModelConfig {
        ModelConfig {
            dense_dim,
            variant: self.variant,
            iem_kind: self.iem_kind,
            scoring: self.scoring,
            scorer_hidden: self.scorer_hidden,
            head_hidden: self.head_hidden,
            ..ModelConfig::new(self.d, num_items, num_categories)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parameters of the synthetic impression-log generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_categories: usize,
    pub latent_dim: usize,
    pub events_per_user: usize,
    /// Fraction of each user's events that are unclicked impressions.
    pub exposure_rate: f64,
    /// Softmax temperature of user-to-category affinity; higher is flatter.
    pub click_temperature: f64,
    /// Probability that the impressions following a click preview the
    /// category of the user's next click. Zero plants nothing.
    pub context_signal_strength: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 500,
            num_items: 1000,
            num_categories: 20,
            latent_dim: 8,
            events_per_user: 50,
            exposure_rate: 0.8,
            click_temperature: 0.5,
            context_signal_strength: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 || self.num_categories == 0 || self.latent_dim == 0 {
            return Err(Error::Config("synthetic sizes must be positive".into()));
        }
        if self.num_items < self.num_categories {
            return Err(Error::Config("need at least one item per category".into()));
        }
        if self.events_per_user < 3 {
            return Err(Error::Config("events_per_user must be at least 3".into()));
        }
        if !(0.0..1.0).contains(&self.exposure_rate) {
            return Err(Error::Config("exposure_rate must lie in [0, 1)".into()));
        }
        if !(self.click_temperature > 0.0 && self.click_temperature.is_finite()) {
            return Err(Error::Config("click_temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.context_signal_strength) {
            return Err(Error::Config("context_signal_strength must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
