use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{default_embedding_dim, ScoreKind};
use crate::pipeline::CALENDAR_FEATURES;

/// Past-only measurements fed to the encoder next to demand history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedInput {
    /// Observed departures from the surface feed.
    Swim,
}

/// Architecture of a seq2seq forecaster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Past steps `p`.
    pub n_lag: usize,
    /// Future steps `τ_max`.
    pub n_look_ahead: usize,
    pub hidden_dim: usize,
    /// Embedding width per calendar feature, in hour/qtr/day_of_week/month
    /// order.
    pub embedding_dims: Vec<usize>,
    pub use_attention: bool,
    #[serde(default)]
    pub attention_kind: ScoreKind,
    #[serde(default)]
    pub observed_inputs: Vec<ObservedInput>,
}

impl ModelConfig {
    pub fn new(n_lag: usize, n_look_ahead: usize, hidden_dim: usize, use_attention: bool) -> Self {
        Self {
            n_lag,
            n_look_ahead,
            hidden_dim,
            embedding_dims: CALENDAR_FEATURES.iter().map(|(_, c)| default_embedding_dim(*c)).collect(),
            use_attention,
            attention_kind: ScoreKind::General,
            observed_inputs: Vec::new(),
        }
    }

    pub fn with_swim(mut self) -> Self {
        if !self.uses_swim() {
            self.observed_inputs.push(ObservedInput::Swim);
        }
        self
    }

    pub fn uses_swim(&self) -> bool {
        self.observed_inputs.contains(&ObservedInput::Swim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_lag == 0 || self.n_look_ahead == 0 || self.hidden_dim == 0 {
            return Err(Error::contract("n_lag, n_look_ahead and hidden_dim must be ≥ 1"));
        }
        if self.embedding_dims.len() != CALENDAR_FEATURES.len() || self.embedding_dims.contains(&0) {
            return Err(Error::contract(format!("embedding_dims needs {} positive widths", CALENDAR_FEATURES.len())));
        }
        Ok(())
    }

    /// Encoder input width: normalised demand plus observed inputs.
    pub fn encoder_input_dim(&self) -> usize {
        1 + self.observed_inputs.len()
    }

    /// Decoder input width: previous output plus calendar embeddings.
    pub fn decoder_input_dim(&self) -> usize {
        1 + self.embedding_dims.iter().sum::<usize>()
    }
}

/// Optimisation settings. Missing fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Probability of feeding the true previous target to each decoder step.
    pub teacher_forcing: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 32, learning_rate: 1e-3, clip_norm: 5.0, teacher_forcing: 0.5, seed: 0 }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("epochs and batch_size must be ≥ 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::contract("learning_rate must be finite and ≥ 0"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::contract("clip_norm must be positive"));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return Err(Error::contract("teacher_forcing must lie in [0, 1]"));
        }
        Ok(())
    }
}
