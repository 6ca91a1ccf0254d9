//! LSTM encoder–decoder forecasters, their training loop and model files.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

mod config;
mod optim;
mod persist;
mod seq2seq;
mod train;

pub use config::{ModelConfig, ObservedInput, TrainingConfig};
pub use optim::{clip_grad_norm, Adam};
pub use persist::{load_model, model_from_bytes, model_to_bytes, save_model, AnyModel, FORMAT_VERSION};
pub use seq2seq::{BoundModel, Encoded, EncodedWindow, ModelScalers, Seq2SeqModel};
pub use train::{train, train_step, TrainingHistory};

/// Forecaster families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lr,
    Ar,
    #[serde(rename = "seq2seq")]
    Seq2Seq,
    #[serde(rename = "seq2seq_attention")]
    Seq2SeqAttention,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Lr, ModelKind::Ar, ModelKind::Seq2Seq, ModelKind::Seq2SeqAttention];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Ar => "ar",
            ModelKind::Seq2Seq => "seq2seq",
            ModelKind::Seq2SeqAttention => "seq2seq_attention",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, ModelKind::Seq2Seq | ModelKind::Seq2SeqAttention)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model kind '{s}' (expected lr, ar, seq2seq or seq2seq_attention)"))
    }
}
