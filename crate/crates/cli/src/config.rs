use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flightcast_core::layers::{default_embedding_dim, ScoreKind};
use flightcast_core::models::{ModelConfig, ModelKind, ObservedInput, TrainingConfig};
use flightcast_core::pipeline::{SplitSpec, CALENDAR_FEATURES};
use serde::{Deserialize, Serialize};

/// Which feeds the data source provides.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataMode {
    /// Demand history only.
    #[default]
    #[serde(rename = "aspm")]
    Aspm,
    /// Demand history plus observed swim departures.
    #[serde(rename = "aspm+swim", alias = "aspm_swim")]
    AspmSwim,
}

impl DataMode {
    pub fn label(self) -> &'static str {
        match self {
            DataMode::Aspm => "ASPM",
            DataMode::AspmSwim => "ASPM+SWIM",
        }
    }
}

/// Input and output locations. Relative paths resolve against the config
/// file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub forecasts: Option<PathBuf>,
    pub loss: Option<PathBuf>,
}

fn default_kind() -> ModelKind {
    ModelKind::Seq2SeqAttention
}
fn default_n_lag() -> usize {
    10
}
fn default_n_look_ahead() -> usize {
    124
}
fn default_hidden() -> usize {
    64
}
fn default_ar_order() -> usize {
    96
}
fn default_true() -> bool {
    true
}
fn default_stride() -> usize {
    1
}

/// Everything one training or evaluation run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub mode: DataMode,
    #[serde(default = "default_kind")]
    pub kind: ModelKind,
    #[serde(default = "default_n_lag")]
    pub n_lag: usize,
    #[serde(default = "default_n_look_ahead")]
    pub n_look_ahead: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    /// Calendar embedding widths (hour, qtr, day_of_week, month).
    #[serde(default)]
    pub embedding_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub attention_kind: ScoreKind,
    /// Defaults to `[swim]` in aspm+swim mode and `[]` otherwise.
    #[serde(default)]
    pub observed_inputs: Option<Vec<ObservedInput>>,
    /// Lag order of the autoregressive baseline.
    #[serde(default = "default_ar_order")]
    pub ar_order: usize,
    /// Whether the linear baseline sees calendar one-hots.
    #[serde(default = "default_true")]
    pub lr_calendar: bool,
    #[serde(default)]
    pub training: TrainingConfig,
    /// Keep every `train_stride`-th training window.
    #[serde(default = "default_stride")]
    pub train_stride: usize,
    #[serde(default = "SplitSpec::year_2019_jan_2020")]
    pub split: SplitSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.data,
            &mut cfg.paths.model,
            &mut cfg.paths.report,
            &mut cfg.paths.forecasts,
            &mut cfg.paths.loss,
        ] {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    pub fn observed_inputs(&self) -> Vec<ObservedInput> {
        match (&self.observed_inputs, self.mode) {
            (Some(v), _) => v.clone(),
            (None, DataMode::AspmSwim) => vec![ObservedInput::Swim],
            (None, DataMode::Aspm) => Vec::new(),
        }
    }

    pub fn uses_swim(&self) -> bool {
        self.observed_inputs().contains(&ObservedInput::Swim)
    }

    /// Checks cross-field rules; every failure here is a configuration error.
    pub fn validate(&self) -> Result<()> {
        if self.mode == DataMode::Aspm && self.uses_swim() {
            bail!("aspm mode has no swim feed; remove \"swim\" from observed_inputs or use mode \"aspm+swim\"");
        }
        if self.n_lag == 0 || self.n_look_ahead == 0 {
            bail!("n_lag and n_look_ahead must be at least 1");
        }
        if self.kind == ModelKind::Ar && self.ar_order == 0 {
            bail!("ar_order must be at least 1");
        }
        if self.train_stride == 0 {
            bail!("train_stride must be at least 1");
        }
        self.split.validate()?;
        self.training.validate()?;
        if self.kind.is_neural() {
            self.model_config().validate()?;
        }
        Ok(())
    }

    /// Architecture for the neural kinds.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_lag: self.n_lag,
            n_look_ahead: self.n_look_ahead,
            hidden_dim: self.hidden_dim,
            embedding_dims: self
                .embedding_dims
                .clone()
                .unwrap_or_else(|| CALENDAR_FEATURES.iter().map(|(_, c)| default_embedding_dim(*c)).collect()),
            use_attention: self.kind == ModelKind::Seq2SeqAttention,
            attention_kind: self.attention_kind,
            observed_inputs: self.observed_inputs(),
        }
    }

    /// Past slices the configured kind consumes.
    pub fn effective_n_lag(&self) -> usize {
        match self.kind {
            ModelKind::Ar => self.ar_order,
            _ => self.n_lag,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.mode, DataMode::Aspm);
        assert_eq!((c.n_lag, c.n_look_ahead, c.ar_order), (10, 124, 96));
        assert_eq!(c.training, TrainingConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn aspm_mode_forbids_swim() {
        let c: RunConfig = serde_json::from_str(r#"{"mode":"aspm","observed_inputs":["swim"]}"#).unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig = serde_json::from_str(r#"{"mode":"aspm+swim"}"#).unwrap();
        assert!(c.uses_swim());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"n_lags":3}"#).is_err());
    }
}
