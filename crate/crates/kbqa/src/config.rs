//! Run configuration: model dimensions, training hyperparameters, and the
//! ablation switches, with one place for their defaults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::GateVariant;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("hidden dimension must be even and positive (got {0})")]
    BadHiddenDim(usize),
    #[error("{name} must be positive")]
    Zero { name: &'static str },
    #[error("{name} must lie in {range} (got {got})")]
    OutOfRange {
        name: &'static str,
        range: &'static str,
        got: f64,
    },
    #[error("the standard-gate ablation needs the scalar-ew gate variant (got {0})")]
    StdGateVariant(GateVariant),
}

/// Which part of the model a run disables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Full model.
    #[default]
    None,
    /// No query reformulation: the text reader attends with the plain
    /// pooled question (q' ≡ q).
    NoReform,
    /// No knowledge enhancement: document tokens feed their projected
    /// features alone, entity-linked or not.
    NoKnow,
    /// Standard (question-free) token gate over [e'; f].
    StdGate,
    /// Graph reader only: no documents are encoded; candidates score
    /// against entity knowledge alone.
    KbOnly,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoReform => "no-reform",
            Ablation::NoKnow => "no-know",
            Ablation::StdGate => "std-gate",
            Ablation::KbOnly => "kb-only",
        }
    }

    pub fn all() -> [Ablation; 5] {
        [
            Ablation::None,
            Ablation::NoReform,
            Ablation::NoKnow,
            Ablation::StdGate,
            Ablation::KbOnly,
        ]
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Ablation, String> {
        match s {
            "none" => Ok(Ablation::None),
            "no-reform" => Ok(Ablation::NoReform),
            "no-know" => Ok(Ablation::NoKnow),
            "std-gate" => Ok(Ablation::StdGate),
            "kb-only" => Ok(Ablation::KbOnly),
            other => Err(format!(
                "unknown ablation {other:?} (expected none, no-reform, no-know, std-gate, or kb-only)"
            )),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Model dimensions and input caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub hidden_dim: usize,
    pub max_question_len: usize,
    pub max_doc_len: usize,
    pub max_neighbors: usize,
    pub gate_variant: GateVariant,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            word_dim: 300,
            hidden_dim: 100,
            max_question_len: 10,
            max_doc_len: 50,
            max_neighbors: 50,
            gate_variant: GateVariant::ScalarEw,
            ablation: Ablation::None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(2) {
            return Err(ConfigError::BadHiddenDim(self.hidden_dim));
        }
        for (name, v) in [
            ("word_dim", self.word_dim),
            ("max_question_len", self.max_question_len),
            ("max_doc_len", self.max_doc_len),
            ("max_neighbors", self.max_neighbors),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero { name });
            }
        }
        if self.ablation == Ablation::StdGate && self.gate_variant != GateVariant::ScalarEw {
            return Err(ConfigError::StdGateVariant(self.gate_variant));
        }
        Ok(())
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub grad_clip: f64,
    pub label_smoothing: f64,
    /// Score threshold for the multi-answer prediction set.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            seed: 7,
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.001,
            dropout: 0.2,
            grad_clip: 1.0,
            label_smoothing: 0.1,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_size == 0 {
            return Err(ConfigError::Zero { name: "batch_size" });
        }
        for (name, v, range, ok) in [
            ("dropout", self.dropout, "[0,1)", self.dropout >= 0.0 && self.dropout < 1.0),
            ("learning_rate", self.learning_rate, "(0,inf)", self.learning_rate > 0.0),
            ("grad_clip", self.grad_clip, "(0,inf)", self.grad_clip > 0.0),
            (
                "label_smoothing",
                self.label_smoothing,
                "[0,1)",
                self.label_smoothing >= 0.0 && self.label_smoothing < 1.0,
            ),
            (
                "threshold",
                self.threshold,
                "(0,1)",
                self.threshold > 0.0 && self.threshold < 1.0,
            ),
        ] {
            if !ok {
                return Err(ConfigError::OutOfRange { name, range, got: v });
            }
        }
        Ok(())
    }
}
