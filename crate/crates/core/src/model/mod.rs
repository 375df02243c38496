//! The logit-provider contract and in-process toy providers.

pub mod math;
mod toy;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{StepOutput, TypeError, Vocabulary};

pub use math::{log_softmax, softmax};
pub use toy::{random_table_lm, ScriptedLM, SyntheticLayeredLM, SyntheticSpec, TableLM, ToyModelSpec};

/// Logit assigned to zero-probability tokens by the table-backed models.
pub const LOG_ZERO: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("context is empty")]
    EmptyContext,
    #[error("model cannot serve {0}")]
    CapabilityMissing(&'static str),
    #[error("vocabulary mismatch: expected {expected}, got {got}")]
    VocabMismatch { expected: usize, got: usize },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid model output: {0}")]
    Invalid(#[from] TypeError),
}

/// Optional outputs a caller requests from a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Need {
    pub layers: bool,
    pub hidden: bool,
}

impl Need {
    pub const FINAL: Need = Need {
        layers: false,
        hidden: false,
    };
    pub const LAYERS: Need = Need {
        layers: true,
        hidden: false,
    };
    pub const HIDDEN: Need = Need {
        layers: false,
        hidden: true,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCapabilities {
    pub exposes_layer_logits: bool,
    pub exposes_hidden_states: bool,
    pub layer_count: usize,
    pub vocab: Vocabulary,
    /// Free-form provider facts, e.g. whether hidden states are taken before
    /// or after the final norm.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl ModelCapabilities {
    pub fn new(
        vocab: Vocabulary,
        layer_count: usize,
        exposes_layer_logits: bool,
        exposes_hidden_states: bool,
    ) -> Result<Self, ModelError> {
        if layer_count == 0 || (exposes_layer_logits && layer_count < 2) {
            return Err(ModelError::Protocol(format!(
                "layer_count {layer_count} incompatible with exposes_layer_logits={exposes_layer_logits}"
            )));
        }
        Ok(Self {
            exposes_layer_logits,
            exposes_hidden_states,
            layer_count,
            vocab,
            metadata: BTreeMap::new(),
        })
    }

    pub fn supports(&self, need: Need) -> Result<(), ModelError> {
        if need.layers && !self.exposes_layer_logits {
            return Err(ModelError::CapabilityMissing("layer logits"));
        }
        if need.hidden && !self.exposes_hidden_states {
            return Err(ModelError::CapabilityMissing("hidden states"));
        }
        Ok(())
    }
}

/// An autoregressive model seen one step at a time.
///
/// Two calls with the same context must return element-wise equal outputs.
pub trait LogitProvider: Send + Sync {
    fn capabilities(&self) -> &ModelCapabilities;

    fn step(&self, context: &[u32], need: Need) -> Result<StepOutput, ModelError>;

    /// Whether concurrent `step` calls are allowed. Single-session providers
    /// return false and are driven by one worker.
    fn concurrency_safe(&self) -> bool {
        true
    }

    fn vocab(&self) -> Vocabulary {
        self.capabilities().vocab
    }
}

/// Checked step: validates the request against the provider's capabilities
/// and the response against the vocabulary.
pub fn step(
    model: &dyn LogitProvider,
    context: &[u32],
    need: Need,
) -> Result<StepOutput, ModelError> {
    if context.is_empty() {
        return Err(ModelError::EmptyContext);
    }
    let caps = model.capabilities();
    caps.supports(need)?;
    for &id in context {
        caps.vocab.check(id)?;
    }
    let out = model.step(context, need)?;
    out.validate(caps.vocab.size())?;
    if need.layers && out.layer_logits.is_none() {
        return Err(ModelError::MalformedPayload(
            "layer logits requested but absent".into(),
        ));
    }
    if need.hidden && out.hidden_state.is_none() {
        return Err(ModelError::MalformedPayload(
            "hidden state requested but absent".into(),
        ));
    }
    Ok(out)
}

/// Logits for a probability row: ln p, with zeros mapped to [`LOG_ZERO`].
pub fn logits_from_probs(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { LOG_ZERO })
        .collect()
}
