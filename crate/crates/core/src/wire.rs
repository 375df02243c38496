//! JSON payloads of the remote model and scorer protocols.
//!
//! Model: `POST /v1/handshake` returns [`ModelHandshake`]; `POST /v1/step`
//! takes [`StepRequest`] and returns [`StepResponse`].
//! Scorer: `POST /v1/handshake` returns [`ScorerHandshake`]; `POST /v1/score`
//! takes [`ScoreRequest`] and returns [`ScoreResponse`].
//! Failures carry an [`ErrorBody`] with a non-2xx status.

use serde::{Deserialize, Serialize};

use crate::model::{ModelCapabilities, ModelError, Need};
use crate::types::{StepOutput, Vocabulary};

pub const HANDSHAKE_PATH: &str = "/v1/handshake";
pub const STEP_PATH: &str = "/v1/step";
pub const SCORE_PATH: &str = "/v1/score";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHandshake {
    pub vocab_size: usize,
    pub layer_count: usize,
    pub exposes_layer_logits: bool,
    pub exposes_hidden_states: bool,
    /// End-of-sequence id; clients fall back to their own setting when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_id: Option<u32>,
}

impl ModelHandshake {
    pub fn from_capabilities(caps: &ModelCapabilities) -> Self {
        Self {
            vocab_size: caps.vocab.size(),
            layer_count: caps.layer_count,
            exposes_layer_logits: caps.exposes_layer_logits,
            exposes_hidden_states: caps.exposes_hidden_states,
            eos_id: Some(caps.vocab.eos_id()),
        }
    }

    /// Capabilities implied by the handshake; `eos_fallback` is used when the
    /// server does not name an end-of-sequence id.
    pub fn to_capabilities(&self, eos_fallback: u32) -> Result<ModelCapabilities, ModelError> {
        let vocab = Vocabulary::new(self.vocab_size, self.eos_id.unwrap_or(eos_fallback))?;
        ModelCapabilities::new(
            vocab,
            self.layer_count,
            self.exposes_layer_logits,
            self.exposes_hidden_states,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRequest {
    pub context: Vec<u32>,
    #[serde(default)]
    pub want_layers: bool,
    #[serde(default)]
    pub want_hidden: bool,
}

impl StepRequest {
    pub fn new(context: &[u32], need: Need) -> Self {
        Self {
            context: context.to_vec(),
            want_layers: need.layers,
            want_hidden: need.hidden,
        }
    }

    pub fn need(&self) -> Need {
        Need {
            layers: self.want_layers,
            hidden: self.want_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub final_logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_logits: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_state: Option<Vec<f64>>,
}

impl StepResponse {
    pub fn from_output(out: StepOutput) -> Self {
        Self {
            final_logits: out.final_logits,
            layer_logits: out.layer_logits,
            hidden_state: out.hidden_state,
        }
    }

    pub fn into_output(self, layer_count: usize) -> StepOutput {
        StepOutput {
            final_logits: self.final_logits,
            layer_logits: self.layer_logits,
            hidden_state: self.hidden_state,
            layer_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerHandshake {
    pub metric: String,
    pub range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub id: String,
    pub hypothesis: String,
    pub reference: String,
    /// Task-specific payload, e.g. test-suite source for code scorers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub items: Vec<ScoreItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<ScoreResult>,
}

/// Machine-readable error category carried in [`ErrorBody`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    BadRequest,
    CapabilityMissing,
    InvalidContext,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}
