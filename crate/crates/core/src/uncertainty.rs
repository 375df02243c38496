//! Sequence-level uncertainty scores from per-step traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{GenerationRecord, Hypothesis, ScoringPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UncertaintyError {
    #[error("generation for item {0:?} produced no tokens")]
    EmptyGeneration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UeMethod {
    /// Negative log-likelihood of the generated sequence.
    Msp,
    /// Mean per-step entropy.
    Mte,
}

impl UeMethod {
    pub const ALL: [UeMethod; 2] = [UeMethod::Msp, UeMethod::Mte];

    pub fn name(&self) -> &'static str {
        match self {
            UeMethod::Msp => "msp",
            UeMethod::Mte => "mte",
        }
    }
}

impl std::str::FromStr for UeMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "msp" => Ok(UeMethod::Msp),
            "mte" => Ok(UeMethod::Mte),
            other => Err(format!("unknown uncertainty method {other:?}")),
        }
    }
}

/// `-sum ln p_t` over a log-probability trace.
pub fn msp_from_log_probs(log_probs: &[f64]) -> Option<f64> {
    if log_probs.is_empty() {
        None
    } else {
        Some(-log_probs.iter().sum::<f64>())
    }
}

pub fn mte_from_entropies(entropies: &[f64]) -> Option<f64> {
    if entropies.is_empty() {
        None
    } else {
        Some(entropies.iter().sum::<f64>() / entropies.len() as f64)
    }
}

fn traces<'a>(rec: &'a GenerationRecord) -> (&'a Hypothesis, ScoringPolicy) {
    (&rec.output, rec.scoring_policy)
}

/// Maximum sequence probability score under the record's scoring policy.
/// Penalized strategy traces can push it above the likelihood-based value;
/// it is never clamped.
pub fn msp(rec: &GenerationRecord) -> Result<f64, UncertaintyError> {
    let (h, policy) = traces(rec);
    msp_from_log_probs(h.traces(policy).0)
        .ok_or_else(|| UncertaintyError::EmptyGeneration(rec.item_id.clone()))
}

/// Mean token entropy under the record's scoring policy.
pub fn mte(rec: &GenerationRecord) -> Result<f64, UncertaintyError> {
    let (h, policy) = traces(rec);
    mte_from_entropies(h.traces(policy).1)
        .ok_or_else(|| UncertaintyError::EmptyGeneration(rec.item_id.clone()))
}

pub fn score(rec: &GenerationRecord, method: UeMethod) -> Result<f64, UncertaintyError> {
    match method {
        UeMethod::Msp => msp(rec),
        UeMethod::Mte => mte(rec),
    }
}
