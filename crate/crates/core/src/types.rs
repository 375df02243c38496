//! Value types shared by every module.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoding::DecodeConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("vocabulary needs at least 2 tokens, got {0}")]
    VocabTooSmall(usize),
    #[error("eos id {eos} outside vocabulary of size {size}")]
    EosOutOfRange { eos: u32, size: usize },
    #[error("token id {id} outside vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("prompt length {prompt_len} exceeds sequence length {len}")]
    PromptTooLong { prompt_len: usize, len: usize },
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("{0} contains a non-finite value")]
    NonFinite(&'static str),
    #[error("final layer logits differ from final_logits")]
    FinalLayerMismatch,
    #[error("trace lengths out of sync: {0}")]
    TraceMismatch(String),
    #[error("log-probability {0} is not in (-inf, 0]")]
    BadLogProb(f64),
}

/// Token-id space of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr")]
pub struct Vocabulary {
    size: usize,
    eos_id: u32,
}

#[derive(Deserialize)]
struct VocabularyRepr {
    size: usize,
    eos_id: u32,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = TypeError;
    fn try_from(r: VocabularyRepr) -> Result<Self, Self::Error> {
        Vocabulary::new(r.size, r.eos_id)
    }
}

impl Vocabulary {
    pub fn new(size: usize, eos_id: u32) -> Result<Self, TypeError> {
        if size < 2 {
            return Err(TypeError::VocabTooSmall(size));
        }
        if eos_id as usize >= size {
            return Err(TypeError::EosOutOfRange { eos: eos_id, size });
        }
        Ok(Self { size, eos_id })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    pub fn check(&self, id: u32) -> Result<(), TypeError> {
        if (id as usize) < self.size {
            Ok(())
        } else {
            Err(TypeError::TokenOutOfRange {
                id,
                size: self.size,
            })
        }
    }
}

/// Prompt followed by generated continuation. `prompt_len` marks the split.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub prompt_len: usize,
}

impl TokenSeq {
    pub fn from_prompt(prompt: Vec<u32>) -> Self {
        let prompt_len = prompt.len();
        Self {
            ids: prompt,
            prompt_len,
        }
    }

    pub fn prompt(&self) -> &[u32] {
        &self.ids[..self.prompt_len]
    }

    pub fn generated(&self) -> &[u32] {
        &self.ids[self.prompt_len..]
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), TypeError> {
        if self.prompt_len > self.ids.len() {
            return Err(TypeError::PromptTooLong {
                prompt_len: self.prompt_len,
                len: self.ids.len(),
            });
        }
        self.ids.iter().try_for_each(|&id| vocab.check(id))
    }
}

/// One decoding step's view of the model for a given context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub final_logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_logits: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_state: Option<Vec<f64>>,
    pub layer_count: usize,
}

impl StepOutput {
    pub fn validate(&self, vocab_size: usize) -> Result<(), TypeError> {
        if self.final_logits.len() != vocab_size {
            return Err(TypeError::Length {
                what: "final_logits",
                got: self.final_logits.len(),
                expected: vocab_size,
            });
        }
        if !self.final_logits.iter().all(|v| v.is_finite()) {
            return Err(TypeError::NonFinite("final_logits"));
        }
        if let Some(layers) = &self.layer_logits {
            if layers.len() != self.layer_count {
                return Err(TypeError::Length {
                    what: "layer_logits",
                    got: layers.len(),
                    expected: self.layer_count,
                });
            }
            for layer in layers {
                if layer.len() != vocab_size {
                    return Err(TypeError::Length {
                        what: "layer logit vector",
                        got: layer.len(),
                        expected: vocab_size,
                    });
                }
                if !layer.iter().all(|v| v.is_finite()) {
                    return Err(TypeError::NonFinite("layer_logits"));
                }
            }
            if layers.last() != Some(&self.final_logits) {
                return Err(TypeError::FinalLayerMismatch);
            }
        }
        if let Some(h) = &self.hidden_state {
            if !h.iter().all(|v| v.is_finite()) {
                return Err(TypeError::NonFinite("hidden_state"));
            }
        }
        Ok(())
    }
}

/// Which distribution per-step probabilities and entropies are read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ScoringPolicy {
    /// The (possibly restricted and renormalized, or penalized) distribution
    /// the strategy selected from.
    #[default]
    #[serde(rename = "strategy-distribution", alias = "strategy")]
    Strategy,
    /// The untouched final-layer softmax.
    #[serde(rename = "base-distribution", alias = "base")]
    Base,
}

/// Everything recorded about one generated token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub token: u32,
    /// ln of the chosen token's value under the strategy distribution.
    pub log_prob: f64,
    pub entropy: f64,
    /// ln of the chosen token's final-layer softmax probability.
    pub base_log_prob: f64,
    pub base_entropy: f64,
    /// Raw score the strategy maximized for the chosen token.
    pub score: f64,
}

/// A partial or finished sequence with its per-step traces.
///
/// Traces cover generated tokens only. Probabilities are stored as natural
/// logs; [`Hypothesis::prob_trace`] exponentiates them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HypothesisRepr")]
pub struct Hypothesis {
    tokens: TokenSeq,
    cum_strategy_score: f64,
    log_prob_trace: Vec<f64>,
    entropy_trace: Vec<f64>,
    base_log_prob_trace: Vec<f64>,
    base_entropy_trace: Vec<f64>,
    score_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden_trace: Option<Vec<Vec<f64>>>,
    finished: bool,
}

#[derive(Deserialize)]
struct HypothesisRepr {
    tokens: TokenSeq,
    cum_strategy_score: f64,
    log_prob_trace: Vec<f64>,
    entropy_trace: Vec<f64>,
    base_log_prob_trace: Vec<f64>,
    base_entropy_trace: Vec<f64>,
    score_trace: Vec<f64>,
    #[serde(default)]
    hidden_trace: Option<Vec<Vec<f64>>>,
    finished: bool,
}

impl TryFrom<HypothesisRepr> for Hypothesis {
    type Error = TypeError;
    fn try_from(r: HypothesisRepr) -> Result<Self, Self::Error> {
        let h = Hypothesis {
            tokens: r.tokens,
            cum_strategy_score: r.cum_strategy_score,
            log_prob_trace: r.log_prob_trace,
            entropy_trace: r.entropy_trace,
            base_log_prob_trace: r.base_log_prob_trace,
            base_entropy_trace: r.base_entropy_trace,
            score_trace: r.score_trace,
            hidden_trace: r.hidden_trace,
            finished: r.finished,
        };
        h.check_traces()?;
        Ok(h)
    }
}

impl Hypothesis {
    pub fn new(prompt: Vec<u32>) -> Self {
        Self {
            tokens: TokenSeq::from_prompt(prompt),
            cum_strategy_score: 0.0,
            log_prob_trace: Vec::new(),
            entropy_trace: Vec::new(),
            base_log_prob_trace: Vec::new(),
            base_entropy_trace: Vec::new(),
            score_trace: Vec::new(),
            hidden_trace: None,
            finished: false,
        }
    }

    /// Appends one generated token. `score_delta` is added to the cumulative
    /// strategy score.
    pub fn push(&mut self, step: TraceStep, score_delta: f64) {
        self.tokens.ids.push(step.token);
        self.log_prob_trace.push(step.log_prob);
        self.entropy_trace.push(step.entropy);
        self.base_log_prob_trace.push(step.base_log_prob);
        self.base_entropy_trace.push(step.base_entropy);
        self.score_trace.push(step.score);
        self.cum_strategy_score += score_delta;
    }

    pub fn push_hidden(&mut self, hidden: Vec<f64>) {
        self.hidden_trace.get_or_insert_with(Vec::new).push(hidden);
    }

    pub fn finish(&mut self) {
        self.finished = true;
    }

    pub fn tokens(&self) -> &TokenSeq {
        &self.tokens
    }

    pub fn generated(&self) -> &[u32] {
        self.tokens.generated()
    }

    pub fn len_generated(&self) -> usize {
        self.log_prob_trace.len()
    }

    pub fn last_token(&self) -> Option<u32> {
        self.generated().last().copied()
    }

    pub fn cum_strategy_score(&self) -> f64 {
        self.cum_strategy_score
    }

    /// Sum of base log-probabilities: the sequence log-likelihood.
    pub fn log_likelihood(&self) -> f64 {
        self.base_log_prob_trace.iter().sum()
    }

    pub fn log_prob_trace(&self) -> &[f64] {
        &self.log_prob_trace
    }

    pub fn prob_trace(&self) -> Vec<f64> {
        self.log_prob_trace.iter().map(|lp| lp.exp()).collect()
    }

    pub fn entropy_trace(&self) -> &[f64] {
        &self.entropy_trace
    }

    pub fn base_log_prob_trace(&self) -> &[f64] {
        &self.base_log_prob_trace
    }

    pub fn base_entropy_trace(&self) -> &[f64] {
        &self.base_entropy_trace
    }

    pub fn score_trace(&self) -> &[f64] {
        &self.score_trace
    }

    pub fn hidden_trace(&self) -> Option<&[Vec<f64>]> {
        self.hidden_trace.as_deref()
    }

    pub fn drop_hidden_trace(&mut self) {
        self.hidden_trace = None;
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Log-probability and entropy traces under `policy`.
    pub fn traces(&self, policy: ScoringPolicy) -> (&[f64], &[f64]) {
        match policy {
            ScoringPolicy::Strategy => (&self.log_prob_trace, &self.entropy_trace),
            ScoringPolicy::Base => (&self.base_log_prob_trace, &self.base_entropy_trace),
        }
    }

    pub fn check_traces(&self) -> Result<(), TypeError> {
        if self.tokens.prompt_len > self.tokens.ids.len() {
            return Err(TypeError::PromptTooLong {
                prompt_len: self.tokens.prompt_len,
                len: self.tokens.ids.len(),
            });
        }
        let n = self.tokens.generated().len();
        let lens = [
            self.log_prob_trace.len(),
            self.entropy_trace.len(),
            self.base_log_prob_trace.len(),
            self.base_entropy_trace.len(),
            self.score_trace.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(TypeError::TraceMismatch(format!(
                "{n} generated tokens, trace lengths {lens:?}"
            )));
        }
        for &lp in self.log_prob_trace.iter().chain(&self.base_log_prob_trace) {
            if lp.is_nan() || lp > 0.0 {
                return Err(TypeError::BadLogProb(lp));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    MaxLength,
}

/// Per-step side information some strategies record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Layer contrasted against the final layer at each step (layer contrast).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub premature_layers: Vec<usize>,
    /// Steps where the contrastive candidate set was empty and the expert
    /// argmax was emitted instead.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub head_fallback_steps: Vec<usize>,
    /// Degeneration penalty (max cosine similarity) of the chosen token.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degeneration_penalties: Vec<f64>,
}

impl Diagnostics {
    pub fn is_empty(&self) -> bool {
        self.premature_layers.is_empty()
            && self.head_fallback_steps.is_empty()
            && self.degeneration_penalties.is_empty()
    }
}

/// A finished generation for one dataset item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub item_id: String,
    pub config: DecodeConfig,
    pub output: Hypothesis,
    pub scoring_policy: ScoringPolicy,
    pub stop: StopReason,
    #[serde(default, skip_serializing_if = "Diagnostics::is_empty")]
    pub diagnostics: Diagnostics,
}

impl GenerationRecord {
    pub fn strategy_id(&self) -> String {
        self.config.params.id()
    }
}

/// Per-item inputs to prediction-rejection evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub uncertainty: f64,
    pub quality_raw: BTreeMap<String, f64>,
    #[serde(default)]
    pub quality_norm: BTreeMap<String, f64>,
}

/// PRR with the curve areas and bootstrap statistics behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrrResult {
    pub prr: f64,
    pub area_uns: f64,
    pub area_orc: f64,
    pub area_rand: f64,
    pub n_items: usize,
    pub boot_mean: Option<f64>,
    pub boot_sd: Option<f64>,
    pub n_boot: usize,
    #[serde(default)]
    pub n_boot_degenerate: usize,
}
