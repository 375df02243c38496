//! Decoding strategies as pure functions from provider(s), prompt and
//! configuration to a [`GenerationRecord`].
//!
//! Every strategy records two views of each step: the distribution it
//! selected from (restricted candidate sets are renormalized; diverse beam
//! search records its penalized log-score) and the untouched final-layer
//! softmax. Ties are always broken towards the lowest token id, then the
//! lexicographically smallest sequence.

mod beam;
mod config;
mod contrastive;
mod fsd;
mod greedy;
mod layers;
mod sampling;

use thiserror::Error;

use crate::model::math::{entropy_from_log_probs, log_softmax};
use crate::model::{self, LogitProvider, ModelError, Need};
use crate::types::{Diagnostics, GenerationRecord, Hypothesis, StepOutput, StopReason, TraceStep};

pub use beam::{decode_beam, decode_dbs};
pub use config::{
    default_max_new_tokens, BeamParams, CdParams, CsParams, DbsParams, DecodeConfig, DeltaKind,
    DolaParams, FsdParams, SledParams, StrategyParams, TemperatureParams, TopPParams,
    DEFAULT_CS_K, DEFAULT_DBS_LAMBDA, DETERMINISTIC_FAMILIES, STOCHASTIC_FAMILIES,
};
pub use contrastive::{decode_cd, decode_cs};
pub use fsd::{decode_fsd, decode_fsd_vec, AntiLm};
pub use greedy::decode_greedy;
pub use layers::{decode_dola, decode_sled, jsd};
pub use sampling::{decode_sampled, nucleus, sample_index, sampling_rng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("provider failed at step {step}: {source}")]
    Provider { step: usize, source: ModelError },
    #[error(transparent)]
    Capability(ModelError),
    #[error("invalid decoding config: {0}")]
    InvalidConfig(String),
    #[error("expert vocabulary {expert} differs from amateur vocabulary {amateur}")]
    VocabMismatch { expert: usize, amateur: usize },
    #[error("strategy needs an amateur provider")]
    MissingAmateur,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("distribution lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Raw output of a strategy before it is wrapped into a record.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub output: Hypothesis,
    pub stop: StopReason,
    pub diagnostics: Diagnostics,
}

/// Runs the strategy named in `cfg` and wraps the result in a record.
pub fn decode(
    model: &dyn LogitProvider,
    amateur: Option<&dyn LogitProvider>,
    item_id: &str,
    prompt: &[u32],
    cfg: &DecodeConfig,
) -> Result<GenerationRecord, DecodeError> {
    cfg.validate()?;
    let max = cfg.max_new_tokens;
    let decoded = match &cfg.params {
        StrategyParams::Greedy => decode_greedy(model, prompt, max)?,
        StrategyParams::Beam(p) => decode_beam(model, prompt, p.k, max)?,
        StrategyParams::Dbs(p) => decode_dbs(model, prompt, p, max)?,
        StrategyParams::Cs(p) => decode_cs(model, prompt, p, max)?,
        StrategyParams::Cd(p) => {
            let amateur = amateur.ok_or(DecodeError::MissingAmateur)?;
            decode_cd(model, amateur, prompt, p, max)?
        }
        StrategyParams::Fsd(p) => decode_fsd(model, prompt, p, max)?,
        StrategyParams::FsdVec(p) => decode_fsd_vec(model, prompt, p, max)?,
        StrategyParams::Dola(p) => decode_dola(model, prompt, p, max)?,
        StrategyParams::Sled(p) => decode_sled(model, prompt, p, max)?,
        StrategyParams::Temperature(_) | StrategyParams::TopP(_) => {
            decode_sampled(model, prompt, &cfg.params, item_id, max)?
        }
    };
    Ok(GenerationRecord {
        item_id: item_id.to_string(),
        config: cfg.clone(),
        output: decoded.output,
        scoring_policy: cfg.scoring_policy,
        stop: decoded.stop,
        diagnostics: decoded.diagnostics,
    })
}

/// What a single-path strategy hands back for one step.
pub(crate) struct Choice {
    pub token: u32,
    /// ln of the chosen token under the strategy distribution.
    pub log_prob: f64,
    pub entropy: f64,
    pub score: f64,
    /// Added to the cumulative strategy score.
    pub score_delta: f64,
    pub hidden: Option<Vec<f64>>,
}

impl Choice {
    /// Choice read straight from a (possibly restricted) distribution given
    /// as log-probabilities over `support`.
    pub fn from_support(token: u32, support: &[usize], log_probs: &[f64], score: f64) -> Self {
        let pos = support
            .iter()
            .position(|&s| s as u32 == token)
            .expect("chosen token lies in its support");
        let lp = log_probs[pos].min(0.0);
        Choice {
            token,
            log_prob: lp,
            entropy: entropy_from_log_probs(log_probs),
            score,
            score_delta: lp,
            hidden: None,
        }
    }
}

pub(crate) struct StepView<'a> {
    pub step: usize,
    pub context: &'a [u32],
    pub out: &'a StepOutput,
    pub base_log_probs: &'a [f64],
}

pub(crate) fn provider_step(
    model: &dyn LogitProvider,
    context: &[u32],
    need: Need,
    step: usize,
) -> Result<StepOutput, DecodeError> {
    model::step(model, context, need).map_err(|source| DecodeError::Provider { step, source })
}

/// Drives a strategy that keeps one hypothesis: asks `choose` for a token at
/// each step and stops at eos or after `max_new` tokens.
pub(crate) fn run_single_path<F>(
    model: &dyn LogitProvider,
    prompt: &[u32],
    max_new: usize,
    need: Need,
    mut choose: F,
) -> Result<(Hypothesis, StopReason), DecodeError>
where
    F: FnMut(&StepView<'_>) -> Result<Choice, DecodeError>,
{
    check_prompt(prompt)?;
    model.capabilities().supports(need).map_err(DecodeError::Capability)?;
    let eos = model.vocab().eos_id();
    let mut hyp = Hypothesis::new(prompt.to_vec());
    for t in 0..max_new {
        let out = provider_step(model, &hyp.tokens().ids, need, t)?;
        let base = log_softmax(&out.final_logits);
        let choice = choose(&StepView {
            step: t,
            context: &hyp.tokens().ids,
            out: &out,
            base_log_probs: &base,
        })?;
        let step = TraceStep {
            token: choice.token,
            log_prob: choice.log_prob,
            entropy: choice.entropy,
            base_log_prob: base[choice.token as usize].min(0.0),
            base_entropy: entropy_from_log_probs(&base),
            score: choice.score,
        };
        hyp.push(step, choice.score_delta);
        if let Some(h) = choice.hidden {
            hyp.push_hidden(h);
        }
        if choice.token == eos {
            hyp.finish();
            return Ok((hyp, StopReason::Eos));
        }
    }
    hyp.finish();
    Ok((hyp, StopReason::MaxLength))
}

pub(crate) fn check_prompt(prompt: &[u32]) -> Result<(), DecodeError> {
    if prompt.is_empty() {
        Err(DecodeError::EmptyPrompt)
    } else {
        Ok(())
    }
}

/// Hidden states of every prompt position, obtained by stepping each prefix.
pub(crate) fn prompt_hiddens(
    model: &dyn LogitProvider,
    prompt: &[u32],
) -> Result<Vec<Vec<f64>>, DecodeError> {
    (1..=prompt.len())
        .map(|i| {
            provider_step(model, &prompt[..i], Need::HIDDEN, 0).map(|o| {
                o.hidden_state
                    .expect("checked step returns requested hidden state")
            })
        })
        .collect()
}

/// Hidden state of the position holding `token` appended to `context`.
pub(crate) fn lookahead_hidden(
    model: &dyn LogitProvider,
    context: &[u32],
    token: u32,
    step: usize,
) -> Result<Vec<f64>, DecodeError> {
    let mut ctx = Vec::with_capacity(context.len() + 1);
    ctx.extend_from_slice(context);
    ctx.push(token);
    let out = provider_step(model, &ctx, Need::HIDDEN, step)?;
    Ok(out
        .hidden_state
        .expect("checked step returns requested hidden state"))
}
