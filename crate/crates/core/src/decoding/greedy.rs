use super::{run_single_path, Choice, DecodeError, Decoded};
use crate::model::math::{argmax, entropy_from_log_probs};
use crate::model::{LogitProvider, Need};
use crate::types::Diagnostics;

/// Emits the most probable token at every step.
pub fn decode_greedy(
    model: &dyn LogitProvider,
    prompt: &[u32],
    max_new: usize,
) -> Result<Decoded, DecodeError> {
    let (output, stop) = run_single_path(model, prompt, max_new, Need::FINAL, |view| {
        let lp = view.base_log_probs;
        let token = argmax(lp);
        Ok(Choice {
            token: token as u32,
            log_prob: lp[token],
            entropy: entropy_from_log_probs(lp),
            score: lp[token],
            score_delta: lp[token],
            hidden: None,
        })
    })?;
    Ok(Decoded {
        output,
        stop,
        diagnostics: Diagnostics::default(),
    })
}
