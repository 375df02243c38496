use std::collections::HashMap;

use super::{
    lookahead_hidden, prompt_hiddens, run_single_path, Choice, DecodeError, Decoded, FsdParams,
};
use crate::model::math::{argmax_over, cosine, log_softmax_over, softmax, top_k};
use crate::model::{LogitProvider, Need};
use crate::types::Diagnostics;

/// Order-`n` n-gram model over the running prefix with add-one smoothing.
///
/// Contexts shorter than `n - 1` (at the very start of a sequence) use
/// whatever history exists.
#[derive(Debug, Clone)]
pub struct AntiLm {
    order: usize,
    vocab_size: usize,
    history: Vec<u32>,
    counts: HashMap<Vec<u32>, HashMap<u32, u32>>,
    totals: HashMap<Vec<u32>, u32>,
}

impl AntiLm {
    pub fn new(order: usize, vocab_size: usize) -> Self {
        assert!(order >= 1);
        Self {
            order,
            vocab_size,
            history: Vec::new(),
            counts: HashMap::new(),
            totals: HashMap::new(),
        }
    }

    pub fn from_prefix(order: usize, vocab_size: usize, prefix: &[u32]) -> Self {
        let mut lm = Self::new(order, vocab_size);
        prefix.iter().for_each(|&t| lm.push(t));
        lm
    }

    pub fn push(&mut self, token: u32) {
        let max_ctx = (self.order - 1).min(self.history.len());
        for l in 0..=max_ctx {
            let ctx = self.history[self.history.len() - l..].to_vec();
            *self
                .counts
                .entry(ctx.clone())
                .or_default()
                .entry(token)
                .or_default() += 1;
            *self.totals.entry(ctx).or_default() += 1;
        }
        self.history.push(token);
    }

    fn context(&self) -> &[u32] {
        let l = (self.order - 1).min(self.history.len());
        &self.history[self.history.len() - l..]
    }

    /// Smoothed probability of `token` following the current history.
    pub fn prob(&self, token: u32) -> f64 {
        let ctx = self.context();
        let c = self
            .counts
            .get(ctx)
            .and_then(|m| m.get(&token))
            .copied()
            .unwrap_or(0);
        let total = self.totals.get(ctx).copied().unwrap_or(0);
        f64::from(c + 1) / (f64::from(total) + self.vocab_size as f64)
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }
}

fn mix(alpha: f64, base: f64, anti: f64) -> f64 {
    (1.0 - alpha) * base - alpha * anti
}

/// Frustratingly simple decoding with the n-gram anti-model.
///
/// Over the top-`n` base tokens, emits the argmax of
/// `(1 - alpha) * p_base - alpha * p_anti` where the anti-model is fitted on
/// the prompt plus everything generated so far.
pub fn decode_fsd(
    model: &dyn LogitProvider,
    prompt: &[u32],
    params: &FsdParams,
    max_new: usize,
) -> Result<Decoded, DecodeError> {
    let v = model.vocab().size();
    let mut anti = AntiLm::from_prefix(params.n, v, prompt);
    let (output, stop) = run_single_path(model, prompt, max_new, Need::FINAL, |view| {
        let cands = top_k(view.base_log_probs, params.n);
        let mut scores = vec![f64::NEG_INFINITY; v];
        for &y in &cands {
            scores[y] = mix(params.alpha, view.base_log_probs[y].exp(), anti.prob(y as u32));
        }
        let token = argmax_over(&scores, cands.iter().copied()).expect("n >= 1");
        anti.push(token as u32);
        let renorm = log_softmax_over(view.base_log_probs, &cands);
        Ok(Choice::from_support(token as u32, &cands, &renorm, scores[token]))
    })?;
    Ok(Decoded {
        output,
        stop,
        diagnostics: Diagnostics::default(),
    })
}

/// Frustratingly simple decoding with the vectorized anti-model.
///
/// The anti probability of a candidate is the softmax, over the candidate
/// set, of the cosine similarity between the candidate's hidden state (one
/// lookahead step) and the mean hidden state of the last `n` positions.
pub fn decode_fsd_vec(
    model: &dyn LogitProvider,
    prompt: &[u32],
    params: &FsdParams,
    max_new: usize,
) -> Result<Decoded, DecodeError> {
    super::check_prompt(prompt)?;
    model
        .capabilities()
        .supports(Need::HIDDEN)
        .map_err(DecodeError::Capability)?;
    let v = model.vocab().size();
    let mut history = prompt_hiddens(model, prompt)?;
    let (output, stop) = run_single_path(model, prompt, max_new, Need::FINAL, |view| {
        let cands = top_k(view.base_log_probs, params.n);
        let window = &history[history.len().saturating_sub(params.n)..];
        let dim = window[0].len();
        let mut mean = vec![0.0; dim];
        for h in window {
            for (m, x) in mean.iter_mut().zip(h) {
                *m += x / window.len() as f64;
            }
        }
        let mut hiddens = Vec::with_capacity(cands.len());
        let mut sims = Vec::with_capacity(cands.len());
        for &y in &cands {
            let h = lookahead_hidden(model, view.context, y as u32, view.step)?;
            sims.push(cosine(&h, &mean));
            hiddens.push(h);
        }
        let anti = softmax(&sims);
        let mut scores = vec![f64::NEG_INFINITY; v];
        for (i, &y) in cands.iter().enumerate() {
            scores[y] = mix(params.alpha, view.base_log_probs[y].exp(), anti[i]);
        }
        let token = argmax_over(&scores, cands.iter().copied()).expect("n >= 1");
        let pos = cands.iter().position(|&c| c == token).expect("in candidates");
        let h = hiddens.swap_remove(pos);
        history.push(h.clone());
        let renorm = log_softmax_over(view.base_log_probs, &cands);
        let mut choice = Choice::from_support(token as u32, &cands, &renorm, scores[token]);
        choice.hidden = Some(h);
        Ok(choice)
    })?;
    Ok(Decoded {
        output,
        stop,
        diagnostics: Diagnostics::default(),
    })
}
