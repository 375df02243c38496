use std::cmp::Ordering;
use std::collections::HashMap;
use std::rc::Rc;

use super::{check_prompt, provider_step, DbsParams, DecodeError, Decoded, DeltaKind};
use crate::model::math::{entropy_from_log_probs, log_softmax};
use crate::model::{LogitProvider, Need};
use crate::types::{Diagnostics, Hypothesis, StopReason, TraceStep};

struct Expansion {
    log_probs: Vec<f64>,
    entropy: f64,
}

type StepCache = HashMap<Vec<u32>, Rc<Expansion>>;

fn expand(
    model: &dyn LogitProvider,
    hyp: &Hypothesis,
    step: usize,
    cache: &mut StepCache,
) -> Result<Rc<Expansion>, DecodeError> {
    let ctx = &hyp.tokens().ids;
    if let Some(e) = cache.get(ctx) {
        return Ok(Rc::clone(e));
    }
    let out = provider_step(model, ctx, Need::FINAL, step)?;
    let log_probs = log_softmax(&out.final_logits);
    let entropy = entropy_from_log_probs(&log_probs);
    let e = Rc::new(Expansion { log_probs, entropy });
    cache.insert(ctx.clone(), Rc::clone(&e));
    Ok(e)
}

struct Candidate {
    parent: usize,
    /// `None` carries a finished parent forward unchanged.
    token: Option<u32>,
    score: f64,
    seq: Vec<u32>,
}

fn by_score_then_seq(a: &Candidate, b: &Candidate) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.seq.cmp(&b.seq))
}

fn extended_seq(hyp: &Hypothesis, token: u32) -> Vec<u32> {
    let mut s = Vec::with_capacity(hyp.len_generated() + 1);
    s.extend_from_slice(hyp.generated());
    s.push(token);
    s
}

fn stop_of(hyp: &Hypothesis, eos: u32) -> StopReason {
    if hyp.last_token() == Some(eos) {
        StopReason::Eos
    } else {
        StopReason::MaxLength
    }
}

/// Beam search on cumulative log-probability.
///
/// Finished hypotheses stay in the candidate pool with their frozen score and
/// compete with active extensions for the `k` slots. Search ends when all
/// retained hypotheses are finished or after `max_new` steps; the best
/// retained hypothesis is returned.
pub fn decode_beam(
    model: &dyn LogitProvider,
    prompt: &[u32],
    k: usize,
    max_new: usize,
) -> Result<Decoded, DecodeError> {
    check_prompt(prompt)?;
    if k == 0 {
        return Err(DecodeError::InvalidConfig("beam k must be at least 1".into()));
    }
    let eos = model.vocab().eos_id();
    let v = model.vocab().size();
    let mut beams = vec![Hypothesis::new(prompt.to_vec())];
    for t in 0..max_new {
        let mut cache = StepCache::new();
        let mut expansions = Vec::with_capacity(beams.len());
        let mut cands = Vec::new();
        for (i, b) in beams.iter().enumerate() {
            if b.is_finished() {
                expansions.push(None);
                cands.push(Candidate {
                    parent: i,
                    token: None,
                    score: b.cum_strategy_score(),
                    seq: b.generated().to_vec(),
                });
                continue;
            }
            let e = expand(model, b, t, &mut cache)?;
            for y in 0..v as u32 {
                cands.push(Candidate {
                    parent: i,
                    token: Some(y),
                    score: b.cum_strategy_score() + e.log_probs[y as usize],
                    seq: extended_seq(b, y),
                });
            }
            expansions.push(Some(e));
        }
        cands.sort_by(by_score_then_seq);
        cands.truncate(k);
        beams = cands
            .iter()
            .map(|c| {
                let mut h = beams[c.parent].clone();
                if let Some(y) = c.token {
                    let e = expansions[c.parent].as_ref().expect("active parent expanded");
                    let lp = e.log_probs[y as usize].min(0.0);
                    h.push(
                        TraceStep {
                            token: y,
                            log_prob: lp,
                            entropy: e.entropy,
                            base_log_prob: lp,
                            base_entropy: e.entropy,
                            score: lp,
                        },
                        lp,
                    );
                    if y == eos {
                        h.finish();
                    }
                }
                h
            })
            .collect();
        if beams.iter().all(Hypothesis::is_finished) {
            break;
        }
    }
    let mut best = beams.into_iter().next().expect("k >= 1 keeps a beam");
    best.finish();
    let stop = stop_of(&best, eos);
    Ok(Decoded {
        output: best,
        stop,
        diagnostics: Diagnostics::default(),
    })
}

/// Diverse beam search.
///
/// The `k` beams are split into `groups` groups of `k / groups`. Groups are
/// advanced in order at every step; a candidate token in group `g` is
/// penalized by `lambda` times its similarity to the tokens the earlier
/// groups selected at the same step. Each hypothesis' strategy score and
/// strategy trace hold the penalized values; the returned hypothesis is the
/// one with the highest raw log-likelihood across all groups.
pub fn decode_dbs(
    model: &dyn LogitProvider,
    prompt: &[u32],
    params: &DbsParams,
    max_new: usize,
) -> Result<Decoded, DecodeError> {
    let eos = model.vocab().eos_id();
    let groups = dbs_groups(model, prompt, params, max_new)?;
    let mut best = groups
        .into_iter()
        .flatten()
        .min_by(|a, b| {
            b.log_likelihood()
                .total_cmp(&a.log_likelihood())
                .then_with(|| a.generated().cmp(b.generated()))
        })
        .expect("at least one group");
    best.finish();
    let stop = stop_of(&best, eos);
    Ok(Decoded {
        output: best,
        stop,
        diagnostics: Diagnostics::default(),
    })
}

/// Final beams of every group, each group sorted best first by penalized
/// score.
fn dbs_groups(
    model: &dyn LogitProvider,
    prompt: &[u32],
    params: &DbsParams,
    max_new: usize,
) -> Result<Vec<Vec<Hypothesis>>, DecodeError> {
    check_prompt(prompt)?;
    if params.k == 0 || params.groups == 0 || params.k % params.groups != 0 {
        return Err(DecodeError::InvalidConfig(format!(
            "dbs groups {} must divide k {}",
            params.groups, params.k
        )));
    }
    let width = params.k / params.groups;
    let eos = model.vocab().eos_id();
    let v = model.vocab().size();
    let mut groups: Vec<Vec<Hypothesis>> = vec![vec![Hypothesis::new(prompt.to_vec())]; params.groups];

    for t in 0..max_new {
        let mut cache = StepCache::new();
        // tokens chosen at this step by the groups already advanced
        let mut emitted: Vec<u32> = Vec::new();
        for group in groups.iter_mut() {
            let penalty: Vec<f64> = (0..v as u32)
                .map(|y| match params.delta {
                    DeltaKind::Unigram => {
                        params.lambda * emitted.iter().filter(|&&e| e == y).count() as f64
                    }
                })
                .collect();
            let mut expansions = Vec::with_capacity(group.len());
            let mut cands = Vec::new();
            for (i, b) in group.iter().enumerate() {
                if b.is_finished() {
                    expansions.push(None);
                    cands.push(Candidate {
                        parent: i,
                        token: None,
                        score: b.cum_strategy_score(),
                        seq: b.generated().to_vec(),
                    });
                    continue;
                }
                let e = expand(model, b, t, &mut cache)?;
                for y in 0..v as u32 {
                    cands.push(Candidate {
                        parent: i,
                        token: Some(y),
                        score: b.cum_strategy_score() + e.log_probs[y as usize]
                            - penalty[y as usize],
                        seq: extended_seq(b, y),
                    });
                }
                expansions.push(Some(e));
            }
            cands.sort_by(by_score_then_seq);
            cands.truncate(width);
            // entropy of the penalized distribution, once per parent
            let mut penalized_entropy: HashMap<usize, f64> = HashMap::new();
            let next: Vec<Hypothesis> = cands
                .iter()
                .map(|c| {
                    let mut h = group[c.parent].clone();
                    if let Some(y) = c.token {
                        let e = expansions[c.parent].as_ref().expect("active parent expanded");
                        let ent = *penalized_entropy.entry(c.parent).or_insert_with(|| {
                            let pen: Vec<f64> = e
                                .log_probs
                                .iter()
                                .zip(&penalty)
                                .map(|(lp, p)| lp - p)
                                .collect();
                            entropy_from_log_probs(&log_softmax(&pen))
                        });
                        let lp = e.log_probs[y as usize].min(0.0);
                        let pen_lp = lp - penalty[y as usize];
                        h.push(
                            TraceStep {
                                token: y,
                                log_prob: pen_lp,
                                entropy: ent,
                                base_log_prob: lp,
                                base_entropy: e.entropy,
                                score: pen_lp,
                            },
                            pen_lp,
                        );
                        if y == eos {
                            h.finish();
                        }
                        emitted.push(y);
                    }
                    h
                })
                .collect();
            *group = next;
        }
        if groups.iter().flatten().all(Hypothesis::is_finished) {
            break;
        }
    }
    Ok(groups)
}
