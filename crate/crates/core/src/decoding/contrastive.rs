use super::{
    lookahead_hidden, prompt_hiddens, provider_step, run_single_path, CdParams, Choice, CsParams,
    DecodeError, Decoded,
};
use crate::model::math::{argmax, argmax_over, cosine, log_softmax_over, softmax, top_k};
use crate::model::{LogitProvider, Need};
use crate::types::Diagnostics;

/// Contrastive search.
///
/// Candidates are the top-`k` tokens by model probability. Each candidate is
/// scored `(1 - alpha) * p(y) - alpha * max_j cos(h_y, h_j)` where `h_y` is
/// the hidden state after appending `y` (one extra provider step per
/// candidate) and `h_j` ranges over all earlier positions, prompt included.
pub fn decode_cs(
    model: &dyn LogitProvider,
    prompt: &[u32],
    params: &CsParams,
    max_new: usize,
) -> Result<Decoded, DecodeError> {
    super::check_prompt(prompt)?;
    model
        .capabilities()
        .supports(Need::HIDDEN)
        .map_err(DecodeError::Capability)?;
    let mut history = prompt_hiddens(model, prompt)?;
    let mut diagnostics = Diagnostics::default();
    let alpha = params.alpha;
    let (output, stop) = run_single_path(model, prompt, max_new, Need::FINAL, |view| {
        let cands = top_k(view.base_log_probs, params.k);
        let mut scores = vec![f64::NEG_INFINITY; view.base_log_probs.len()];
        let mut penalties = vec![0.0; view.base_log_probs.len()];
        let mut hiddens = Vec::with_capacity(cands.len());
        for &y in &cands {
            let h = lookahead_hidden(model, view.context, y as u32, view.step)?;
            let penalty = history
                .iter()
                .map(|prev| cosine(&h, prev))
                .fold(f64::NEG_INFINITY, f64::max);
            let p = view.base_log_probs[y].exp();
            scores[y] = (1.0 - alpha) * p - alpha * penalty;
            penalties[y] = penalty;
            hiddens.push((y, h));
        }
        let token = argmax_over(&scores, cands.iter().copied()).expect("k >= 1");
        let renorm = log_softmax_over(view.base_log_probs, &cands);
        let mut choice = Choice::from_support(token as u32, &cands, &renorm, scores[token]);
        choice.score_delta = scores[token];
        let h = hiddens
            .into_iter()
            .find(|(y, _)| *y == token)
            .map(|(_, h)| h)
            .expect("chosen token was looked ahead");
        history.push(h.clone());
        choice.hidden = Some(h);
        diagnostics.degeneration_penalties.push(penalties[token]);
        Ok(choice)
    })?;
    Ok(Decoded {
        output,
        stop,
        diagnostics,
    })
}

/// Contrastive decoding between an expert and an amateur.
///
/// The candidate set holds tokens whose expert probability exceeds
/// `alpha_head` times the amateur's maximum probability; the emitted token
/// maximizes `(1 - beta) * z_expert - beta * z_amateur` over it. An empty
/// candidate set falls back to the expert argmax and is recorded.
pub fn decode_cd(
    expert: &dyn LogitProvider,
    amateur: &dyn LogitProvider,
    prompt: &[u32],
    params: &CdParams,
    max_new: usize,
) -> Result<Decoded, DecodeError> {
    let (ve, va) = (expert.vocab().size(), amateur.vocab().size());
    if ve != va {
        return Err(DecodeError::VocabMismatch {
            expert: ve,
            amateur: va,
        });
    }
    let mut diagnostics = Diagnostics::default();
    let (output, stop) = run_single_path(expert, prompt, max_new, Need::FINAL, |view| {
        let am = provider_step(amateur, view.context, Need::FINAL, view.step)?;
        let pe: Vec<f64> = view.base_log_probs.iter().map(|lp| lp.exp()).collect();
        let pa = softmax(&am.final_logits);
        let threshold = params.alpha_head * pa.iter().copied().fold(0.0, f64::max);
        let head: Vec<usize> = (0..pe.len()).filter(|&y| pe[y] > threshold).collect();
        if head.is_empty() {
            diagnostics.head_fallback_steps.push(view.step);
            let token = argmax(view.base_log_probs);
            let all: Vec<usize> = (0..pe.len()).collect();
            return Ok(Choice::from_support(
                token as u32,
                &all,
                view.base_log_probs,
                view.base_log_probs[token],
            ));
        }
        let ze = &view.out.final_logits;
        let za = &am.final_logits;
        let scores: Vec<f64> = ze
            .iter()
            .zip(za)
            .map(|(e, a)| (1.0 - params.beta) * e - params.beta * a)
            .collect();
        let token = argmax_over(&scores, head.iter().copied()).expect("head non-empty");
        let renorm = log_softmax_over(&scores, &head);
        Ok(Choice::from_support(token as u32, &head, &renorm, scores[token]))
    })?;
    Ok(Decoded {
        output,
        stop,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::decode_greedy;
    use crate::model::{logits_from_probs, ScriptedLM, SyntheticLayeredLM, SyntheticSpec, TableLM};
    use crate::types::Vocabulary;

    #[test]
    fn zero_alpha_cs_is_greedy() {
        for seed in 0..10 {
            let lm = SyntheticLayeredLM::new(SyntheticSpec {
                seed,
                vocab_size: 12,
                ..SyntheticSpec::default()
            })
            .unwrap();
            let g = decode_greedy(&lm, &[3, 4], 10).unwrap();
            let c = decode_cs(&lm, &[3, 4], &CsParams { k: 4, alpha: 0.0 }, 10).unwrap();
            assert_eq!(g.output.generated(), c.output.generated());
            assert_eq!(g.output.base_log_prob_trace(), c.output.base_log_prob_trace());
        }
    }

    #[test]
    fn duplicate_hidden_state_is_avoided() {
        // context [0]; candidates 1 (p=0.5) and 2 (p=0.3). The hidden state
        // after appending 1 equals the prompt's, after 2 it is orthogonal.
        let vocab = Vocabulary::new(4, 3).unwrap();
        let mut lm = ScriptedLM::new(vocab, 2, 1, 2);
        lm.set(
            vec![0],
            logits_from_probs(&[0.1, 0.5, 0.3, 0.1]),
            vec![],
            Some(vec![1.0, 0.0]),
        );
        lm.set_hidden(vec![0, 1], vec![2.0, 0.0]);
        lm.set_hidden(vec![0, 2], vec![0.0, 1.0]);
        // alpha 0.6: token 1 -> 0.4*0.5 - 0.6*1 = -0.4; token 2 -> 0.4*0.3 - 0 = 0.12
        let d = decode_cs(&lm, &[0], &CsParams { k: 2, alpha: 0.6 }, 1).unwrap();
        assert_eq!(d.output.generated(), &[2]);
        assert!((d.output.score_trace()[0] - 0.12).abs() < 1e-12);
        assert_eq!(d.diagnostics.degeneration_penalties, vec![0.0]);
        // renormalized over the top-2: 0.3 / 0.8
        assert!((d.output.prob_trace()[0] - 0.375).abs() < 1e-12);
        assert!((d.output.base_log_prob_trace()[0] - 0.3f64.ln()).abs() < 1e-12);
        let g = decode_cs(&lm, &[0], &CsParams { k: 2, alpha: 0.0 }, 1).unwrap();
        assert_eq!(g.output.generated(), &[1]);
    }

    #[test]
    fn cs_requires_hidden_states() {
        let lm = TableLM::new(Vocabulary::new(3, 2).unwrap(), 1);
        assert!(matches!(
            decode_cs(&lm, &[0], &CsParams { k: 2, alpha: 0.4 }, 3),
            Err(DecodeError::Capability(_))
        ));
    }

    fn two_row(expert: [f64; 3], amateur: [f64; 3]) -> (TableLM, TableLM) {
        let v = Vocabulary::new(3, 2).unwrap();
        let mut e = TableLM::new(v, 1);
        e.insert(vec![0], expert.to_vec()).unwrap();
        let mut a = TableLM::new(v, 1);
        a.insert(vec![0], amateur.to_vec()).unwrap();
        (e, a)
    }

    fn cd(beta: f64) -> CdParams {
        CdParams {
            alpha_head: 0.1,
            beta,
            amateur: "amateur".into(),
        }
    }

    #[test]
    fn contrastive_score_hand_computed() {
        let (e, a) = two_row([0.5, 0.3, 0.2], [0.6, 0.2, 0.2]);
        // threshold 0.1 * 0.6 = 0.06: every token is in the head.
        // 0.1 ln e - 0.9 ln a: t0 = 0.1 ln .5 - 0.9 ln .6 = 0.39043
        //                     t1 = 0.1 ln .3 - 0.9 ln .2 = 1.32811
        //                     t2 = 0.1 ln .2 - 0.9 ln .2 = 1.28755
        let d = decode_cd(&e, &a, &[0], &cd(0.9), 1).unwrap();
        assert_eq!(d.output.generated(), &[1]);
        let want = 0.1 * 0.3f64.ln() - 0.9 * 0.2f64.ln();
        assert!((d.output.score_trace()[0] - want).abs() < 1e-12);
        assert!(d.diagnostics.head_fallback_steps.is_empty());
    }

    #[test]
    fn zero_beta_is_expert_greedy() {
        let (e, a) = two_row([0.5, 0.3, 0.2], [0.1, 0.1, 0.8]);
        let d = decode_cd(&e, &a, &[0], &cd(0.0), 1).unwrap();
        assert_eq!(d.output.generated(), &[0]);
    }

    #[test]
    fn head_excludes_unlikely_tokens() {
        // token 2 has the best contrast but expert prob 0.05 <= 0.1 * 0.9
        let (e, a) = two_row([0.6, 0.35, 0.05], [0.9, 0.099, 0.001]);
        let d = decode_cd(&e, &a, &[0], &cd(0.9), 1).unwrap();
        assert_eq!(d.output.generated(), &[1]);
    }

    #[test]
    fn empty_head_falls_back_to_expert_argmax() {
        // 12 tokens; expert nearly flat (max 0.09) and amateur one-hot
        let v = Vocabulary::new(12, 11).unwrap();
        let mut pe = vec![0.0822; 12];
        pe[4] = 0.0958;
        let s: f64 = pe.iter().sum();
        pe.iter_mut().for_each(|p| *p /= s);
        let mut e = TableLM::new(v, 1);
        e.insert(vec![0], pe.clone()).unwrap();
        let mut pa = vec![0.0; 12];
        pa[0] = 1.0;
        let mut a = TableLM::new(v, 1);
        a.insert(vec![0], pa).unwrap();
        assert!(pe.iter().all(|&p| p <= 0.1));
        let d = decode_cd(&e, &a, &[0], &cd(0.5), 1).unwrap();
        assert_eq!(d.output.generated(), &[4]);
        assert_eq!(d.diagnostics.head_fallback_steps, vec![0]);
    }

    #[test]
    fn vocab_mismatch_rejected() {
        let e = TableLM::new(Vocabulary::new(3, 2).unwrap(), 1);
        let a = TableLM::new(Vocabulary::new(4, 2).unwrap(), 1);
        assert_eq!(
            decode_cd(&e, &a, &[0], &cd(0.5), 1).unwrap_err(),
            DecodeError::VocabMismatch {
                expert: 3,
                amateur: 4
            }
        );
    }
}
