use super::{run_single_path, Choice, DecodeError, Decoded, DolaParams, SledParams};
use crate::model::math::{argmax, argmax_over, log_softmax, log_softmax_over, softmax, top_k};
use crate::model::{LogitProvider, Need};
use crate::types::Diagnostics;

/// Jensen-Shannon divergence in nats; lies in `[0, ln 2]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, DecodeError> {
    if p.len() != q.len() {
        return Err(DecodeError::LengthMismatch(p.len(), q.len()));
    }
    let half_kl = |a: f64, m: f64| if a > 0.0 { 0.5 * a * (a / m).ln() } else { 0.0 };
    let d: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            half_kl(a, m) + half_kl(b, m)
        })
        .sum();
    Ok(d.clamp(0.0, std::f64::consts::LN_2))
}

fn check_layers(model: &dyn LogitProvider) -> Result<usize, DecodeError> {
    let caps = model.capabilities();
    caps.supports(Need::LAYERS).map_err(DecodeError::Capability)?;
    Ok(caps.layer_count)
}

/// Layer-contrastive decoding.
///
/// At each step the premature layer is the one in `bucket` whose softmax has
/// the largest JS divergence from the final layer's. Tokens whose final
/// probability is at least `head_ratio` times the maximum are scored by the
/// log-probability difference between final and premature layer. When every
/// candidate layer matches the final layer the final argmax is emitted.
pub fn decode_dola(
    model: &dyn LogitProvider,
    prompt: &[u32],
    params: &DolaParams,
    max_new: usize,
) -> Result<Decoded, DecodeError> {
    let layer_count = check_layers(model)?;
    let [lo, hi] = params.bucket;
    if lo >= hi || hi > layer_count - 1 {
        return Err(DecodeError::InvalidConfig(format!(
            "layer bucket [{lo}, {hi}) invalid for {layer_count} layers (final layer {})",
            layer_count - 1
        )));
    }
    let mut diagnostics = Diagnostics::default();
    let (output, stop) = run_single_path(model, prompt, max_new, Need::LAYERS, |view| {
        let layers = view
            .out
            .layer_logits
            .as_ref()
            .expect("checked step returns requested layers");
        let p_final = softmax(&view.out.final_logits);
        let mut best: Option<(usize, f64)> = None;
        for (l, logits) in layers.iter().enumerate().take(hi).skip(lo) {
            let d = jsd(&softmax(logits), &p_final)?;
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((l, d));
            }
        }
        let (layer, div) = best.expect("bucket non-empty");
        diagnostics.premature_layers.push(layer);
        let lf = view.base_log_probs;
        if div <= 0.0 {
            let token = argmax(lf);
            let all: Vec<usize> = (0..lf.len()).collect();
            return Ok(Choice::from_support(token as u32, &all, lf, lf[token]));
        }
        let lp = log_softmax(&layers[layer]);
        let pmax = p_final.iter().copied().fold(0.0, f64::max);
        let head: Vec<usize> = (0..lf.len())
            .filter(|&y| p_final[y] >= params.head_ratio * pmax)
            .collect();
        let adjusted: Vec<f64> = lf.iter().zip(&lp).map(|(f, p)| f - p).collect();
        let token = argmax_over(&adjusted, head.iter().copied()).expect("head holds the argmax");
        let renorm = log_softmax_over(&adjusted, &head);
        Ok(Choice::from_support(token as u32, &head, &renorm, adjusted[token]))
    })?;
    Ok(Decoded {
        output,
        stop,
        diagnostics,
    })
}

/// Self-logits evolution.
///
/// Over the top-`n` final-layer tokens, logits move along
/// `softmax(z) - mean_l softmax(layer_l)` (mean over all premature layers)
/// with step size `alpha_evolve`, repeated `iterations` times; the argmax of
/// the evolved logits over the top-`n` set is emitted.
pub fn decode_sled(
    model: &dyn LogitProvider,
    prompt: &[u32],
    params: &SledParams,
    max_new: usize,
) -> Result<Decoded, DecodeError> {
    check_layers(model)?;
    let (output, stop) = run_single_path(model, prompt, max_new, Need::LAYERS, |view| {
        let layers = view
            .out
            .layer_logits
            .as_ref()
            .expect("checked step returns requested layers");
        let premature = &layers[..layers.len() - 1];
        let v = view.out.final_logits.len();
        let mut mean = vec![0.0; v];
        for logits in premature {
            for (m, p) in mean.iter_mut().zip(softmax(logits)) {
                *m += p / premature.len() as f64;
            }
        }
        let cands = top_k(&view.out.final_logits, params.n);
        let mut z = view.out.final_logits.clone();
        for _ in 0..params.iterations {
            let p = softmax(&z);
            for &y in &cands {
                z[y] += params.alpha_evolve * (p[y] - mean[y]);
            }
        }
        let token = argmax_over(&z, cands.iter().copied()).expect("n >= 1");
        let renorm = log_softmax_over(&z, &cands);
        Ok(Choice::from_support(token as u32, &cands, &renorm, z[token]))
    })?;
    Ok(Decoded {
        output,
        stop,
        diagnostics: Diagnostics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::decode_greedy;
    use crate::model::{ScriptedLM, SyntheticLayeredLM, SyntheticSpec, TableLM};
    use crate::types::Vocabulary;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// 0.5 KL(p||m) + 0.5 KL(q||m), written out term by term.
    fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
        let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
        let kl = |a: &[f64]| -> f64 {
            let mut s = 0.0;
            for i in 0..a.len() {
                if a[i] > 0.0 {
                    s += a[i] * (a[i].ln() - m[i].ln());
                }
            }
            s
        };
        0.5 * kl(p) + 0.5 * kl(q)
    }

    fn random_dist(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn jsd_closed_forms() {
        assert_eq!(jsd(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(), 0.0);
        let d = jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            jsd(&[1.0], &[0.5, 0.5]),
            Err(DecodeError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn jsd_matches_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = random_dist(&mut rng, 6);
            let q = random_dist(&mut rng, 6);
            assert!((jsd(&p, &q).unwrap() - jsd_oracle(&p, &q)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn jsd_symmetric_and_bounded(seed in 0u64..10_000, n in 2usize..10) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = random_dist(&mut rng, n);
            let q = random_dist(&mut rng, n);
            let a = jsd(&p, &q).unwrap();
            let b = jsd(&q, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=std::f64::consts::LN_2).contains(&a));
        }
    }

    fn two_layer(premature: [f64; 2], fin: [f64; 2]) -> ScriptedLM {
        let ln = |p: [f64; 2]| p.iter().map(|x| x.ln()).collect::<Vec<_>>();
        let mut lm = ScriptedLM::new(Vocabulary::new(2, 1).unwrap(), 1, 2, 0);
        lm.set(vec![0], ln(fin), vec![ln(premature)], None);
        lm
    }

    #[test]
    fn dola_two_layer_hand_case() {
        // ln .9 - ln .5 = 0.5878 vs ln .1 - ln .5 = -1.6094
        let lm = two_layer([0.5, 0.5], [0.9, 0.1]);
        let params = DolaParams {
            bucket: [0, 1],
            head_ratio: 0.1,
        };
        let d = decode_dola(&lm, &[0], &params, 1).unwrap();
        assert_eq!(d.output.generated(), &[0]);
        assert_eq!(d.diagnostics.premature_layers, vec![0]);
        assert!((d.output.score_trace()[0] - (0.9f64 / 0.5).ln()).abs() < 1e-12);
    }

    #[test]
    fn dola_contrast_can_overturn_final_argmax() {
        // final [0.6, 0.4], premature [0.9, 0.1]:
        // token 0: ln(.6/.9) = -0.405, token 1: ln(.4/.1) = 1.386
        let lm = two_layer([0.9, 0.1], [0.6, 0.4]);
        let params = DolaParams {
            bucket: [0, 1],
            head_ratio: 0.1,
        };
        let d = decode_dola(&lm, &[0], &params, 1).unwrap();
        assert_eq!(d.output.generated(), &[1]);
        // a strict head keeps only token 0
        let strict = DolaParams {
            bucket: [0, 1],
            head_ratio: 0.9,
        };
        assert_eq!(decode_dola(&lm, &[0], &strict, 1).unwrap().output.generated(), &[0]);
    }

    #[test]
    fn dola_identical_layers_fall_back_to_final_argmax() {
        let mut lm = ScriptedLM::new(Vocabulary::new(3, 2).unwrap(), 1, 3, 0);
        let z = vec![0.1, 1.5, -0.3];
        lm.set(vec![0], z.clone(), vec![z.clone(), z.clone()], None);
        let params = DolaParams {
            bucket: [0, 2],
            head_ratio: 0.1,
        };
        let d = decode_dola(&lm, &[0], &params, 1).unwrap();
        assert_eq!(d.output.generated(), &[1]);
    }

    #[test]
    fn dola_rejects_bad_bucket_and_missing_layers() {
        let lm = two_layer([0.5, 0.5], [0.9, 0.1]);
        let params = DolaParams {
            bucket: [0, 2],
            head_ratio: 0.1,
        };
        assert!(matches!(
            decode_dola(&lm, &[0], &params, 1),
            Err(DecodeError::InvalidConfig(_))
        ));
        let table = TableLM::new(Vocabulary::new(2, 1).unwrap(), 1);
        let ok = DolaParams {
            bucket: [0, 1],
            head_ratio: 0.1,
        };
        assert!(matches!(
            decode_dola(&table, &[0], &ok, 1),
            Err(DecodeError::Capability(_))
        ));
        let sled = SledParams {
            n: 2,
            alpha_evolve: 1.0,
            iterations: 1,
        };
        assert!(matches!(
            decode_sled(&table, &[0], &sled, 1),
            Err(DecodeError::Capability(_))
        ));
    }

    #[test]
    fn dola_picks_most_divergent_layer() {
        let ln = |p: [f64; 2]| p.iter().map(|x| x.ln()).collect::<Vec<_>>();
        let mut lm = ScriptedLM::new(Vocabulary::new(2, 1).unwrap(), 1, 4, 0);
        lm.set(
            vec![0],
            ln([0.9, 0.1]),
            vec![ln([0.8, 0.2]), ln([0.3, 0.7]), ln([0.5, 0.5])],
            None,
        );
        let params = DolaParams {
            bucket: [0, 3],
            head_ratio: 0.1,
        };
        let d = decode_dola(&lm, &[0], &params, 1).unwrap();
        assert_eq!(d.diagnostics.premature_layers, vec![1]);
    }

    #[test]
    fn sled_hand_case() {
        // final z = ln[0.5, 0.4, 0.1], one premature layer softmax [0.2, 0.7, 0.1]
        // top-2 = {0, 1}; d = [0.3, -0.3]; alpha 5:
        // z'0 = ln .5 + 1.5 = 0.8069, z'1 = ln .4 - 1.5 = -2.4163 -> token 0
        // alpha 0 keeps the final argmax too; a premature layer that prefers
        // token 0 pushes towards token 1 instead
        let ln = |p: [f64; 3]| p.iter().map(|x| x.ln()).collect::<Vec<_>>();
        let mut lm = ScriptedLM::new(Vocabulary::new(3, 2).unwrap(), 1, 2, 0);
        lm.set(vec![0], ln([0.5, 0.4, 0.1]), vec![ln([0.2, 0.7, 0.1])], None);
        lm.set(vec![1], ln([0.45, 0.44, 0.11]), vec![ln([0.9, 0.05, 0.05])], None);
        let p = |alpha_evolve| SledParams {
            n: 2,
            alpha_evolve,
            iterations: 1,
        };
        let d = decode_sled(&lm, &[0], &p(5.0), 1).unwrap();
        assert_eq!(d.output.generated(), &[0]);
        assert!((d.output.score_trace()[0] - (0.5f64.ln() + 1.5)).abs() < 1e-12);
        // context [1]: d = [0.45-0.9, 0.44-0.05] = [-0.45, 0.39];
        // alpha 1: z'0 = ln .45 - .45 = -1.2485, z'1 = ln .44 + .39 = -0.4309
        let e = decode_sled(&lm, &[1], &p(1.0), 1).unwrap();
        assert_eq!(e.output.generated(), &[1]);
        let want = 0.44f64.ln() + (0.44 - 0.05);
        assert!((e.output.score_trace()[0] - want).abs() < 1e-12);
        let g = decode_sled(&lm, &[1], &p(0.0), 1).unwrap();
        assert_eq!(g.output.generated(), &[0]);
    }

    #[test]
    fn sled_zero_alpha_is_greedy() {
        for seed in 0..10 {
            let lm = SyntheticLayeredLM::new(SyntheticSpec {
                seed,
                ..SyntheticSpec::default()
            })
            .unwrap();
            let g = decode_greedy(&lm, &[5], 10).unwrap();
            let s = decode_sled(
                &lm,
                &[5],
                &SledParams {
                    n: 5,
                    alpha_evolve: 0.0,
                    iterations: 1,
                },
                10,
            )
            .unwrap();
            assert_eq!(g.output.generated(), s.output.generated());
        }
    }
}
