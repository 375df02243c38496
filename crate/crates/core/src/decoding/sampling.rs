use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{run_single_path, Choice, DecodeError, Decoded, StrategyParams};
use crate::model::math::{hash_str, log_softmax, mix_hash, rank_desc};
use crate::model::{LogitProvider, Need};
use crate::types::Diagnostics;

/// RNG for one (seed, item) pair; identical inputs replay identical draws.
pub fn sampling_rng(seed: u64, item_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_hash(seed, [hash_str(item_id)]))
}

/// Inverse-CDF draw: the first index whose cumulative mass exceeds `u`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    // rounding left u above the total mass
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("distribution has positive mass")
}

/// Smallest probability-sorted prefix with mass at least `p`, returned in
/// ascending token order.
pub fn nucleus(probs: &[f64], p: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| rank_desc((a, probs[a]), (b, probs[b])));
    let mut cum = 0.0;
    let mut keep = idx.len();
    for (i, &t) in idx.iter().enumerate() {
        cum += probs[t];
        if cum >= p - 1e-12 {
            keep = i + 1;
            break;
        }
    }
    idx.truncate(keep);
    idx.sort_unstable();
    idx
}

/// Temperature or nucleus sampling, reproducible from `(seed, item_id)`.
pub fn decode_sampled(
    model: &dyn LogitProvider,
    prompt: &[u32],
    params: &StrategyParams,
    item_id: &str,
    max_new: usize,
) -> Result<Decoded, DecodeError> {
    let (temperature, top_p, seed) = match params {
        StrategyParams::Temperature(p) => (p.t, 1.0, p.seed),
        StrategyParams::TopP(p) => (1.0, p.p, p.seed),
        other => {
            return Err(DecodeError::InvalidConfig(format!(
                "{} is not a sampling strategy",
                other.id()
            )))
        }
    };
    params.validate()?;
    let mut rng = sampling_rng(seed, item_id);
    let (output, stop) = run_single_path(model, prompt, max_new, Need::FINAL, |view| {
        let scaled: Vec<f64> = view
            .out
            .final_logits
            .iter()
            .map(|z| z / temperature)
            .collect();
        let lp = log_softmax(&scaled);
        let support = if top_p < 1.0 {
            let probs: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
            nucleus(&probs, top_p)
        } else {
            (0..lp.len()).collect()
        };
        let sub = crate::model::math::log_softmax_over(&lp, &support);
        let probs: Vec<f64> = sub.iter().map(|x| x.exp()).collect();
        let u: f64 = rng.gen();
        let token = support[sample_index(&probs, u)];
        Ok(Choice::from_support(token as u32, &support, &sub, lp[token]))
    })?;
    Ok(Decoded {
        output,
        stop,
        diagnostics: Diagnostics::default(),
    })
}
