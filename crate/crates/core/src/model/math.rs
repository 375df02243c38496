//! Numeric helpers over logit and probability vectors.

use std::cmp::Ordering;

/// Softmax with max subtraction. Entries are positive whenever the inputs
/// are finite and within ~700 of the maximum.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&z| z - lse).collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Shannon entropy (nats) of a distribution given by its log-probabilities.
pub fn entropy_from_log_probs(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .filter(|lp| lp.is_finite())
        .map(|&lp| {
            let p = lp.exp();
            if p > 0.0 {
                p * lp
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Descending by value, ascending by index on ties.
pub fn rank_desc(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    argmax_over(values, 0..values.len()).expect("argmax of empty slice")
}

/// Argmax restricted to `support`; lowest index wins ties.
pub fn argmax_over(values: &[f64], support: impl IntoIterator<Item = usize>) -> Option<usize> {
    support
        .into_iter()
        .map(|i| (i, values[i]))
        .min_by(|&a, &b| rank_desc(a, b))
        .map(|(i, _)| i)
}

/// The `k` highest-valued indices, best first.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| rank_desc((a, values[a]), (b, values[b])));
    idx.truncate(k.min(values.len()));
    idx
}

/// Log-softmax of `scores` over `support` only, in support order.
pub fn log_softmax_over(scores: &[f64], support: &[usize]) -> Vec<f64> {
    let sub: Vec<f64> = support.iter().map(|&i| scores[i]).collect();
    log_softmax(&sub)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable, platform-independent hash of a word sequence.
pub fn mix_hash(seed: u64, words: impl IntoIterator<Item = u64>) -> u64 {
    words
        .into_iter()
        .fold(splitmix64(seed), |acc, w| splitmix64(acc ^ splitmix64(w)))
}

/// Stable hash of a string (FNV-1a folded through splitmix).
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// p_i = 1 / sum_j exp(z_j - z_i), summed with Kahan compensation.
    fn softmax_oracle(z: &[f64]) -> Vec<f64> {
        z.iter()
            .map(|&zi| {
                let (mut sum, mut c) = (0.0f64, 0.0f64);
                for &zj in z {
                    let y = (zj - zi).exp() - c;
                    let t = sum + y;
                    c = (t - sum) - y;
                    sum = t;
                }
                1.0 / sum
            })
            .collect()
    }

    #[test]
    fn uniform_softmax() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
    }

    #[test]
    fn shifted_pair() {
        for c in [-30.0, -1.0, 0.0, 2.5, 30.0] {
            let p = softmax(&[c, c + std::f64::consts::LN_2]);
            assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
            assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_vectors_match_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let z: Vec<f64> = (0..8).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let p = softmax(&z);
            let o = softmax_oracle(&z);
            for (a, b) in p.iter().zip(&o) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let p = softmax(&[1000.0, 1000.0, -1e9]);
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(top_k(&[0.1, 0.5, 0.5, 0.3], 3), vec![1, 2, 3]);
        assert_eq!(argmax_over(&[0.4, 0.4, 0.9], [1, 0]), Some(0));
    }

    #[test]
    fn entropy_routes_agree() {
        let p = [0.5, 0.25, 0.125, 0.125];
        let lp: Vec<f64> = p.iter().map(|x: &f64| x.ln()).collect();
        assert!((entropy(&p) - entropy_from_log_probs(&lp)).abs() < 1e-15);
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(z in proptest::collection::vec(-20.0f64..20.0, 1..12), c in -30.0f64..30.0) {
            let p = softmax(&z);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax(&shifted);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!(*a > 0.0);
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn log_softmax_matches_softmax(z in proptest::collection::vec(-20.0f64..20.0, 1..12)) {
            let p = softmax(&z);
            for (lp, pi) in log_softmax(&z).iter().zip(&p) {
                prop_assert!((lp.exp() - pi).abs() < 1e-12);
            }
        }
    }
}
