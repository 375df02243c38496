//! Native quality metrics, min-max normalization, and the scorer abstraction
//! shared by native and remote (model-based) metrics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{ScoreItem, ScoreResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QualityError {
    #[error("degenerate quality: all {0} scores are equal")]
    Degenerate(usize),
    #[error("cannot normalize an empty score list")]
    Empty,
    #[error("non-finite quality score {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("scorer omitted items: {0:?}")]
    MissingItems(Vec<String>),
    #[error("scorer returned ids that were not requested: {0:?}")]
    UnexpectedItems(Vec<String>),
    #[error("scorer returned item {0:?} more than once")]
    DuplicateItem(String),
    #[error("score {score} for item {id:?} is outside the declared range [{lo}, {hi}]")]
    RangeViolation { id: String, score: f64, lo: f64, hi: f64 },
    #[error("scorer timed out: {0}")]
    Timeout(String),
    #[error("scorer protocol error: {0}")]
    Protocol(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

/// Lowercase, replace punctuation with nothing, split on whitespace.
pub fn normalize_text(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|&c| !(c.is_ascii_punctuation() || is_unicode_punct(c)))
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '\u{3001}'..='\u{3003}' | '¡' | '¿' | '«' | '»'
    )
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// RougeL F1 over normalized token lists.
pub fn rouge_l_tokens<T: PartialEq>(hyp: &[T], reference: &[T]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(hyp, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / hyp.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_l(hyp: &str, reference: &str) -> f64 {
    rouge_l_tokens(&normalize_text(hyp), &normalize_text(reference))
}

/// Best RougeL over several references; 0 when there are none.
pub fn rouge_l_multi<S: AsRef<str>>(hyp: &str, references: &[S]) -> f64 {
    let h = normalize_text(hyp);
    references
        .iter()
        .map(|r| rouge_l_tokens(&h, &normalize_text(r.as_ref())))
        .fold(0.0, f64::max)
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence-level BLEU-4 over token lists.
///
/// Unigram precision is unsmoothed; bigram to 4-gram precisions use add-one
/// smoothing `(matches + 1) / (total + 1)`. The brevity penalty is
/// `exp(1 - r/c)` when the hypothesis is shorter than the reference.
pub fn bleu_tokens<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        let total: usize = h.values().sum();
        let matched: usize = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / 4.0;
    }
    let (c, r) = (hyp.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * log_sum.exp()
}

pub fn bleu(hyp: &str, reference: &str) -> f64 {
    bleu_tokens(&normalize_text(hyp), &normalize_text(reference))
}

/// Best BLEU over several references; 0 when there are none.
pub fn bleu_multi<S: AsRef<str>>(hyp: &str, references: &[S]) -> f64 {
    let h = normalize_text(hyp);
    references
        .iter()
        .map(|r| bleu_tokens(&h, &normalize_text(r.as_ref())))
        .fold(0.0, f64::max)
}

/// Fraction of distinct n-grams; 0 when the sequence has fewer than `n`
/// tokens.
pub fn distinct_n<T: Eq + Hash>(tokens: &[T], n: usize) -> f64 {
    assert!(n >= 1, "distinct-n needs n >= 1");
    if tokens.len() < n {
        return 0.0;
    }
    let total = tokens.len() - n + 1;
    let unique: HashSet<&[T]> = tokens.windows(n).collect();
    unique.len() as f64 / total as f64
}

/// Sentence-level Distinct-n averaged over outputs; 0 for no outputs.
pub fn mean_distinct_n<T: Eq + Hash, S: AsRef<[T]>>(outputs: &[S], n: usize) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    outputs
        .iter()
        .map(|s| distinct_n(s.as_ref(), n))
        .sum::<f64>()
        / outputs.len() as f64
}

/// `(s - min) / (max - min)`; a constant list is degenerate.
pub fn minmax_normalize(scores: &[f64]) -> Result<Vec<f64>, QualityError> {
    if scores.is_empty() {
        return Err(QualityError::Empty);
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(QualityError::NonFinite(bad));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Err(QualityError::Degenerate(scores.len()));
    }
    let span = hi - lo;
    Ok(scores.iter().map(|s| (s - lo) / span).collect())
}

/// What a scorer declares about itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerInfo {
    pub metric: String,
    pub range: [f64; 2],
}

/// A quality metric, native or remote.
pub trait Scorer: Send + Sync {
    fn info(&self) -> Result<ScorerInfo, ScoreError>;
    /// Scores one batch; results may come back in any order.
    fn score(&self, items: &[ScoreItem]) -> Result<Vec<ScoreResult>, ScoreError>;
}

/// Matches scorer output to the request, returning scores in request order.
/// Missing, duplicate, or unexpected ids and out-of-range values are errors.
pub fn validate_scores(
    info: &ScorerInfo,
    items: &[ScoreItem],
    results: &[ScoreResult],
) -> Result<Vec<f64>, ScoreError> {
    let mut by_id: BTreeMap<&str, f64> = BTreeMap::new();
    for r in results {
        if by_id.insert(r.id.as_str(), r.score).is_some() {
            return Err(ScoreError::DuplicateItem(r.id.clone()));
        }
    }
    let requested: HashSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
    let unexpected: Vec<String> = by_id
        .keys()
        .filter(|k| !requested.contains(*k))
        .map(|k| k.to_string())
        .collect();
    if !unexpected.is_empty() {
        return Err(ScoreError::UnexpectedItems(unexpected));
    }
    let missing: Vec<String> = items
        .iter()
        .filter(|i| !by_id.contains_key(i.id.as_str()))
        .map(|i| i.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ScoreError::MissingItems(missing));
    }
    let [lo, hi] = info.range;
    items
        .iter()
        .map(|i| {
            let s = by_id[i.id.as_str()];
            if s.is_finite() && s >= lo && s <= hi {
                Ok(s)
            } else {
                Err(ScoreError::RangeViolation {
                    id: i.id.clone(),
                    score: s,
                    lo,
                    hi,
                })
            }
        })
        .collect()
}

/// Scores a batch and validates the response against the declared range.
pub fn score_checked(scorer: &dyn Scorer, items: &[ScoreItem]) -> Result<Vec<f64>, ScoreError> {
    let info = scorer.info()?;
    let results = scorer.score(items)?;
    validate_scores(&info, items, &results)
}

/// Built-in text metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NativeMetric {
    #[serde(alias = "rougeL", alias = "rouge_l")]
    Rougel,
    Bleu,
}

impl NativeMetric {
    pub fn name(&self) -> &'static str {
        match self {
            NativeMetric::Rougel => "rougel",
            NativeMetric::Bleu => "bleu",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "rougel" | "rouge_l" | "rouge-l" => Some(NativeMetric::Rougel),
            "bleu" => Some(NativeMetric::Bleu),
            _ => None,
        }
    }

    /// Scores one hypothesis against its references (max over references).
    pub fn score<S: AsRef<str>>(&self, hyp: &str, references: &[S]) -> f64 {
        match self {
            NativeMetric::Rougel => rouge_l_multi(hyp, references),
            NativeMetric::Bleu => bleu_multi(hyp, references),
        }
    }
}

/// A native metric behind the [`Scorer`] interface.
#[derive(Debug, Clone, Copy)]
pub struct NativeScorer(pub NativeMetric);

impl Scorer for NativeScorer {
    fn info(&self) -> Result<ScorerInfo, ScoreError> {
        Ok(ScorerInfo {
            metric: self.0.name().to_owned(),
            range: [0.0, 1.0],
        })
    }

    fn score(&self, items: &[ScoreItem]) -> Result<Vec<ScoreResult>, ScoreError> {
        Ok(items
            .iter()
            .map(|i| ScoreResult {
                id: i.id.clone(),
                score: self.0.score(&i.hypothesis, std::slice::from_ref(&i.reference)),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_pipeline() {
        assert_eq!(normalize_text("  The Cat, sat!  "), vec!["the", "cat", "sat"]);
        assert_eq!(normalize_text("don't"), vec!["dont"]);
        assert!(normalize_text("?!").is_empty());
    }

    #[test]
    fn rouge_hand_cases() {
        assert_eq!(rouge_l("a b c", "a b c"), 1.0);
        assert_eq!(rouge_l("a b", "c d"), 0.0);
        assert!((rouge_l("a b c d", "a c d e") - 0.75).abs() < 1e-15);
        assert_eq!(rouge_l("", "a"), 0.0);
        // hyp/ref roles differ in P and R but F1 is symmetric; shorter hyp
        let f = rouge_l("a b", "a b c d");
        assert!((f - 2.0 * 1.0 * 0.5 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn rouge_multi_takes_max() {
        assert_eq!(rouge_l_multi("paris", &["london", "Paris."]), 1.0);
        assert_eq!(rouge_l_multi::<&str>("paris", &[]), 0.0);
    }

    #[test]
    fn bleu_worksheet() {
        // p1 = 3/3; p2 = (2+1)/(2+1); p3 = (1+1)/(1+1); p4 = (0+1)/(0+1)
        // BP = exp(1 - 4/3)
        let want = (1.0f64 - 4.0 / 3.0).exp();
        assert!((bleu("the cat sat", "the cat sat down") - want).abs() < 1e-15);
        assert!((want - 0.716_531_310_573_789_3).abs() < 1e-15);
    }

    #[test]
    fn bleu_identical_and_disjoint() {
        assert_eq!(bleu("a b c d e", "a b c d e"), 1.0);
        assert_eq!(bleu("a b c d", "e f g h"), 0.0);
        assert_eq!(bleu("", "a"), 0.0);
    }

    #[test]
    fn bleu_clips_repeated_ngrams() {
        // p1 = 2/7 (the appears twice in ref); p2..p4 all zero matches
        let h = "the the the the the the the";
        let r = "the cat is on the mat";
        let want = ((2.0f64 / 7.0).ln() + (1.0f64 / 7.0).ln() + (1.0f64 / 6.0).ln() + (1.0f64 / 5.0).ln())
            / 4.0;
        assert!((bleu(h, r) - want.exp()).abs() < 1e-15);
    }

    #[test]
    fn distinct_hand_cases() {
        assert_eq!(distinct_n(&["a", "b", "c", "d"], 1), 1.0);
        assert_eq!(distinct_n(&["a", "a", "a"], 1), 1.0 / 3.0);
        assert_eq!(distinct_n(&["a", "b", "a", "b"], 2), 2.0 / 3.0);
        assert_eq!(distinct_n(&["a"], 2), 0.0);
        let outs = vec![vec![1u32, 1, 1], vec![1, 2, 3]];
        assert!((mean_distinct_n(&outs, 1) - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn minmax_cases() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(
            minmax_normalize(&[5.0, 5.0, 5.0]),
            Err(QualityError::Degenerate(3))
        );
        assert_eq!(minmax_normalize(&[]), Err(QualityError::Empty));
        assert!(minmax_normalize(&[1.0, f64::NAN]).is_err());
    }

    fn item(id: &str) -> ScoreItem {
        ScoreItem {
            id: id.into(),
            hypothesis: "a".into(),
            reference: "a".into(),
            aux: None,
        }
    }

    fn res(id: &str, score: f64) -> ScoreResult {
        ScoreResult {
            id: id.into(),
            score,
        }
    }

    #[test]
    fn score_validation_guards() {
        let info = ScorerInfo {
            metric: "m".into(),
            range: [0.0, 1.0],
        };
        let items = [item("a"), item("b")];
        assert_eq!(
            validate_scores(&info, &items, &[res("b", 0.2), res("a", 0.5)]).unwrap(),
            vec![0.5, 0.2]
        );
        assert_eq!(
            validate_scores(&info, &items, &[res("a", 0.5)]),
            Err(ScoreError::MissingItems(vec!["b".into()]))
        );
        assert!(matches!(
            validate_scores(&info, &items, &[res("a", 0.5), res("b", 1.7)]),
            Err(ScoreError::RangeViolation { ref id, .. }) if id == "b"
        ));
        assert!(matches!(
            validate_scores(&info, &items, &[res("a", 0.5), res("b", 0.1), res("z", 0.1)]),
            Err(ScoreError::UnexpectedItems(_))
        ));
        assert!(matches!(
            validate_scores(&info, &items, &[res("a", 0.5), res("a", 0.1)]),
            Err(ScoreError::DuplicateItem(_))
        ));
    }

    #[test]
    fn native_scorer_round_trip() {
        let s = NativeScorer(NativeMetric::Rougel);
        let items = vec![
            ScoreItem {
                id: "1".into(),
                hypothesis: "a b c d".into(),
                reference: "a c d e".into(),
                aux: None,
            },
            item("2"),
        ];
        let got = score_checked(&s, &items).unwrap();
        assert!((got[0] - 0.75).abs() < 1e-15);
        assert_eq!(got[1], 1.0);
        assert_eq!(NativeMetric::parse("RougeL"), Some(NativeMetric::Rougel));
    }

    fn words() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec("[a-e]", 0..12)
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_identity(h in words(), r in words()) {
            let (hs, rs) = (h.join(" "), r.join(" "));
            for v in [rouge_l(&hs, &rs), bleu(&hs, &rs)] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
            if !h.is_empty() {
                prop_assert!((rouge_l(&hs, &hs) - 1.0).abs() < 1e-12);
                prop_assert!((bleu(&hs, &hs) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn disjoint_vocabularies_score_zero(h in proptest::collection::vec("[a-e]", 1..8),
                                            r in proptest::collection::vec("[f-j]", 1..8)) {
            prop_assert_eq!(rouge_l(&h.join(" "), &r.join(" ")), 0.0);
            prop_assert_eq!(bleu(&h.join(" "), &r.join(" ")), 0.0);
        }

        #[test]
        fn distinct_invariant_under_relabeling(seq in proptest::collection::vec(0u32..6, 0..20),
                                               shift in 1u32..100, n in 1usize..4) {
            // x -> x * 7 + shift is injective
            let relabeled: Vec<u32> = seq.iter().map(|x| x * 7 + shift).collect();
            prop_assert_eq!(distinct_n(&seq, n), distinct_n(&relabeled, n));
        }

        #[test]
        fn distinct_is_one_for_unique_ngrams(len in 1usize..20, n in 1usize..4) {
            let seq: Vec<usize> = (0..len).collect();
            if len >= n {
                prop_assert_eq!(distinct_n(&seq, n), 1.0);
            }
        }

        #[test]
        fn minmax_preserves_order(xs in proptest::collection::vec(-1e6f64..1e6, 2..100)) {
            if let Ok(norm) = minmax_normalize(&xs) {
                let imin = xs.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                let imax = xs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                prop_assert_eq!(norm[imin], 0.0);
                prop_assert_eq!(norm[imax], 1.0);
                for i in 0..xs.len() {
                    for j in 0..xs.len() {
                        prop_assert_eq!(xs[i] <= xs[j], norm[i] <= norm[j]);
                    }
                }
            }
        }
    }
}
