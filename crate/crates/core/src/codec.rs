//! Text ↔ token-id mapping for toy providers.
//!
//! Real deployments tokenize on the model side; toy models only need a
//! stable, reversible-enough mapping. Word `t{n}` maps to id `n` when `n` is
//! a valid non-eos id; any other word hashes to a non-eos id. Decoding
//! renders ids as `t{n}` and drops eos.

use serde::{Deserialize, Serialize};

use crate::model::math::hash_str;
use crate::quality::normalize_text;
use crate::types::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCodec {
    vocab: Vocabulary,
}

impl WordCodec {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn word_id(&self, word: &str) -> u32 {
        let size = self.vocab.size() as u64;
        let eos = self.vocab.eos_id();
        if let Some(n) = word.strip_prefix('t').and_then(|d| d.parse::<u32>().ok()) {
            if u64::from(n) < size && n != eos {
                return n;
            }
        }
        // hash into the ids other than eos
        let slot = (hash_str(word) % (size - 1)) as u32;
        if slot >= eos {
            slot + 1
        } else {
            slot
        }
    }

    /// Normalized words of `text` mapped to ids; never emits eos.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        normalize_text(text).iter().map(|w| self.word_id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&t| t != self.vocab.eos_id())
            .map(|t| format!("t{t}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn codec() -> WordCodec {
        WordCodec::new(Vocabulary::new(16, 0).unwrap())
    }

    #[test]
    fn numbered_words_round_trip() {
        let c = codec();
        assert_eq!(c.encode("t3 T5, t15"), vec![3, 5, 15]);
        assert_eq!(c.decode(&[3, 5, 0, 15]), "t3 t5 t15");
        assert_eq!(c.encode(&c.decode(&[1, 2, 3])), vec![1, 2, 3]);
    }

    #[test]
    fn unknown_words_are_stable_and_never_eos() {
        let c = codec();
        let a = c.encode("the cat sat on the mat");
        assert_eq!(a, c.encode("The cat sat on the mat!"));
        assert_eq!(a[0], a[4]);
        // t0 is eos and t99 is out of range: both hash
        assert!(c.encode("t0 t99").iter().all(|&t| t != 0 && t < 16));
    }

    proptest! {
        #[test]
        fn ids_always_valid(text in "[a-z ]{0,40}") {
            let c = codec();
            for t in c.encode(&text) {
                prop_assert!(t != 0 && t < 16);
            }
        }
    }
}
