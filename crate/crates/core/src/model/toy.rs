use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::math::mix_hash;
use super::{logits_from_probs, LogitProvider, ModelCapabilities, ModelError, Need};
use crate::types::{StepOutput, Vocabulary};

fn context_key(context: &[u32], order: usize) -> &[u32] {
    &context[context.len().saturating_sub(order)..]
}

/// Probability table keyed by the last `min(order, t)` context tokens.
/// Unseen contexts fall back to the uniform distribution.
#[derive(Debug, Clone)]
pub struct TableLM {
    caps: ModelCapabilities,
    order: usize,
    table: HashMap<Vec<u32>, Vec<f64>>,
    embeddings: Option<Vec<Vec<f64>>>,
}

impl TableLM {
    pub fn new(vocab: Vocabulary, order: usize) -> Self {
        assert!(order >= 1, "table order must be at least 1");
        Self {
            caps: ModelCapabilities::new(vocab, 1, false, false).expect("one layer is valid"),
            order,
            table: HashMap::new(),
            embeddings: None,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn insert(&mut self, context: Vec<u32>, probs: Vec<f64>) -> Result<(), ModelError> {
        let size = self.caps.vocab.size();
        if probs.len() != size {
            return Err(ModelError::VocabMismatch {
                expected: size,
                got: probs.len(),
            });
        }
        if context.is_empty() || context.len() > self.order {
            return Err(ModelError::Protocol(format!(
                "table key length {} not in 1..={}",
                context.len(),
                self.order
            )));
        }
        for &id in &context {
            self.caps.vocab.check(id)?;
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(ModelError::Protocol(format!(
                "table row must be a distribution (sum {sum})"
            )));
        }
        self.table.insert(context, probs);
        Ok(())
    }

    /// Gives every token an embedding; the hidden state of a position is the
    /// embedding of the token at that position.
    pub fn with_embeddings(mut self, embeddings: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if embeddings.len() != self.caps.vocab.size() {
            return Err(ModelError::VocabMismatch {
                expected: self.caps.vocab.size(),
                got: embeddings.len(),
            });
        }
        self.embeddings = Some(embeddings);
        self.caps.exposes_hidden_states = true;
        Ok(self)
    }

    /// Distribution for `context` as stored (or uniform).
    pub fn row(&self, context: &[u32]) -> Vec<f64> {
        let size = self.caps.vocab.size();
        self.table
            .get(context_key(context, self.order))
            .cloned()
            .unwrap_or_else(|| vec![1.0 / size as f64; size])
    }
}

impl LogitProvider for TableLM {
    fn capabilities(&self) -> &ModelCapabilities {
        &self.caps
    }

    fn step(&self, context: &[u32], need: Need) -> Result<StepOutput, ModelError> {
        self.caps.supports(need)?;
        let final_logits = logits_from_probs(&self.row(context));
        let hidden_state = match (&self.embeddings, need.hidden) {
            (Some(emb), true) => {
                let last = *context.last().ok_or(ModelError::EmptyContext)?;
                Some(emb[last as usize].clone())
            }
            _ => None,
        };
        Ok(StepOutput {
            final_logits,
            layer_logits: None,
            hidden_state,
            layer_count: 1,
        })
    }
}

/// A random [`TableLM`] with a row for every context of length `1..=order`.
///
/// Row entries are i.i.d. exponential weights raised to `sharpness`, so larger
/// values give peakier rows.
pub fn random_table_lm(vocab: Vocabulary, order: usize, sharpness: f64, seed: u64) -> TableLM {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lm = TableLM::new(vocab, order);
    let v = vocab.size() as u32;
    let mut keys: Vec<Vec<u32>> = (0..v).map(|t| vec![t]).collect();
    let mut frontier = keys.clone();
    for _ in 1..order {
        frontier = frontier
            .iter()
            .flat_map(|k| {
                (0..v).map(move |t| {
                    let mut nk = k.clone();
                    nk.push(t);
                    nk
                })
            })
            .collect();
        keys.extend(frontier.iter().cloned());
    }
    for key in keys {
        let w: Vec<f64> = (0..v)
            .map(|_| {
                let u: f64 = rng.gen_range(1e-12..1.0);
                (-u.ln()).powf(sharpness)
            })
            .collect();
        let sum: f64 = w.iter().sum();
        let mut row: Vec<f64> = w.iter().map(|x| x / sum).collect();
        // fold rounding residue into the largest entry
        let resid = 1.0 - row.iter().sum::<f64>();
        let imax = super::math::argmax(&row);
        row[imax] += resid;
        lm.insert(key, row).expect("generated row is a distribution");
    }
    lm
}

/// Hand-crafted step outputs keyed by context suffix, for targeted tests.
/// Unscripted contexts get uniform logits on every layer and a zero hidden
/// state.
#[derive(Debug, Clone)]
pub struct ScriptedLM {
    caps: ModelCapabilities,
    order: usize,
    hidden_dim: usize,
    script: HashMap<Vec<u32>, StepOutput>,
}

impl ScriptedLM {
    pub fn new(vocab: Vocabulary, order: usize, layer_count: usize, hidden_dim: usize) -> Self {
        let caps = ModelCapabilities::new(vocab, layer_count, layer_count >= 2, hidden_dim > 0)
            .expect("valid scripted capabilities");
        Self {
            caps,
            order,
            hidden_dim,
            script: HashMap::new(),
        }
    }

    /// Scripts the output for contexts ending in `suffix`. `layers` lists
    /// premature layers only; the final logits are appended.
    pub fn set(
        &mut self,
        suffix: Vec<u32>,
        final_logits: Vec<f64>,
        layers: Vec<Vec<f64>>,
        hidden: Option<Vec<f64>>,
    ) {
        let layer_count = self.caps.layer_count;
        let layer_logits = if self.caps.exposes_layer_logits {
            let mut all = layers;
            all.resize(layer_count - 1, final_logits.clone());
            all.push(final_logits.clone());
            Some(all)
        } else {
            None
        };
        self.script.insert(
            suffix,
            StepOutput {
                final_logits,
                layer_logits,
                hidden_state: hidden,
                layer_count,
            },
        );
    }

    /// Sets only the hidden state for contexts ending in `suffix`, keeping
    /// whatever logits are already scripted there.
    pub fn set_hidden(&mut self, suffix: Vec<u32>, hidden: Vec<f64>) {
        let base = self
            .script
            .get(&suffix)
            .cloned()
            .unwrap_or_else(|| self.uniform());
        self.script.insert(
            suffix,
            StepOutput {
                hidden_state: Some(hidden),
                ..base
            },
        );
    }

    fn uniform(&self) -> StepOutput {
        let v = self.caps.vocab.size();
        let lc = self.caps.layer_count;
        StepOutput {
            final_logits: vec![0.0; v],
            layer_logits: self.caps.exposes_layer_logits.then(|| vec![vec![0.0; v]; lc]),
            hidden_state: None,
            layer_count: lc,
        }
    }
}

impl LogitProvider for ScriptedLM {
    fn capabilities(&self) -> &ModelCapabilities {
        &self.caps
    }

    fn step(&self, context: &[u32], need: Need) -> Result<StepOutput, ModelError> {
        self.caps.supports(need)?;
        // longest scripted suffix wins
        let found = (1..=self.order.min(context.len()))
            .rev()
            .find_map(|n| self.script.get(context_key(context, n)));
        let mut out = found.cloned().unwrap_or_else(|| self.uniform());
        if !need.layers {
            out.layer_logits = None;
        }
        out.hidden_state = if need.hidden {
            Some(
                out.hidden_state
                    .unwrap_or_else(|| vec![0.0; self.hidden_dim]),
            )
        } else {
            None
        };
        Ok(out)
    }
}

/// Construction parameters for [`SyntheticLayeredLM`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub eos_id: u32,
    pub layer_count: usize,
    pub hidden_dim: usize,
    /// Number of trailing context tokens the outputs depend on.
    pub order: usize,
    pub seed: u64,
    /// Half-width of the uniform final-layer logit range.
    pub logit_scale: f64,
    /// Added to the eos logit on every layer.
    pub eos_bias: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            eos_id: 0,
            layer_count: 4,
            hidden_dim: 16,
            order: 2,
            seed: 7,
            logit_scale: 3.0,
            eos_bias: 0.0,
        }
    }
}

/// Deterministic pseudo-random multi-layer model.
///
/// Every output is a pure function of `(seed, last `order` tokens)`. Layer
/// `l` of `L` interpolates from noise towards the final logits with weight
/// `(l + 1) / L`, so the last layer equals the final logits exactly. The
/// hidden state mixes a per-token embedding with a context vector.
#[derive(Debug, Clone)]
pub struct SyntheticLayeredLM {
    spec: SyntheticSpec,
    caps: ModelCapabilities,
    embeddings: Vec<Vec<f64>>,
}

impl SyntheticLayeredLM {
    pub fn new(spec: SyntheticSpec) -> Result<Self, ModelError> {
        let vocab = Vocabulary::new(spec.vocab_size, spec.eos_id)?;
        let mut caps = ModelCapabilities::new(
            vocab,
            spec.layer_count,
            spec.layer_count >= 2,
            spec.hidden_dim > 0,
        )?;
        caps.metadata
            .insert("hidden_state".into(), "synthetic, post-norm".into());
        if spec.order == 0 {
            return Err(ModelError::Protocol("order must be at least 1".into()));
        }
        let embeddings = (0..spec.vocab_size as u64)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_hash(spec.seed, [0xE3B, t]));
                (0..spec.hidden_dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        Ok(Self {
            spec,
            caps,
            embeddings,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    fn uniform_vec(&self, key: u64, salt: u64, len: usize, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_hash(key, [salt]));
        (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
    }
}

impl LogitProvider for SyntheticLayeredLM {
    fn capabilities(&self) -> &ModelCapabilities {
        &self.caps
    }

    fn step(&self, context: &[u32], need: Need) -> Result<StepOutput, ModelError> {
        self.caps.supports(need)?;
        let last = *context.last().ok_or(ModelError::EmptyContext)?;
        let key = mix_hash(
            self.spec.seed,
            context_key(context, self.spec.order)
                .iter()
                .map(|&t| u64::from(t)),
        );
        let v = self.spec.vocab_size;
        let eos = self.spec.eos_id as usize;
        let mut final_logits = self.uniform_vec(key, 1, v, self.spec.logit_scale);
        final_logits[eos] += self.spec.eos_bias;

        let layer_logits = need.layers.then(|| {
            let n = self.spec.layer_count;
            let mut layers: Vec<Vec<f64>> = (0..n - 1)
                .map(|l| {
                    let w = (l + 1) as f64 / n as f64;
                    let mut noise =
                        self.uniform_vec(key, 100 + l as u64, v, self.spec.logit_scale);
                    noise[eos] += self.spec.eos_bias;
                    final_logits
                        .iter()
                        .zip(&noise)
                        .map(|(f, z)| w * f + (1.0 - w) * z)
                        .collect()
                })
                .collect();
            layers.push(final_logits.clone());
            layers
        });

        let hidden_state = need.hidden.then(|| {
            let ctx = self.uniform_vec(key, 2, self.spec.hidden_dim, 1.0);
            self.embeddings[last as usize]
                .iter()
                .zip(&ctx)
                .map(|(e, c)| 0.7 * e + 0.3 * c)
                .collect()
        });

        Ok(StepOutput {
            final_logits,
            layer_logits,
            hidden_state,
            layer_count: self.spec.layer_count,
        })
    }
}

/// Serializable description of a toy provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToyModelSpec {
    Synthetic(SyntheticSpec),
    /// [`random_table_lm`], optionally with random token embeddings.
    Table {
        vocab_size: usize,
        eos_id: u32,
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default = "default_sharpness")]
        sharpness: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        embedding_dim: usize,
    },
}

fn default_order() -> usize {
    1
}

fn default_sharpness() -> f64 {
    2.0
}

impl ToyModelSpec {
    pub fn build(&self) -> Result<Box<dyn LogitProvider>, ModelError> {
        match self {
            ToyModelSpec::Synthetic(spec) => Ok(Box::new(SyntheticLayeredLM::new(spec.clone())?)),
            ToyModelSpec::Table {
                vocab_size,
                eos_id,
                order,
                sharpness,
                seed,
                embedding_dim,
            } => {
                if *order == 0 {
                    return Err(ModelError::Protocol("order must be at least 1".into()));
                }
                let vocab = Vocabulary::new(*vocab_size, *eos_id)?;
                let lm = random_table_lm(vocab, *order, *sharpness, *seed);
                if *embedding_dim == 0 {
                    return Ok(Box::new(lm));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(mix_hash(*seed, [0xE3B]));
                let emb = (0..*vocab_size)
                    .map(|_| (0..*embedding_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                Ok(Box::new(lm.with_embeddings(emb)?))
            }
        }
    }
}
