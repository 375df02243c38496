use serde::{Deserialize, Serialize};

use super::DecodeError;
use crate::types::ScoringPolicy;

fn default_head_alpha() -> f64 {
    0.1
}
fn default_head_ratio() -> f64 {
    0.1
}
fn default_amateur() -> String {
    "amateur".to_string()
}
fn default_iterations() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    pub k: usize,
}

/// Similarity between a candidate and an earlier group's beams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    /// Number of earlier-group beams that emitted the same token at this step.
    #[default]
    Unigram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbsParams {
    pub k: usize,
    pub groups: usize,
    pub lambda: f64,
    #[serde(default)]
    pub delta: DeltaKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsParams {
    pub k: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdParams {
    #[serde(default = "default_head_alpha")]
    pub alpha_head: f64,
    pub beta: f64,
    /// Name of the amateur provider in the run configuration.
    #[serde(default = "default_amateur")]
    pub amateur: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsdParams {
    /// Anti-model order and candidate-set size.
    pub n: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DolaParams {
    /// Candidate premature layers `[lo, hi)`.
    pub bucket: [usize; 2],
    #[serde(default = "default_head_ratio")]
    pub head_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SledParams {
    pub n: usize,
    pub alpha_evolve: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureParams {
    pub t: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopPParams {
    pub p: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A strategy together with its hyperparameter assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum StrategyParams {
    Greedy,
    Beam(BeamParams),
    Dbs(DbsParams),
    Cs(CsParams),
    Cd(CdParams),
    Fsd(FsdParams),
    FsdVec(FsdParams),
    Dola(DolaParams),
    Sled(SledParams),
    Temperature(TemperatureParams),
    TopP(TopPParams),
}

fn unit(name: &str, v: f64) -> Result<(), DecodeError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(DecodeError::InvalidConfig(format!("{name} = {v} not in [0, 1]")))
    }
}

impl StrategyParams {
    pub fn id(&self) -> String {
        match self {
            Self::Greedy => "greedy",
            Self::Beam(_) => "beam",
            Self::Dbs(_) => "dbs",
            Self::Cs(_) => "cs",
            Self::Cd(_) => "cd",
            Self::Fsd(_) => "fsd",
            Self::FsdVec(_) => "fsd_vec",
            Self::Dola(_) => "dola",
            Self::Sled(_) => "sled",
            Self::Temperature(_) => "temperature",
            Self::TopP(_) => "top_p",
        }
        .to_string()
    }

    /// Compact hyperparameter label in the style of the optimal-setting
    /// tables: `k`, `k_G`, `alpha`, `beta`, `n_alpha`, `[lo, hi)`, `alpha_n`.
    pub fn label(&self) -> String {
        match self {
            Self::Greedy => "-".into(),
            Self::Beam(p) => p.k.to_string(),
            Self::Dbs(p) => format!("{}_{}", p.k, p.groups),
            Self::Cs(p) => format!("{:?}", p.alpha),
            Self::Cd(p) => format!("{:?}", p.beta),
            Self::Fsd(p) | Self::FsdVec(p) => format!("{}_{:?}", p.n, p.alpha),
            Self::Dola(p) => format!("[{}, {})", p.bucket[0], p.bucket[1]),
            Self::Sled(p) => format!("{:?}_{}", p.alpha_evolve, p.n),
            Self::Temperature(p) => format!("{:?}", p.t),
            Self::TopP(p) => format!("{:?}", p.p),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Self::Temperature(_) | Self::TopP(_))
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: String| Err(DecodeError::InvalidConfig(m));
        match self {
            Self::Greedy => Ok(()),
            Self::Beam(p) if p.k == 0 => bad("beam k must be at least 1".into()),
            Self::Beam(_) => Ok(()),
            Self::Dbs(p) => {
                if p.k == 0 || p.groups == 0 || p.k % p.groups != 0 {
                    return bad(format!("dbs groups {} must divide k {}", p.groups, p.k));
                }
                if !(p.lambda >= 0.0) || !p.lambda.is_finite() {
                    return bad(format!("dbs lambda {} must be >= 0", p.lambda));
                }
                Ok(())
            }
            Self::Cs(p) => {
                if p.k == 0 {
                    return bad("cs k must be at least 1".into());
                }
                unit("cs alpha", p.alpha)
            }
            Self::Cd(p) => {
                if !(p.alpha_head > 0.0 && p.alpha_head < 1.0) {
                    return bad(format!("cd alpha_head {} not in (0, 1)", p.alpha_head));
                }
                unit("cd beta", p.beta)
            }
            Self::Fsd(p) | Self::FsdVec(p) => {
                if p.n == 0 {
                    return bad("fsd n must be at least 1".into());
                }
                unit("fsd alpha", p.alpha)
            }
            Self::Dola(p) => {
                if p.bucket[0] >= p.bucket[1] {
                    return bad(format!("empty dola bucket {:?}", p.bucket));
                }
                unit("dola head_ratio", p.head_ratio)
            }
            Self::Sled(p) => {
                if p.n == 0 || p.iterations == 0 {
                    return bad("sled n and iterations must be at least 1".into());
                }
                if !(p.alpha_evolve >= 0.0) || !p.alpha_evolve.is_finite() {
                    return bad(format!("sled alpha_evolve {} must be >= 0", p.alpha_evolve));
                }
                Ok(())
            }
            Self::Temperature(p) => {
                if !(p.t > 0.0) || !p.t.is_finite() {
                    return bad(format!("temperature {} must be > 0", p.t));
                }
                Ok(())
            }
            Self::TopP(p) => {
                if !(p.p > 0.0 && p.p <= 1.0) {
                    return bad(format!("top_p {} not in (0, 1]", p.p));
                }
                Ok(())
            }
        }
    }

    /// The hyperparameter sweep used for each strategy family. Layer buckets
    /// assume a provider exposing 33 layer outputs (embedding + 32 blocks).
    pub fn default_grid(family: &str) -> Option<Vec<StrategyParams>> {
        let grid = match family {
            "greedy" => vec![Self::Greedy],
            "beam" => [3, 5, 7]
                .into_iter()
                .map(|k| Self::Beam(BeamParams { k }))
                .collect(),
            "dbs" => [(3, 3), (6, 3), (9, 3), (6, 6), (12, 6)]
                .into_iter()
                .map(|(k, groups)| {
                    Self::Dbs(DbsParams {
                        k,
                        groups,
                        lambda: DEFAULT_DBS_LAMBDA,
                        delta: DeltaKind::Unigram,
                    })
                })
                .collect(),
            "cs" => [0.2, 0.4, 0.6]
                .into_iter()
                .map(|alpha| Self::Cs(CsParams {
                    k: DEFAULT_CS_K,
                    alpha,
                }))
                .collect(),
            "cd" => [0.1, 0.3, 0.5, 0.7, 0.9]
                .into_iter()
                .map(|beta| {
                    Self::Cd(CdParams {
                        alpha_head: 0.1,
                        beta,
                        amateur: default_amateur(),
                    })
                })
                .collect(),
            "fsd" | "fsd_vec" => {
                let mut out = Vec::new();
                for n in [3, 5] {
                    for alpha in [0.3, 0.5, 0.7] {
                        let p = FsdParams { n, alpha };
                        out.push(if family == "fsd" {
                            Self::Fsd(p)
                        } else {
                            Self::FsdVec(p)
                        });
                    }
                }
                out
            }
            "dola" => [[0, 16], [16, 32]]
                .into_iter()
                .map(|bucket| {
                    Self::Dola(DolaParams {
                        bucket,
                        head_ratio: 0.1,
                    })
                })
                .collect(),
            "sled" => {
                let mut out = Vec::new();
                for n in [5, 10] {
                    for alpha_evolve in [0.1, 1.0, 5.0] {
                        out.push(Self::Sled(SledParams {
                            n,
                            alpha_evolve,
                            iterations: 1,
                        }));
                    }
                }
                out
            }
            "temperature" => [0.8, 1.0, 1.2]
                .into_iter()
                .map(|t| Self::Temperature(TemperatureParams { t, seed: 0 }))
                .collect(),
            "top_p" => vec![Self::TopP(TopPParams { p: 0.9, seed: 0 })],
            _ => return None,
        };
        Some(grid)
    }
}

pub const DEFAULT_DBS_LAMBDA: f64 = 0.5;
pub const DEFAULT_CS_K: usize = 5;

/// Deterministic families, in reporting order.
pub const DETERMINISTIC_FAMILIES: [&str; 9] = [
    "greedy", "beam", "dbs", "cs", "cd", "fsd", "fsd_vec", "dola", "sled",
];
pub const STOCHASTIC_FAMILIES: [&str; 2] = ["temperature", "top_p"];

/// Default generation budgets per task.
pub fn default_max_new_tokens(task: &str) -> usize {
    match task {
        "qa" => 64,
        "cg" => 512,
        _ => 128,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    #[serde(flatten)]
    pub params: StrategyParams,
    pub max_new_tokens: usize,
    #[serde(default)]
    pub scoring_policy: ScoringPolicy,
}

impl DecodeConfig {
    pub fn new(params: StrategyParams, max_new_tokens: usize) -> Self {
        Self {
            params,
            max_new_tokens,
            scoring_policy: ScoringPolicy::default(),
        }
    }

    pub fn greedy(max_new_tokens: usize) -> Self {
        Self::new(StrategyParams::Greedy, max_new_tokens)
    }

    pub fn with_policy(mut self, policy: ScoringPolicy) -> Self {
        self.scoring_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.max_new_tokens == 0 {
            return Err(DecodeError::InvalidConfig(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        self.params.validate()
    }
}
