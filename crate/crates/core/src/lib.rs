//! Decoding-strategy laboratory.
//!
//! Deterministic and stochastic decoding strategies run over an abstract
//! [`LogitProvider`](model::LogitProvider). Each generation carries the
//! per-step probability and entropy traces needed to compute sequence-level
//! uncertainty scores, which are then evaluated against task quality with
//! prediction-rejection curves.
//!
//! The crate performs no I/O. Remote providers and scorers live in
//! `declab-client`, the HTTP servers in `declab-service`.

pub mod codec;
pub mod decoding;
pub mod eval;
pub mod model;
pub mod quality;
pub mod types;
pub mod uncertainty;
pub mod wire;

pub use decoding::{decode, DecodeConfig, DecodeError, StrategyParams};
pub use model::{LogitProvider, ModelCapabilities, ModelError, Need};
pub use types::{
    EvalRecord, GenerationRecord, Hypothesis, PrrResult, ScoringPolicy, StepOutput, StopReason,
    TokenSeq, Vocabulary,
};
