use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::routing::post;
use axum::{Json, Router};
use declab_client::{RemoteModel, RemoteModelConfig, RemoteScorer, RemoteScorerConfig};
use declab_core::decoding::{DolaParams, SledParams};
use declab_core::model::{step, SyntheticLayeredLM, SyntheticSpec, TableLM};
use declab_core::quality::{score_checked, ScoreError, Scorer, ScorerInfo};
use declab_core::types::Vocabulary;
use declab_core::wire::{ScoreItem, ScoreResult};
use declab_core::{decode, DecodeConfig, LogitProvider, ModelError, Need, StrategyParams};
use declab_service::{model_router, scorer_router, BackgroundServer};
use serde_json::{json, Value};

fn small_lm() -> SyntheticLayeredLM {
    SyntheticLayeredLM::new(SyntheticSpec {
        vocab_size: 4,
        eos_id: 3,
        layer_count: 2,
        hidden_dim: 3,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn connect(server: &BackgroundServer) -> RemoteModel {
    RemoteModel::connect(&server.url(), &RemoteModelConfig::default()).unwrap()
}

#[test]
fn handshake_then_step_with_layers() {
    let server = BackgroundServer::spawn(model_router(Arc::new(small_lm()))).unwrap();
    let remote = connect(&server);
    let caps = remote.capabilities();
    assert_eq!((caps.vocab.size(), caps.layer_count), (4, 2));
    let out = step(&remote, &[1, 2], Need::LAYERS).unwrap();
    assert_eq!(out.layer_logits.as_ref().unwrap().len(), 2);
    assert_eq!(out, small_lm().step(&[1, 2], Need::LAYERS).unwrap());
}

#[test]
fn vocab_mismatch_at_handshake() {
    let server = BackgroundServer::spawn(model_router(Arc::new(small_lm()))).unwrap();
    let cfg = RemoteModelConfig {
        expected_vocab_size: Some(5),
        ..RemoteModelConfig::default()
    };
    assert_eq!(
        RemoteModel::connect(&server.url(), &cfg).unwrap_err(),
        ModelError::VocabMismatch {
            expected: 5,
            got: 4
        }
    );
}

#[test]
fn remote_decoding_is_bit_identical() {
    let lm = SyntheticLayeredLM::new(SyntheticSpec::default()).unwrap();
    let server = BackgroundServer::spawn(model_router(Arc::new(lm.clone()))).unwrap();
    let remote = connect(&server);
    let configs = [
        DecodeConfig::greedy(12),
        DecodeConfig::new(StrategyParams::Dola(DolaParams { bucket: [0, 2], head_ratio: 0.1 }), 12),
        DecodeConfig::new(
            StrategyParams::Sled(SledParams {
                n: 4,
                alpha_evolve: 0.5,
                iterations: 1,
            }),
            12,
        ),
    ];
    for cfg in &configs {
        let local = decode(&lm, None, "x", &[3, 4], cfg).unwrap();
        let over_wire = decode(&remote, None, "x", &[3, 4], cfg).unwrap();
        assert_eq!(local, over_wire);
    }
}

#[test]
fn missing_capability_is_reported() {
    let table = TableLM::new(Vocabulary::new(3, 2).unwrap(), 1);
    let server = BackgroundServer::spawn(model_router(Arc::new(table))).unwrap();
    let remote = connect(&server);
    assert!(matches!(
        step(&remote, &[0], Need::HIDDEN),
        Err(ModelError::CapabilityMissing(_))
    ));
}

fn fake_model(step_body: Value, delay: Duration) -> Router {
    Router::new()
        .route(
            "/v1/handshake",
            post(|| async {
                Json(json!({
                    "vocab_size": 3, "layer_count": 1,
                    "exposes_layer_logits": false, "exposes_hidden_states": false
                }))
            }),
        )
        .route(
            "/v1/step",
            post(move || {
                let body = step_body.clone();
                async move {
                    tokio::time::sleep(delay).await;
                    Json(body)
                }
            }),
        )
}

#[test]
fn wrong_length_payload_is_malformed() {
    let server = BackgroundServer::spawn(fake_model(
        json!({"final_logits": [0.0, 1.0]}),
        Duration::ZERO,
    ))
    .unwrap();
    let remote = connect(&server);
    assert_eq!(remote.vocab().eos_id(), 2);
    assert!(matches!(
        step(&remote, &[0], Need::FINAL),
        Err(ModelError::MalformedPayload(_))
    ));
}

#[test]
fn non_numeric_payload_is_malformed() {
    let server =
        BackgroundServer::spawn(fake_model(json!({"final_logits": "zero"}), Duration::ZERO)).unwrap();
    let remote = connect(&server);
    assert!(matches!(
        step(&remote, &[0], Need::FINAL),
        Err(ModelError::MalformedPayload(_))
    ));
}

#[test]
fn slow_server_times_out() {
    let server = BackgroundServer::spawn(fake_model(
        json!({"final_logits": [0.0, 0.0, 0.0]}),
        Duration::from_millis(800),
    ))
    .unwrap();
    let cfg = RemoteModelConfig {
        timeout: Duration::from_millis(150),
        ..RemoteModelConfig::default()
    };
    let remote = RemoteModel::connect(&server.url(), &cfg).unwrap();
    assert!(matches!(
        step(&remote, &[0], Need::FINAL),
        Err(ModelError::Timeout(_))
    ));
}

/// Test scorer with programmable misbehaviour.
struct Stub {
    value: f64,
    drop_id: Option<&'static str>,
    delay: Duration,
    active: AtomicUsize,
    peak: AtomicUsize,
}

impl Stub {
    fn new(value: f64) -> Self {
        Self {
            value,
            drop_id: None,
            delay: Duration::ZERO,
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }
}

impl Scorer for Stub {
    fn info(&self) -> Result<ScorerInfo, ScoreError> {
        Ok(ScorerInfo {
            metric: "stub".into(),
            range: [0.0, 1.0],
        })
    }

    fn score(&self, items: &[ScoreItem]) -> Result<Vec<ScoreResult>, ScoreError> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        self.active.fetch_sub(1, Ordering::SeqCst);
        Ok(items
            .iter()
            .filter(|i| Some(i.id.as_str()) != self.drop_id)
            .map(|i| ScoreResult {
                id: i.id.clone(),
                score: self.value,
            })
            .collect())
    }
}

fn items(n: usize) -> Vec<ScoreItem> {
    (0..n)
        .map(|i| ScoreItem {
            id: format!("q{i}"),
            hypothesis: "h".into(),
            reference: "r".into(),
            aux: None,
        })
        .collect()
}

fn scorer_for(stub: Stub, cfg: RemoteScorerConfig) -> (BackgroundServer, RemoteScorer, Arc<Stub>) {
    let stub = Arc::new(stub);
    let server = BackgroundServer::spawn(scorer_router(stub.clone())).unwrap();
    let client = RemoteScorer::connect(&server.url(), &cfg).unwrap();
    (server, client, stub)
}

#[test]
fn echo_scorer_scores_everything() {
    let (_s, client, _) = scorer_for(Stub::new(0.5), RemoteScorerConfig::default());
    assert_eq!(client.info().unwrap().metric, "stub");
    assert_eq!(score_checked(&client, &items(5)).unwrap(), vec![0.5; 5]);
}

#[test]
fn omitted_item_is_listed() {
    let stub = Stub {
        drop_id: Some("q2"),
        ..Stub::new(0.5)
    };
    let (_s, client, _) = scorer_for(stub, RemoteScorerConfig::default());
    assert_eq!(
        score_checked(&client, &items(4)),
        Err(ScoreError::MissingItems(vec!["q2".into()]))
    );
}

#[test]
fn out_of_range_score_is_rejected() {
    let (_s, client, _) = scorer_for(Stub::new(1.7), RemoteScorerConfig::default());
    assert!(matches!(
        score_checked(&client, &items(2)),
        Err(ScoreError::RangeViolation { score, .. }) if score == 1.7
    ));
}

#[test]
fn in_flight_limit_is_respected() {
    let stub = Stub {
        delay: Duration::from_millis(60),
        ..Stub::new(0.25)
    };
    let cfg = RemoteScorerConfig {
        max_in_flight: 2,
        batch_size: 3,
        ..RemoteScorerConfig::default()
    };
    let (_s, client, stub) = scorer_for(stub, cfg);
    let got = client.score_all(&items(20)).unwrap();
    assert_eq!(got, vec![0.25; 20]);
    let peak = stub.peak.load(Ordering::SeqCst);
    assert!((1..=2).contains(&peak), "peak concurrency {peak}");
}
