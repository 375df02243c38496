//! Blocking clients for remote models and scorers.
//!
//! [`RemoteModel`] implements [`LogitProvider`] and [`RemoteScorer`]
//! implements [`Scorer`], so decoding and evaluation code cannot tell them
//! apart from in-process implementations. Every response is validated
//! against the handshake before it is returned.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use declab_core::model::{LogitProvider, ModelCapabilities, ModelError, Need};
use declab_core::quality::{validate_scores, ScoreError, Scorer, ScorerInfo};
use declab_core::types::StepOutput;
use declab_core::wire::{
    ErrorBody, ErrorKind, ModelHandshake, ScoreItem, ScoreRequest, ScoreResponse, ScoreResult,
    ScorerHandshake, StepRequest, StepResponse, HANDSHAKE_PATH, SCORE_PATH, STEP_PATH,
};
use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Transport-level failure, before protocol interpretation.
#[derive(Debug)]
enum CallError {
    Timeout(String),
    Transport(String),
    Status(u16, Option<ErrorBody>),
    Decode(String),
}

fn call<B: Serialize, T: DeserializeOwned>(
    http: &Client,
    url: &str,
    token: Option<&str>,
    body: &B,
) -> Result<T, CallError> {
    let classify = |e: reqwest::Error| {
        if e.is_timeout() {
            CallError::Timeout(format!("{url}: {e}"))
        } else {
            CallError::Transport(format!("{url}: {e}"))
        }
    };
    let mut req = http.post(url).json(body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp: Response = req.send().map_err(classify)?;
    let status = resp.status();
    let bytes = resp.bytes().map_err(classify)?;
    if !status.is_success() {
        return Err(CallError::Status(
            status.as_u16(),
            serde_json::from_slice(&bytes).ok(),
        ));
    }
    serde_json::from_slice(&bytes).map_err(|e| CallError::Decode(format!("{url}: {e}")))
}

fn http_client(timeout: Duration) -> Result<Client, String> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| e.to_string())
}

fn join(base: &str, path: &str) -> String {
    format!("{}{path}", base.trim_end_matches('/'))
}

/// Connection settings for [`RemoteModel`].
#[derive(Debug, Clone)]
pub struct RemoteModelConfig {
    pub timeout: Duration,
    /// Fail the handshake unless the server reports this vocabulary size.
    pub expected_vocab_size: Option<usize>,
    /// End-of-sequence id when the server does not name one; defaults to the
    /// last id.
    pub eos_id: Option<u32>,
    /// Whether the server accepts concurrent step requests.
    pub concurrent: bool,
    /// Sent as a bearer token when set.
    pub token: Option<String>,
}

impl Default for RemoteModelConfig {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            expected_vocab_size: None,
            eos_id: None,
            concurrent: true,
            token: None,
        }
    }
}

impl From<CallError> for ModelError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Timeout(m) => ModelError::Timeout(m),
            CallError::Transport(m) => ModelError::Protocol(m),
            CallError::Decode(m) => ModelError::MalformedPayload(m),
            CallError::Status(_, Some(ErrorBody {
                kind: ErrorKind::CapabilityMissing,
                ..
            })) => ModelError::CapabilityMissing("remote capability"),
            CallError::Status(code, Some(body)) => {
                ModelError::Protocol(format!("server returned {code}: {}", body.message))
            }
            CallError::Status(code, None) => ModelError::Protocol(format!("server returned {code}")),
        }
    }
}

/// A model served over the wire protocol.
#[derive(Debug)]
pub struct RemoteModel {
    step_url: String,
    http: Client,
    token: Option<String>,
    caps: ModelCapabilities,
    concurrent: bool,
}

impl RemoteModel {
    /// Performs the handshake and fixes the session vocabulary.
    pub fn connect(base_url: &str, cfg: &RemoteModelConfig) -> Result<Self, ModelError> {
        let http = http_client(cfg.timeout).map_err(ModelError::Protocol)?;
        let hs: ModelHandshake = call(
            &http,
            &join(base_url, HANDSHAKE_PATH),
            cfg.token.as_deref(),
            &serde_json::json!({}),
        )?;
        if let Some(expected) = cfg.expected_vocab_size {
            if expected != hs.vocab_size {
                return Err(ModelError::VocabMismatch {
                    expected,
                    got: hs.vocab_size,
                });
            }
        }
        if hs.vocab_size < 2 {
            return Err(ModelError::MalformedPayload(format!(
                "handshake vocab_size {} is too small",
                hs.vocab_size
            )));
        }
        let fallback = cfg.eos_id.unwrap_or((hs.vocab_size - 1) as u32);
        let mut caps = hs.to_capabilities(fallback)?;
        caps.metadata.insert("endpoint".into(), base_url.to_owned());
        Ok(Self {
            step_url: join(base_url, STEP_PATH),
            http,
            token: cfg.token.clone(),
            caps,
            concurrent: cfg.concurrent,
        })
    }
}

impl LogitProvider for RemoteModel {
    fn capabilities(&self) -> &ModelCapabilities {
        &self.caps
    }

    fn step(&self, context: &[u32], need: Need) -> Result<StepOutput, ModelError> {
        self.caps.supports(need)?;
        let resp: StepResponse = call(
            &self.http,
            &self.step_url,
            self.token.as_deref(),
            &StepRequest::new(context, need),
        )?;
        let out = resp.into_output(self.caps.layer_count);
        out.validate(self.caps.vocab.size())
            .map_err(|e| ModelError::MalformedPayload(e.to_string()))?;
        Ok(out)
    }

    fn concurrency_safe(&self) -> bool {
        self.concurrent
    }
}

/// Connection settings for [`RemoteScorer`].
#[derive(Debug, Clone)]
pub struct RemoteScorerConfig {
    pub timeout: Duration,
    /// Maximum number of batches in flight at once.
    pub max_in_flight: usize,
    /// Items per request in [`RemoteScorer::score_all`].
    pub batch_size: usize,
    /// Sent as a bearer token when set.
    pub token: Option<String>,
}

impl Default for RemoteScorerConfig {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            max_in_flight: 4,
            batch_size: 32,
            token: None,
        }
    }
}

impl From<CallError> for ScoreError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Timeout(m) => ScoreError::Timeout(m),
            CallError::Transport(m) | CallError::Decode(m) => ScoreError::Protocol(m),
            CallError::Status(code, body) => ScoreError::Protocol(format!(
                "server returned {code}{}",
                body.map(|b| format!(": {}", b.message)).unwrap_or_default()
            )),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock poisoned");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// A quality scorer served over the wire protocol.
#[derive(Debug)]
pub struct RemoteScorer {
    score_url: String,
    http: Client,
    token: Option<String>,
    info: ScorerInfo,
    slots: Slots,
    batch_size: usize,
}

impl RemoteScorer {
    pub fn connect(base_url: &str, cfg: &RemoteScorerConfig) -> Result<Self, ScoreError> {
        if cfg.max_in_flight == 0 || cfg.batch_size == 0 {
            return Err(ScoreError::Protocol(
                "max_in_flight and batch_size must be positive".into(),
            ));
        }
        let http = http_client(cfg.timeout).map_err(ScoreError::Protocol)?;
        let hs: ScorerHandshake = call(
            &http,
            &join(base_url, HANDSHAKE_PATH),
            cfg.token.as_deref(),
            &serde_json::json!({}),
        )?;
        let [lo, hi] = hs.range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ScoreError::Protocol(format!(
                "declared range [{lo}, {hi}] is not a proper interval"
            )));
        }
        Ok(Self {
            score_url: join(base_url, SCORE_PATH),
            http,
            token: cfg.token.clone(),
            info: ScorerInfo {
                metric: hs.metric,
                range: hs.range,
            },
            slots: Slots {
                free: Mutex::new(cfg.max_in_flight),
                cv: Condvar::new(),
            },
            batch_size: cfg.batch_size,
        })
    }

    /// Splits `items` into batches, sends them concurrently (bounded by the
    /// in-flight limit), and returns validated scores in item order.
    pub fn score_all(&self, items: &[ScoreItem]) -> Result<Vec<f64>, ScoreError> {
        let batches: Vec<&[ScoreItem]> = items.chunks(self.batch_size).collect();
        let results: Vec<Result<Vec<f64>, ScoreError>> = std::thread::scope(|s| {
            let handles: Vec<_> = batches
                .iter()
                .map(|b| {
                    s.spawn(move || {
                        let res = self.score(b)?;
                        validate_scores(&self.info, b, &res)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scoring thread panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(items.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}

impl Scorer for RemoteScorer {
    fn info(&self) -> Result<ScorerInfo, ScoreError> {
        Ok(self.info.clone())
    }

    fn score(&self, items: &[ScoreItem]) -> Result<Vec<ScoreResult>, ScoreError> {
        let _slot = self.slots.acquire();
        let req = ScoreRequest {
            items: items.to_vec(),
        };
        let resp: ScoreResponse = call(&self.http, &self.score_url, self.token.as_deref(), &req)?;
        Ok(resp.scores)
    }
}
