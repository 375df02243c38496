//! HTTP servers for the model and scorer wire protocols.
//!
//! [`model_router`] exposes any [`LogitProvider`] as a remote model and
//! [`scorer_router`] exposes any [`Scorer`]. Provider and scorer calls are
//! synchronous, so they run on the blocking pool; providers that are not
//! safe for concurrent use are serialized behind a lock.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use declab_core::model::{self, LogitProvider, ModelError};
use declab_core::quality::{ScoreError, Scorer};
use declab_core::wire::{
    ErrorBody, ErrorKind, ModelHandshake, ScoreRequest, ScoreResponse, ScorerHandshake,
    StepRequest, StepResponse, HANDSHAKE_PATH, SCORE_PATH, STEP_PATH,
};
use tokio::sync::{oneshot, Mutex};

/// A failed request: status code plus a JSON [`ErrorBody`].
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                kind,
                message: message.into(),
            },
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorKind::Internal, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, ErrorKind::BadRequest, r.body_text())
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::CapabilityMissing(_) => {
                Self::new(StatusCode::BAD_REQUEST, ErrorKind::CapabilityMissing, e.to_string())
            }
            ModelError::EmptyContext | ModelError::Invalid(_) => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                ErrorKind::InvalidContext,
                e.to_string(),
            ),
            other => Self::internal(other.to_string()),
        }
    }
}

impl From<ScoreError> for ApiError {
    fn from(e: ScoreError) -> Self {
        Self::internal(e.to_string())
    }
}

#[derive(Clone)]
struct ModelState {
    model: Arc<dyn LogitProvider>,
    gate: Option<Arc<Mutex<()>>>,
}

/// Routes for the model protocol.
pub fn model_router(model: Arc<dyn LogitProvider>) -> Router {
    let gate = (!model.concurrency_safe()).then(|| Arc::new(Mutex::new(())));
    Router::new()
        .route(HANDSHAKE_PATH, post(model_handshake))
        .route(STEP_PATH, post(model_step))
        .with_state(ModelState { model, gate })
}

async fn model_handshake(State(st): State<ModelState>) -> Json<ModelHandshake> {
    Json(ModelHandshake::from_capabilities(st.model.capabilities()))
}

async fn model_step(
    State(st): State<ModelState>,
    req: Result<Json<StepRequest>, JsonRejection>,
) -> Result<Json<StepResponse>, ApiError> {
    let Json(req) = req?;
    let _guard = match &st.gate {
        Some(g) => Some(g.lock().await),
        None => None,
    };
    let model = Arc::clone(&st.model);
    let out = tokio::task::spawn_blocking(move || model::step(model.as_ref(), &req.context, req.need()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    tracing::debug!(vocab = out.final_logits.len(), "step served");
    Ok(Json(StepResponse::from_output(out)))
}

/// Routes for the scorer protocol. The scorer's output is passed through
/// unchecked; validating it is the client's job.
pub fn scorer_router(scorer: Arc<dyn Scorer>) -> Router {
    Router::new()
        .route(HANDSHAKE_PATH, post(scorer_handshake))
        .route(SCORE_PATH, post(scorer_score))
        .with_state(scorer)
}

async fn scorer_handshake(
    State(scorer): State<Arc<dyn Scorer>>,
) -> Result<Json<ScorerHandshake>, ApiError> {
    let info = scorer.info()?;
    Ok(Json(ScorerHandshake {
        metric: info.metric,
        range: info.range,
    }))
}

async fn scorer_score(
    State(scorer): State<Arc<dyn Scorer>>,
    req: Result<Json<ScoreRequest>, JsonRejection>,
) -> Result<Json<ScoreResponse>, ApiError> {
    let Json(req) = req?;
    let n = req.items.len();
    let scores = tokio::task::spawn_blocking(move || scorer.score(&req.items))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    tracing::debug!(items = n, "batch scored");
    Ok(Json(ScoreResponse { scores }))
}

/// Serves `router` on `addr` until Ctrl-C.
pub async fn serve(addr: SocketAddr, router: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// A server on an ephemeral loopback port, running on its own thread and
/// runtime. Dropping it shuts the server down.
pub struct BackgroundServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    pub fn spawn(router: Router) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind(("127.0.0.1", 0))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
