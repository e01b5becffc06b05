//! HTTP/JSON service over a single kernel.
//!
//! Every mutating endpoint becomes one [`Command`] applied under the write
//! half of one lock, so commands are totally ordered in arrival order and
//! the event log has no interleaving. Reads take the read half.
//!
//! Identity comes from `Authorization: Bearer <token>`. Tokens are minted at
//! registration and only their sha256 is kept (in the event log, too).

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bazaar_core::assets::{CandidateItem, ScoreWeights, ScriptedExecutor, ValidatorSpec};
use bazaar_core::digest::sha256_hex;
use bazaar_core::error::ErrorBody;
use bazaar_core::kernel::{Command, Event, Outcome, Subplan};
use bazaar_core::ledger::{Account, LedgerEntry, Party};
use bazaar_core::store::Store;
use bazaar_core::taskflow::{PayloadEncoding, Task, TaskState, Verdict};
use bazaar_core::{
    AssetId, CreditAmount, Error, Kernel, KernelConfig, ParticipantId, ParticipantKind,
    RewardFunding, TaskId,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Where the event log lives. `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub bind: SocketAddr,
    pub funding: RewardFunding,
    pub weights: ScoreWeights,
    pub snapshot_every: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: None,
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            funding: RewardFunding::Fee,
            weights: ScoreWeights::default(),
            snapshot_every: 1000,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Kernel(#[from] Error),
    #[error("server stopped: {0}")]
    Io(#[from] std::io::Error),
}

struct Inner {
    kernel: Kernel,
    store: Option<Store>,
    /// Full log, including events recovered from disk.
    log: Vec<Event>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<RwLock<Inner>>,
    weights: ScoreWeights,
}

impl AppState {
    /// Open the data directory (if any) and recover the kernel from it.
    pub fn open(config: &ServiceConfig) -> Result<AppState, Error> {
        let kernel_config = KernelConfig { funding: config.funding };
        let (kernel, store, log) = match &config.data_dir {
            Some(dir) => {
                let (store, kernel) =
                    Store::open(dir, kernel_config, Arc::new(ScriptedExecutor), config.snapshot_every)?;
                let log = store.events()?;
                (kernel, Some(store), log)
            }
            None => (Kernel::new(kernel_config), None, Vec::new()),
        };
        Ok(AppState {
            inner: Arc::new(RwLock::new(Inner { kernel, store, log })),
            weights: config.weights,
        })
    }

    /// Read-only access to the kernel.
    pub fn with_kernel<T>(&self, f: impl FnOnce(&Kernel) -> T) -> T {
        f(&self.inner.read().expect("kernel lock poisoned").kernel)
    }

    /// Apply one command as `actor`, persisting the event before returning.
    pub fn apply(&self, actor: &ParticipantId, command: Command) -> Result<Outcome, ApiError> {
        let mut guard = self.inner.write().expect("kernel lock poisoned");
        let inner = &mut *guard;
        let (event, outcome) = inner.kernel.apply_command(actor, command)?;
        if let Some(store) = inner.store.as_mut() {
            store.append(&event, &inner.kernel)?;
        }
        inner.log.push(event);
        Ok(outcome)
    }
}

/// Error response: `{"error": "<code>", "message": "..."}`.
#[derive(Debug)]
pub enum ApiError {
    Kernel(Error),
    Unauthorized(&'static str),
    BadRequest(String),
    NotFound(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Kernel(e)
    }
}

pub fn status_for(e: &Error) -> StatusCode {
    use Error::*;
    match e {
        UnknownTask(_) | UnknownParticipant(_) | UnknownAssetId(_) | UnknownSkill(_) | AssetNotAdmitted(_) => {
            StatusCode::NOT_FOUND
        }
        NotClaimant(..) | NotAuthorizedReviewer(..) | NotRequester(..) | NotParticipant(..) | SelfClaim(_) => {
            StatusCode::FORBIDDEN
        }
        MalformedCommand(_) | InvalidCandidate(_) | EmptyCandidateSet | UnknownDependency(_) | NotASkill(_)
        | ValidatorUnavailable { .. } => StatusCode::BAD_REQUEST,
        Storage(_) | CorruptLog(_) | DataDirLocked(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::CONFLICT,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Kernel(e) => (status_for(&e), serde_json::json!(ErrorBody::from(&e))),
            ApiError::Unauthorized(why) => (
                StatusCode::UNAUTHORIZED,
                serde_json::json!({"error": "Unauthorized", "message": why}),
            ),
            ApiError::BadRequest(why) => (
                StatusCode::BAD_REQUEST,
                serde_json::json!({"error": "MalformedCommand", "message": why}),
            ),
            ApiError::NotFound(why) => (
                StatusCode::NOT_FOUND,
                serde_json::json!({"error": "NotFound", "message": why}),
            ),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// The participant behind the request's bearer token.
pub struct Caller(pub ParticipantId);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ApiError::Unauthorized("missing bearer token"))?;
        let digest = sha256_hex(token.trim().as_bytes());
        state
            .with_kernel(|k| k.participant_by_token(&digest).map(|p| p.id.clone()))
            .map(Caller)
            .ok_or(ApiError::Unauthorized("unknown token"))
    }
}

/// JSON body extractor whose rejections use the service error shape.
pub struct Body<T>(pub T);

impl<T: serde::de::DeserializeOwned, S: Send + Sync> axum::extract::FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError::BadRequest(e.body_text())),
        }
    }
}

fn unexpected(o: Outcome) -> ApiError {
    ApiError::Kernel(Error::MalformedCommand(format!("unexpected outcome {o:?}")))
}

fn task_of(o: Outcome) -> ApiResult<Task> {
    match o {
        Outcome::Task(t) => Ok(Json(t)),
        o => Err(unexpected(o)),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/participants", post(register))
        .route("/tasks", post(publish).get(list_tasks))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/claim", post(claim))
        .route("/tasks/{id}/decompose", post(decompose))
        .route("/tasks/{id}/submit", post(submit))
        .route("/tasks/{id}/review", post(review))
        .route("/tasks/{id}/cancel", post(cancel))
        .route("/tasks/{id}/admit-assets", post(admit))
        .route("/assets", get(list_assets))
        .route("/assets/propose", post(propose))
        .route("/assets/score", get(score))
        .route("/assets/graph", get(graph))
        .route("/assets/{id}", get(get_asset))
        .route("/assets/{id}/validate", post(validate))
        .route("/assets/{id}/invocations", post(invoke))
        .route("/assets/{id}/lineage", get(lineage))
        .route("/ledger/summary", get(ledger_summary))
        .route("/ledger/{participant}", get(ledger_of))
        .route("/events", get(events))
        .route("/commands", post(raw_command))
        .route("/blobs/{digest}", get(blob))
        .with_state(state)
}

/// Bind and serve until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    let state = AppState::open(&config)?;
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| ServeError::BindFailure { addr: config.bind, source })?;
    eprintln!("bazaar listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

// ── handlers ────────────────────────────────────────────────────────────

#[derive(Debug, Deserialize)]
pub struct RegisterRequest {
    pub id: ParticipantId,
    pub kind: ParticipantKind,
    #[serde(default)]
    pub endowment: CreditAmount,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Registered {
    pub participant: ParticipantId,
    pub account: Account,
    /// Shown once. Send as `Authorization: Bearer <token>`.
    pub token: String,
}

async fn register(State(state): State<AppState>, Body(req): Body<RegisterRequest>) -> Result<(StatusCode, Json<Registered>), ApiError> {
    let token = hex_token();
    let outcome = state.apply(
        &req.id,
        Command::OpenAccount {
            participant: req.id.clone(),
            kind: req.kind,
            endowment: req.endowment,
            token_digest: Some(sha256_hex(token.as_bytes())),
        },
    )?;
    match outcome {
        Outcome::Account(account) => Ok((
            StatusCode::CREATED,
            Json(Registered { participant: req.id, account, token }),
        )),
        o => Err(unexpected(o)),
    }
}

fn hex_token() -> String {
    let bytes: [u8; 24] = rand::rng().random();
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Deserialize)]
pub struct PublishRequest {
    pub intent: String,
    pub bounty: CreditAmount,
    #[serde(default)]
    pub parent: Option<TaskId>,
}

async fn publish(State(state): State<AppState>, Caller(me): Caller, Body(req): Body<PublishRequest>) -> ApiResult<Task> {
    task_of(state.apply(&me, Command::PublishTask { intent: req.intent, bounty: req.bounty, parent: req.parent })?)
}

#[derive(Debug, Deserialize)]
pub struct TaskFilter {
    pub state: Option<String>,
}

async fn list_tasks(State(state): State<AppState>, Query(q): Query<TaskFilter>) -> ApiResult<Vec<Task>> {
    let filter = q
        .state
        .map(|s| s.parse::<TaskState>().map_err(ApiError::BadRequest))
        .transpose()?;
    Ok(Json(state.with_kernel(|k| k.tasks(filter).into_iter().cloned().collect())))
}

async fn get_task(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Task> {
    Ok(Json(state.with_kernel(|k| k.task(TaskId(id)).cloned())?))
}

async fn claim(State(state): State<AppState>, Caller(me): Caller, Path(id): Path<u64>) -> ApiResult<Task> {
    task_of(state.apply(&me, Command::ClaimTask { task: TaskId(id) })?)
}

#[derive(Debug, Deserialize)]
pub struct DecomposeRequest {
    pub subplans: Vec<Subplan>,
}

async fn decompose(
    State(state): State<AppState>,
    Caller(me): Caller,
    Path(id): Path<u64>,
    Body(req): Body<DecomposeRequest>,
) -> ApiResult<Vec<Task>> {
    match state.apply(&me, Command::Decompose { task: TaskId(id), subplans: req.subplans })? {
        Outcome::Tasks(t) => Ok(Json(t)),
        o => Err(unexpected(o)),
    }
}

#[derive(Debug, Deserialize)]
pub struct SubmitRequest {
    pub payload: String,
    #[serde(default)]
    pub encoding: PayloadEncoding,
    #[serde(default)]
    pub used_skills: BTreeSet<AssetId>,
    #[serde(default)]
    pub consulted: BTreeSet<AssetId>,
    #[serde(default)]
    pub evidence: Vec<String>,
}

async fn submit(
    State(state): State<AppState>,
    Caller(me): Caller,
    Path(id): Path<u64>,
    Body(req): Body<SubmitRequest>,
) -> ApiResult<Task> {
    task_of(state.apply(
        &me,
        Command::SubmitDeliverable {
            task: TaskId(id),
            payload: req.payload,
            encoding: req.encoding,
            used_skills: req.used_skills,
            consulted: req.consulted,
            evidence: req.evidence,
        },
    )?)
}

#[derive(Debug, Deserialize)]
pub struct ReviewRequest {
    pub verdict: Verdict,
    #[serde(default)]
    pub feedback: String,
    #[serde(default, rename = "final")]
    pub final_: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReviewResponse {
    pub task: Task,
    pub settled: CreditAmount,
    pub held: CreditAmount,
    pub refunded: CreditAmount,
}

async fn review(
    State(state): State<AppState>,
    Caller(me): Caller,
    Path(id): Path<u64>,
    Body(req): Body<ReviewRequest>,
) -> ApiResult<ReviewResponse> {
    let cmd = Command::Review { task: TaskId(id), verdict: req.verdict, feedback: req.feedback, final_: req.final_ };
    match state.apply(&me, cmd)? {
        Outcome::Review { task, settled, held, refunded } => Ok(Json(ReviewResponse { task, settled, held, refunded })),
        o => Err(unexpected(o)),
    }
}

async fn cancel(State(state): State<AppState>, Caller(me): Caller, Path(id): Path<u64>) -> ApiResult<Task> {
    task_of(state.apply(&me, Command::CancelTask { task: TaskId(id) })?)
}

#[derive(Debug, Deserialize)]
pub struct ProposeRequest {
    pub task: TaskId,
    pub items: Vec<CandidateItem>,
}

async fn propose(State(state): State<AppState>, Caller(me): Caller, Body(req): Body<ProposeRequest>) -> Result<Response, ApiError> {
    state
        .apply(&me, Command::ProposeCandidates { task: req.task, items: req.items })
        .map(|o| Json(o).into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct ValidateRequest {
    #[serde(default)]
    pub validators: Vec<ValidatorSpec>,
}

async fn validate(
    State(state): State<AppState>,
    Caller(me): Caller,
    Path(id): Path<String>,
    body: String,
) -> Result<Response, ApiError> {
    let validators = if body.trim().is_empty() {
        Vec::new()
    } else {
        serde_json::from_str::<ValidateRequest>(&body)
            .map_err(|e| ApiError::BadRequest(e.to_string()))?
            .validators
    };
    match state.apply(&me, Command::Validate { asset: AssetId::new(id), validators })? {
        Outcome::Validation(report) => Ok(Json(report).into_response()),
        o => Err(unexpected(o)),
    }
}

async fn admit(State(state): State<AppState>, Caller(me): Caller, Path(id): Path<u64>) -> Result<Response, ApiError> {
    match state.apply(&me, Command::Admit { task: TaskId(id) })? {
        Outcome::Assets(a) => Ok(Json(a).into_response()),
        o => Err(unexpected(o)),
    }
}

#[derive(Debug, Deserialize)]
pub struct InvocationRequest {
    pub task: TaskId,
    pub success: bool,
    #[serde(default)]
    pub latency_ms: u64,
}

async fn invoke(
    State(state): State<AppState>,
    Caller(me): Caller,
    Path(id): Path<String>,
    Body(req): Body<InvocationRequest>,
) -> Result<Response, ApiError> {
    let cmd = Command::RecordInvocation {
        skill: AssetId::new(id),
        task: req.task,
        success: req.success,
        latency_ms: req.latency_ms,
    };
    match state.apply(&me, cmd)? {
        o @ Outcome::Invocation { .. } => Ok(Json(o).into_response()),
        o => Err(unexpected(o)),
    }
}

#[derive(Debug, Deserialize)]
pub struct AssetFilter {
    /// Include candidates and rejected assets.
    #[serde(default)]
    pub all: bool,
}

async fn list_assets(State(state): State<AppState>, Query(q): Query<AssetFilter>) -> Response {
    state.with_kernel(|k| {
        if q.all {
            Json(k.assets().iter().collect::<Vec<_>>()).into_response()
        } else {
            Json(k.assets().admitted().collect::<Vec<_>>()).into_response()
        }
    })
}

async fn get_asset(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id = AssetId::new(id);
    state.with_kernel(|k| match k.assets().get(&id).or_else(|| k.assets().resolve_admitted(&id)) {
        Some(a) => Ok(Json(a).into_response()),
        None => Err(Error::UnknownAssetId(id).into()),
    })
}

async fn lineage(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let lineage = state.with_kernel(|k| k.lineage(&AssetId::new(id)))?;
    Ok(Json(lineage).into_response())
}

#[derive(Debug, Deserialize)]
pub struct ScoreQuery {
    /// Comma-separated asset ids or names; all admitted skills if absent.
    pub ids: Option<String>,
}

async fn score(State(state): State<AppState>, Query(q): Query<ScoreQuery>) -> Result<Response, ApiError> {
    let weights = state.weights;
    state.with_kernel(|k| {
        let candidates: BTreeSet<AssetId> = match q.ids {
            Some(ids) => ids.split(',').filter(|s| !s.is_empty()).map(AssetId::from).collect(),
            None => k
                .assets()
                .admitted()
                .filter(|a| a.kind == bazaar_core::assets::AssetKind::Skill)
                .map(|a| a.id.clone())
                .collect(),
        };
        Ok(Json(k.score_capability(&candidates, &weights)?).into_response())
    })
}

#[derive(Debug, Deserialize)]
pub struct GraphQuery {
    #[serde(default)]
    pub format: Option<String>,
}

async fn graph(State(state): State<AppState>, Query(q): Query<GraphQuery>) -> Result<Response, ApiError> {
    state.with_kernel(|k| match q.format.as_deref() {
        None | Some("json") => Ok(Json(k.assets().export()).into_response()),
        Some("dot") => Ok(([(header::CONTENT_TYPE, "text/vnd.graphviz")], k.assets().to_dot()).into_response()),
        Some(other) => Err(ApiError::BadRequest(format!("unknown graph format {other:?}"))),
    })
}

async fn ledger_summary(State(state): State<AppState>) -> Response {
    Json(state.with_kernel(|k| k.balance_report())).into_response()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LedgerView {
    pub account: Account,
    pub entries: Vec<LedgerEntry>,
}

async fn ledger_of(State(state): State<AppState>, Path(who): Path<String>) -> ApiResult<LedgerView> {
    let who = ParticipantId::new(who);
    state.with_kernel(|k| {
        let account = k.account(&who).cloned().ok_or_else(|| Error::UnknownParticipant(who.clone()))?;
        let me = Party::Participant(who.clone());
        let entries = k
            .ledger()
            .entries()
            .iter()
            .filter(|e| e.debit == me || e.credit == me)
            .cloned()
            .collect();
        Ok(Json(LedgerView { account, entries }))
    })
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub from: u64,
}

async fn events(State(state): State<AppState>, Query(q): Query<EventsQuery>) -> Json<Vec<Event>> {
    let inner = state.inner.read().expect("kernel lock poisoned");
    let start = q.from.saturating_sub(1).min(inner.log.len() as u64) as usize;
    Json(inner.log[start..].to_vec())
}

#[derive(Debug, Deserialize)]
pub struct RawCommand {
    pub command: Command,
}

/// Apply any kernel command as the caller.
async fn raw_command(State(state): State<AppState>, Caller(me): Caller, body: String) -> Result<Response, ApiError> {
    let raw: RawCommand =
        serde_json::from_str(&body).map_err(|e| Error::MalformedCommand(e.to_string()))?;
    if matches!(raw.command, Command::OpenAccount { .. }) {
        return Err(Error::MalformedCommand("register through POST /participants".into()).into());
    }
    Ok(Json(state.apply(&me, raw.command)?).into_response())
}

async fn blob(State(state): State<AppState>, Path(digest): Path<String>) -> Result<Response, ApiError> {
    state.with_kernel(|k| match k.blobs().get(&digest) {
        Some(bytes) => Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes.to_vec()).into_response()),
        None => Err(ApiError::NotFound(format!("no blob {digest}"))),
    })
}
