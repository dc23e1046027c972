//! Read-only REST API over a fitted run, versioned under `/api/v1`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query as UrlQuery, State};
use axum::http::{header, HeaderName, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mcpm_core::{EmbeddingSet, Metric, TokenId, Vec3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::commands::{cluster_run, probe_query, rank_token, ClusterSummary, RankRow, RankingRecord, Run};
use crate::config::{Query, RunConfig};
use crate::error::{CliError, Result};
use crate::fieldfile::ORDER;

/// Trajectories returned per probe request.
pub const MAX_POLYLINES: usize = 200;
pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 1000;
pub const SLICE_DIMS_HEADER: &str = "x-slice-dims";

pub struct AppState {
    pub run: Run,
    pub cfg: RunConfig,
    pub baselines: EmbeddingSet,
    pub clusters: ClusterSummary,
    workers: Semaphore,
}

impl AppState {
    /// Loads the run named by `cfg.run_dir` and labels its clusters once.
    pub fn new(cfg: RunConfig, workers: usize) -> Result<Self> {
        cfg.validate()?;
        let run = Run::load(cfg.run_dir()?)?;
        let baselines = run.baseline_vectors(&cfg)?;
        let clusters = ClusterSummary::new(&cluster_run(&run, &cfg), cfg.analysis.assign_radius);
        Ok(Self {
            run,
            cfg,
            baselines,
            clusters,
            workers: Semaphore::new(workers.max(1)),
        })
    }

    fn resolve_token(&self, s: &str) -> Result<TokenId> {
        match self.run.token(s) {
            Ok(id) => Ok(id),
            Err(e) => match s.parse::<TokenId>() {
                Ok(id) if id < self.run.cloud.len() => Ok(id),
                _ => Err(e),
            },
        }
    }

    fn token_record(&self, id: TokenId) -> TokenRecord {
        let t = &self.run.cloud.tokens[id];
        TokenRecord {
            id,
            surface: t.surface.clone(),
            meta: t.meta.clone(),
            position: self.run.cloud.positions[id],
            cluster: self.clusters.token_labels.get(id).copied().flatten(),
        }
    }

    /// Runs blocking work on the bounded probe pool.
    async fn compute<T: Send + 'static>(
        self: &Arc<Self>,
        f: impl FnOnce(&AppState) -> Result<T> + Send + 'static,
    ) -> Result<T, ApiError> {
        let _permit = self.workers.acquire().await.expect("semaphore is never closed");
        let state = Arc::clone(self);
        tokio::task::spawn_blocking(move || f(&state))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
            .map_err(ApiError::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub id: TokenId,
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<String>,
    pub position: Vec3,
    pub cluster: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenPage {
    pub total: usize,
    pub offset: usize,
    pub items: Vec<TokenRecord>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    suggestions: Vec<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            suggestions: Vec::new(),
        }
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        let status = match &e {
            CliError::UnknownSurface { .. } | CliError::Core(mcpm_core::Error::UnknownToken(_)) => StatusCode::NOT_FOUND,
            CliError::Config(_) => StatusCode::BAD_REQUEST,
            CliError::Core(mcpm_core::Error::Io { .. }) | CliError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let suggestions = match &e {
            CliError::UnknownSurface { suggestions, .. } => suggestions.clone(),
            _ => Vec::new(),
        };
        Self {
            status,
            message: e.to_string(),
            suggestions,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if !self.suggestions.is_empty() {
            body["suggestions"] = json!(self.suggestions);
        }
        (self.status, Json(body)).into_response()
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/tokens", get(tokens))
        .route("/token/{id}", get(token))
        .route("/clusters", get(clusters))
        .route("/field/meta", get(field_meta))
        .route("/field/slice", get(field_slice))
        .route("/probe", post(probe))
        .route("/rankings", get(rankings));
    Router::new().nest("/api/v1", api).with_state(state)
}

#[derive(Debug, Deserialize)]
struct TokensParams {
    offset: Option<usize>,
    limit: Option<usize>,
    q: Option<String>,
}

/// Paged token list; `q` keeps surfaces containing it, case-insensitively.
async fn tokens(State(s): State<Shared>, UrlQuery(p): UrlQuery<TokensParams>) -> Json<TokenPage> {
    let needle = p.q.map(|q| q.to_lowercase());
    let matching: Vec<TokenId> = s
        .run
        .cloud
        .tokens
        .iter()
        .filter(|t| needle.as_ref().is_none_or(|n| t.surface.to_lowercase().contains(n.as_str())))
        .map(|t| t.id)
        .collect();
    let offset = p.offset.unwrap_or(0);
    let limit = p.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let items = matching
        .iter()
        .skip(offset)
        .take(limit)
        .map(|&id| s.token_record(id))
        .collect();
    Json(TokenPage {
        total: matching.len(),
        offset,
        items,
    })
}

async fn token(State(s): State<Shared>, UrlPath(id): UrlPath<TokenId>) -> Result<Json<TokenRecord>, ApiError> {
    if id >= s.run.cloud.len() {
        return Err(CliError::Core(mcpm_core::Error::UnknownToken(id)).into());
    }
    Ok(Json(s.token_record(id)))
}

async fn clusters(State(s): State<Shared>) -> Json<ClusterSummary> {
    Json(s.clusters.clone())
}

async fn field_meta(State(s): State<Shared>) -> Json<Value> {
    let trace = &s.run.trace;
    Json(json!({
        "dims": trace.dims.as_array(),
        "order": ORDER,
        "dtype": "f32le",
        "extent": [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]],
        "max": trace.max_value(),
        "total_mass": trace.total_mass(),
        "n_tokens": s.run.cloud.len(),
        "meta": s.run.trace_meta,
    }))
}

#[derive(Debug, Deserialize)]
struct SliceParams {
    axis: String,
    index: usize,
}

/// Raw f32le trace slice; `x-slice-dims` carries `width,height`.
async fn field_slice(State(s): State<Shared>, UrlQuery(p): UrlQuery<SliceParams>) -> Result<Response, ApiError> {
    let axis = crate::commands::parse_axis(&p.axis).map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, m))?;
    let (values, [w, h]) = s.run.trace.slice(axis, p.index).ok_or_else(|| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("index {} out of range for axis {}", p.index, p.axis),
        )
    })?;
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (HeaderName::from_static(SLICE_DIMS_HEADER), format!("{w},{h}")),
        ],
        bytes,
    )
        .into_response())
}

/// A token given by surface or by id.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TokenRef {
    Id(TokenId),
    Surface(String),
}

#[derive(Debug, Clone, Deserialize)]
pub struct ProbeRequest {
    pub token: Option<TokenRef>,
    pub pos: Option<Vec3>,
    /// Partial probe parameters layered over the server's configuration.
    #[serde(default)]
    pub params: Option<Value>,
    pub seed: Option<u64>,
    pub n_repeats: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProbeResponse {
    pub query: Option<TokenRecord>,
    pub seed_position: Vec3,
    pub ranking: Vec<RankRow>,
    pub euclidean: Option<Vec<RankRow>>,
    pub cosine: Option<Vec<RankRow>>,
    pub discovered: Vec<TokenId>,
    pub trajectories: Vec<Vec<Vec3>>,
    pub direction_stats: mcpm_core::analysis::DirectionStats,
}

fn merge(base: &mut Value, overrides: &Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn request_config(s: &AppState, req: &ProbeRequest) -> Result<(RunConfig, Query), ApiError> {
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, m);
    let mut cfg = s.cfg.clone();
    if let Some(overrides) = &req.params {
        let mut v = serde_json::to_value(&cfg.probe).expect("params serialize");
        merge(&mut v, overrides);
        cfg.probe = serde_json::from_value(v).map_err(|e| bad(format!("bad params: {e}")))?;
    }
    if let Some(seed) = req.seed {
        cfg.seed = Some(seed);
    }
    if let Some(n) = req.n_repeats {
        cfg.analysis.n_repeats = n;
    }
    let query = match (&req.token, req.pos) {
        (Some(t), None) => {
            let id = match t {
                TokenRef::Id(id) if *id < s.run.cloud.len() => *id,
                TokenRef::Id(id) => return Err(CliError::Core(mcpm_core::Error::UnknownToken(*id)).into()),
                TokenRef::Surface(name) => s.run.token(name)?,
            };
            Query::Token(s.run.cloud.tokens[id].surface.clone())
        }
        (None, Some(p)) => Query::Pos(p),
        _ => return Err(bad("give exactly one of \"token\" and \"pos\"".into())),
    };
    cfg.validate()?;
    Ok((cfg, query))
}

async fn probe(State(s): State<Shared>, Json(req): Json<ProbeRequest>) -> Result<Json<ProbeResponse>, ApiError> {
    let (cfg, query) = request_config(&s, &req)?;
    let resp = s
        .compute(move |st| {
            let out = probe_query(&st.run, &cfg, &query, Some(&st.baselines))?;
            let surface = |t: TokenId| st.run.surface(t);
            let rows = |r: &mcpm_core::Ranking| RankingRecord::new(r, surface).entries;
            Ok(ProbeResponse {
                query: out.query().map(|q| st.token_record(q)),
                seed_position: out.exploration.seed,
                ranking: rows(&out.exploration.ranking),
                euclidean: out.euclidean.as_ref().map(rows),
                cosine: out.cosine.as_ref().map(rows),
                discovered: out.exploration.counts.discovered(),
                trajectories: out.trajectories().decimated(MAX_POLYLINES),
                direction_stats: out.direction_stats,
            })
        })
        .await?;
    Ok(Json(resp))
}

#[derive(Debug, Deserialize)]
struct RankingsParams {
    token: String,
    metric: Option<String>,
    seed: Option<u64>,
}

async fn rankings(
    State(s): State<Shared>,
    UrlQuery(p): UrlQuery<RankingsParams>,
) -> Result<Json<RankingRecord>, ApiError> {
    let metric: Metric = p
        .metric
        .as_deref()
        .unwrap_or("mcpm")
        .parse()
        .map_err(|m: String| ApiError::new(StatusCode::BAD_REQUEST, m))?;
    let id = s.resolve_token(&p.token)?;
    let mut cfg = s.cfg.clone();
    if let Some(seed) = p.seed {
        cfg.seed = Some(seed);
    }
    let record = s
        .compute(move |st| {
            let surface = st.run.surface(id);
            let ranking = match metric {
                Metric::Mcpm => rank_token(&st.run, &cfg, &surface, metric)?,
                Metric::Euclidean => mcpm_core::analysis::euclidean_ranking(&st.baselines, id)?,
                Metric::Cosine => mcpm_core::analysis::cosine_ranking(&st.baselines, id)?,
            };
            Ok(RankingRecord::new(&ranking, |t| st.run.surface(t)))
        })
        .await?;
    Ok(Json(record))
}

/// Binds `host:port` and serves until interrupted.
pub fn cmd_serve(cfg: RunConfig, host: &str, port: u16, workers: usize) -> Result<()> {
    let state = Arc::new(AppState::new(cfg, workers)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Config(format!("cannot start the runtime: {e}")))?;
    rt.block_on(async move {
        let addr = format!("{host}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse => CliError::PortInUse(port),
            _ => CliError::io(addr.clone(), e),
        })?;
        let local: SocketAddr = listener.local_addr().map_err(|e| CliError::io(addr.clone(), e))?;
        println!("serving http://{local}/api/v1");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::io(addr, e))
    })
}
