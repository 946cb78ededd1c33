//! JSON-over-HTTP facade for ingestion, reports, clustering, battery and
//! anonymization.
//!
//! Every request needs `Authorization: Bearer <token>`. The admin token may
//! call everything; the optional read token only `GET` endpoints. Writes go
//! through one store mutex; reads work on an `Arc` snapshot taken at the
//! start of the request.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::anonymizer::{self, Hierarchy, Recipe};
use crate::clustering::{KMeansOptions, ScaleRule};
use crate::cohort::{ActiveDefinition, DropoutPointConfig};
use crate::indicators::{self, Indicator, Metric};
use crate::logparse::{ClassificationRuleSet, CourseMap};
use crate::motivation::{self, BatteryMode, BatteryRuleSet};
use crate::reports::{self, ClusterRequest, Error, ErrorClass, KChoice};
use crate::store::{CourseConfig, EventStore, Snapshot};
use crate::table::Table;

/// Request bodies (logs, CSV uploads) up to this size are accepted.
pub const BODY_LIMIT_BYTES: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub bind: SocketAddr,
    /// `None` keeps the store in memory.
    pub data_dir: Option<PathBuf>,
    pub admin_token: String,
    pub read_token: Option<String>,
    /// Empty allows no cross-origin callers; `*` allows any.
    pub cors_origins: Vec<String>,
    pub cluster_timeout: Duration,
    pub rules: ClassificationRuleSet,
}

impl ApiConfig {
    pub fn new(admin_token: impl Into<String>) -> Self {
        ApiConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            admin_token: admin_token.into(),
            read_token: None,
            cors_origins: Vec::new(),
            cluster_timeout: Duration::from_secs(60),
            rules: ClassificationRuleSet::reference(),
        }
    }

    /// Reads `MOOC_BIND`, `MOOC_TOKEN` (required), `MOOC_READ_TOKEN`,
    /// `MOOC_DATA_DIR`, `MOOC_CORS_ORIGINS` (comma separated) and
    /// `MOOC_CLUSTER_TIMEOUT_SECS`.
    pub fn from_env() -> reports::Result<Self> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let token = var("MOOC_TOKEN").ok_or_else(|| Error::InvalidArgument("MOOC_TOKEN must be set".into()))?;
        let mut cfg = ApiConfig::new(token);
        if let Some(b) = var("MOOC_BIND") {
            cfg.bind = b
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("MOOC_BIND `{b}` is not host:port")))?;
        }
        cfg.read_token = var("MOOC_READ_TOKEN");
        cfg.data_dir = var("MOOC_DATA_DIR").map(PathBuf::from);
        if let Some(o) = var("MOOC_CORS_ORIGINS") {
            cfg.cors_origins = o.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        if let Some(t) = var("MOOC_CLUSTER_TIMEOUT_SECS") {
            let secs: u64 = t
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("MOOC_CLUSTER_TIMEOUT_SECS `{t}` is not a number")))?;
            cfg.cluster_timeout = Duration::from_secs(secs);
        }
        Ok(cfg)
    }
}

pub struct AppState {
    store: Mutex<EventStore>,
    admin_token: String,
    read_token: Option<String>,
    cluster_timeout: Duration,
    rules: ClassificationRuleSet,
}

impl AppState {
    pub fn new(cfg: &ApiConfig, store: EventStore) -> reports::Result<Self> {
        if cfg.admin_token.is_empty() {
            return Err(Error::InvalidArgument("admin token must not be empty".into()));
        }
        Ok(AppState {
            store: Mutex::new(store),
            admin_token: cfg.admin_token.clone(),
            read_token: cfg.read_token.clone(),
            cluster_timeout: cfg.cluster_timeout,
            rules: cfg.rules.clone(),
        })
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        self.store.lock().expect("store lock").snapshot()
    }
}

struct ApiError(Error);

impl<E: Into<Error>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0.class() {
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Invalid => StatusCode::BAD_REQUEST,
            ErrorClass::Timeout => StatusCode::SERVICE_UNAVAILABLE,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({ "error": self.0.kind(), "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn invalid(msg: impl Into<String>) -> ApiError {
    ApiError(Error::InvalidArgument(msg.into()))
}

fn parse<T: std::str::FromStr>(name: &str, value: &str) -> ApiResult<T> {
    value.parse().map_err(|_| invalid(format!("bad value `{value}` for `{name}`")))
}

async fn auth(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let token = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    let admin = token == Some(state.admin_token.as_str());
    let reader = token.is_some() && token == state.read_token.as_deref();
    let read_only = req.method() == Method::GET || req.method() == Method::HEAD;
    if admin || (reader && read_only) {
        return next.run(req).await;
    }
    let (status, kind) = if reader {
        (StatusCode::FORBIDDEN, "forbidden")
    } else {
        (StatusCode::UNAUTHORIZED, "unauthorized")
    };
    let mut resp = (status, Json(json!({ "error": kind, "message": "missing or insufficient bearer token" }))).into_response();
    if status == StatusCode::UNAUTHORIZED {
        resp.headers_mut().insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
    }
    resp
}

fn cors(origins: &[String]) -> CorsLayer {
    let base = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE]);
    if origins.iter().any(|o| o == "*") {
        base.allow_origin(AllowOrigin::any())
    } else {
        base.allow_origin(AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok())))
    }
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/courses", get(list_courses).post(create_course))
        .route("/courses/{id}/students", post(upload_students))
        .route("/ingest/logs", post(ingest_logs))
        .route("/courses/{id}/summary", get(course_summary))
        .route("/courses/{id}/students/{user}/profile", get(student_profile))
        .route("/courses/{id}/indicators", get(indicator_comparison))
        .route("/courses/{id}/clusters", get(clusters))
        .route("/courses/{id}/dropout-point", get(dropout_point))
        .route("/courses/{id}/battery", get(battery))
        .route("/anonymize", post(anonymize))
        .layer(middleware::from_fn_with_state(Arc::clone(&state), auth))
        .layer(DefaultBodyLimit::max(BODY_LIMIT_BYTES))
        .layer(cors(cors_origins))
        .with_state(state)
}

/// Opens the store, binds and serves until Ctrl-C.
pub async fn serve(cfg: ApiConfig) -> reports::Result<()> {
    let store = match &cfg.data_dir {
        Some(dir) => EventStore::open(dir)?,
        None => EventStore::in_memory(),
    };
    let state = Arc::new(AppState::new(&cfg, store)?);
    let app = router(state, &cfg.cors_origins);
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn list_courses(State(state): State<Arc<AppState>>) -> Json<Vec<CourseConfig>> {
    Json(state.snapshot().courses().cloned().collect())
}

async fn create_course(State(state): State<Arc<AppState>>, Json(course): Json<CourseConfig>) -> ApiResult<(StatusCode, Json<CourseConfig>)> {
    let st = Arc::clone(&state);
    let c = course.clone();
    tokio::task::spawn_blocking(move || st.store.lock().expect("store lock").register_course(c))
        .await
        .map_err(|e| invalid(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(course)))
}

/// CSV body with a `user_id` column; other columns become attributes.
async fn upload_students(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> ApiResult<Json<serde_json::Value>> {
    state.snapshot().course(&id)?;
    let table = Table::parse(&body, ',')?;
    let n = tokio::task::spawn_blocking(move || reports::register_students(&mut state.store.lock().expect("store lock"), &id, &table))
        .await
        .map_err(|e| invalid(e.to_string()))??;
    Ok(Json(json!({ "registered": n })))
}

#[derive(Debug, Deserialize)]
struct IngestParams {
    course: Option<String>,
}

async fn ingest_logs(
    State(state): State<Arc<AppState>>,
    Query(p): Query<IngestParams>,
    body: String,
) -> ApiResult<Json<reports::IngestReport>> {
    let map = match p.course {
        Some(c) => {
            state.snapshot().course(&c)?;
            CourseMap::with_default(c)
        }
        None => CourseMap::default(),
    };
    let report = tokio::task::spawn_blocking(move || {
        let mut store = state.store.lock().expect("store lock");
        reports::ingest_log(&mut store, &body, &state.rules, &map)
    })
    .await
    .map_err(|e| invalid(e.to_string()))??;
    Ok(Json(report))
}

#[derive(Debug, Default, Deserialize)]
struct ActiveParam {
    active: Option<String>,
}

fn active_definition(raw: Option<&str>) -> ApiResult<ActiveDefinition> {
    match raw {
        None => Ok(ActiveDefinition::default()),
        Some(v) => serde_json::from_value(json!(v)).map_err(|_| invalid(format!("bad value `{v}` for `active`"))),
    }
}

async fn course_summary(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(p): Query<ActiveParam>,
) -> ApiResult<Json<reports::CourseSummaryReport>> {
    let def = active_definition(p.active.as_deref())?;
    Ok(Json(reports::course_summary(&state.snapshot(), &id, def)?))
}

#[derive(Debug, Default, Deserialize)]
struct ModeParam {
    mode: Option<String>,
}

fn battery_rules(mode: Option<&str>) -> ApiResult<BatteryRuleSet> {
    let mode: BatteryMode = match mode {
        Some(m) => parse("mode", m)?,
        None => BatteryMode::default(),
    };
    Ok(BatteryRuleSet::new(mode))
}

async fn student_profile(
    State(state): State<Arc<AppState>>,
    Path((id, user)): Path<(String, String)>,
    Query(p): Query<ModeParam>,
) -> ApiResult<Json<reports::StudentProfile>> {
    let rules = battery_rules(p.mode.as_deref())?;
    Ok(Json(reports::student_profile(&state.snapshot(), &id, &user, &rules)?))
}

#[derive(Debug, Deserialize)]
struct ComparisonParams {
    x: String,
    y: String,
    format: Option<String>,
}

async fn indicator_comparison(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(p): Query<ComparisonParams>,
) -> ApiResult<Response> {
    let (x, y): (Metric, Metric) = (parse("x", &p.x)?, parse("y", &p.y)?);
    if x == y {
        return Err(invalid("x and y must differ"));
    }
    let snap = state.snapshot();
    snap.course(&id)?;
    let cmp = indicators::compare_metrics(&snap, &id, x, y)?;
    match p.format.as_deref() {
        Some("csv") => {
            let csv = reports::comparison_table(&cmp).to_csv_string();
            Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
        }
        None | Some("json") => Ok(Json(cmp).into_response()),
        Some(other) => Err(invalid(format!("unknown format `{other}`"))),
    }
}

#[derive(Debug, Default, Deserialize)]
struct ClusterParams {
    population: Option<String>,
    k: Option<String>,
    seed: Option<u64>,
    restarts: Option<usize>,
    standardize: Option<bool>,
    rule: Option<String>,
    active: Option<String>,
}

async fn clusters(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(p): Query<ClusterParams>,
) -> ApiResult<Json<reports::ClusterReport>> {
    let mut req = ClusterRequest {
        population: p.population.filter(|s| !s.is_empty()),
        active_definition: active_definition(p.active.as_deref())?,
        ..Default::default()
    };
    if let Some(k) = p.k {
        req.k = k.parse::<KChoice>()?;
    }
    if let Some(seed) = p.seed {
        req.seed = seed;
    }
    if let Some(r) = p.restarts {
        req.options = KMeansOptions { restarts: r, ..req.options };
    }
    if let Some(s) = p.standardize {
        req.standardize = s;
    }
    if let Some(rule) = p.rule {
        req.rule = serde_json::from_value::<ScaleRule>(json!(rule)).map_err(|_| invalid(format!("bad value `{rule}` for `rule`")))?;
    }
    let snap = state.snapshot();
    let timeout = state.cluster_timeout;
    let job = tokio::task::spawn_blocking(move || reports::cluster_course(&snap, &id, &req));
    match tokio::time::timeout(timeout, job).await {
        Ok(joined) => Ok(Json(joined.map_err(|e| invalid(e.to_string()))??)),
        Err(_) => Err(ApiError(Error::Timeout(timeout.as_secs()))),
    }
}

#[derive(Debug, Default, Deserialize)]
struct DropoutParams {
    epsilon: Option<f64>,
    exceedances: Option<usize>,
    indicator: Option<String>,
}

async fn dropout_point(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(p): Query<DropoutParams>,
) -> ApiResult<Json<reports::DropoutReport>> {
    let mut cfg = DropoutPointConfig::default();
    if let Some(e) = p.epsilon {
        cfg.epsilon = e;
    }
    if let Some(x) = p.exceedances {
        cfg.allowed_exceedances = x;
    }
    if let Some(i) = p.indicator {
        cfg.indicator = parse::<Indicator>("indicator", &i)?;
    }
    Ok(Json(reports::dropout_report(&state.snapshot(), &id, &cfg)?))
}

#[derive(Debug, Default, Deserialize)]
struct BatteryParams {
    week: Option<u32>,
    mode: Option<String>,
    active: Option<String>,
}

async fn battery(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(p): Query<BatteryParams>,
) -> ApiResult<Json<motivation::BatteryReport>> {
    let rules = battery_rules(p.mode.as_deref())?;
    let def = active_definition(p.active.as_deref())?;
    let snap = state.snapshot();
    let course = snap.course(&id)?;
    let week = match p.week {
        Some(w) => w,
        None => motivation::last_completed_week(course, chrono::Utc::now())
            .ok_or_else(|| invalid("no completed course week yet; pass `week`"))?,
    };
    Ok(Json(motivation::battery_report(&snap, &id, week, &rules, def)?))
}

/// Multipart parts: `data` (CSV), `recipe` (JSON) and any number of
/// hierarchy CSVs whose part names the recipe uses as hierarchy paths.
/// Responds with the anonymized CSV; warnings travel in `x-anonymize-warnings`.
async fn anonymize(mut form: Multipart) -> ApiResult<Response> {
    let mut data = None;
    let mut recipe = None;
    let mut hierarchies = BTreeMap::new();
    while let Some(field) = form.next_field().await.map_err(|e| invalid(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let text = field.text().await.map_err(|e| invalid(e.to_string()))?;
        match name.as_str() {
            "data" => data = Some(text),
            "recipe" => recipe = Some(text),
            _ => {
                hierarchies.insert(name, Hierarchy::parse(&text)?);
            }
        }
    }
    let data = data.ok_or_else(|| invalid("missing `data` part"))?;
    let recipe = Recipe::from_json(&recipe.ok_or_else(|| invalid("missing `recipe` part"))?)?;
    let table = Table::parse(&data, ',')?;
    let outcome = tokio::task::spawn_blocking(move || anonymizer::apply_recipe_uploaded(&table, &recipe, &hierarchies))
        .await
        .map_err(|e| invalid(e.to_string()))??;
    let mut resp = ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], outcome.table.to_csv_string()).into_response();
    if !outcome.warnings.is_empty() {
        if let Ok(v) = HeaderValue::from_str(&outcome.warnings.join("; ")) {
            resp.headers_mut().insert("x-anonymize-warnings", v);
        }
    }
    Ok(resp)
}
