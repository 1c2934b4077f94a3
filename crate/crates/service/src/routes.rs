//! HTTP endpoints.
//!
//! ```text
//! GET  /api/info
//! POST /api/sessions                       {category, space}
//! GET  /api/sessions/{id}
//! POST /api/sessions/{id}/pool             {count, seed?}
//! POST /api/sessions/{id}/assignments      {image_id, side}
//! POST /api/sessions/{id}/calibrate
//! GET  /api/images/{image_id}              -> image/png
//! GET  /api/compasses/{id}
//! GET  /api/compasses/{id}/trajectories
//! POST /api/compasses/{id}/trajectories    {start_image_id | seed, category?}
//! POST /api/compasses/{id}/save            {label}
//! GET  /api/trajectories/{id}
//! POST /api/trajectories/{id}/extend       {end}
//! GET  /api/directions?status=approved&space=
//! POST /api/directions/{id}/load
//! ```

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use latcompass_core::engine::{BalancePolicy, CalibratedCompass, CompassMap, End, Side, Trajectory, TrajectoryStep};
use latcompass_core::generator::{CategoryId, GeneratorInfo};
use latcompass_core::ids::{CompassId, ImageId, RecordId, SessionId, TrajectoryId};
use latcompass_core::latent::{SpaceTag, UNIT_NORM_TOLERANCE};
use latcompass_core::store::{DirectionRecord, ModerationStatus};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::state::{AppState, Owner};

/// Largest number of images one pool request may add.
pub const MAX_POOL_REQUEST: usize = 200;
/// Largest pool a session may hold.
pub const MAX_POOL_SIZE: usize = 2_000;

type AppRef = Arc<AppState>;

pub fn router(state: AppRef) -> Router {
    Router::new()
        .route("/api/info", get(info))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/pool", post(fill_pool))
        .route("/api/sessions/{id}/assignments", post(assign))
        .route("/api/sessions/{id}/calibrate", post(calibrate))
        .route("/api/images/{id}", get(image))
        .route("/api/compasses/{id}", get(get_compass))
        .route("/api/compasses/{id}/trajectories", get(list_trajectories).post(add_trajectory))
        .route("/api/compasses/{id}/save", post(save))
        .route("/api/trajectories/{id}", get(get_trajectory))
        .route("/api/trajectories/{id}/extend", post(extend))
        .route("/api/directions", get(list_directions))
        .route("/api/directions/{id}/load", post(load_direction))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::not_found("NotFound", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "MethodNotAllowed", "method not allowed on this endpoint")
}

/// Parses a JSON body; an empty body reads as `{}`.
fn body<T: DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    let bytes = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { bytes };
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request("MalformedRequest", e.to_string()))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn image_url(id: &ImageId) -> String {
    format!("/api/images/{id}")
}

fn internal(e: anyhow::Error) -> ApiError {
    ApiError::internal(format!("{e:#}"))
}

fn unknown_session(id: &str) -> ApiError {
    ApiError::not_found("UnknownSession", format!("no session {id}"))
}

fn unknown_compass(id: &str) -> ApiError {
    ApiError::not_found("UnknownCompass", format!("no compass {id}"))
}

fn unknown_trajectory(id: &str) -> ApiError {
    ApiError::not_found("UnknownTrajectory", format!("no trajectory {id}"))
}

// ---------------------------------------------------------------- views

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfoView {
    #[serde(flatten)]
    pub info: GeneratorInfo,
    pub fingerprint: String,
    pub truncation_theta: f64,
    pub policy: BalancePolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolImageView {
    pub image_id: ImageId,
    pub url: String,
    pub side: Side,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: SessionId,
    pub category: CategoryId,
    pub space: SpaceTag,
    pub created_at: DateTime<Utc>,
    pub pool: Vec<PoolImageView>,
    pub n_left: usize,
    pub n_right: usize,
    /// Whether the current sorting satisfies the balance policy.
    pub ready: bool,
    pub policy: BalancePolicy,
    pub next_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolView {
    pub session_id: SessionId,
    pub samples: Vec<PoolImageView>,
    pub pool_size: usize,
    pub next_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentView {
    pub image_id: ImageId,
    pub side: Side,
    pub n_left: usize,
    pub n_right: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompassView {
    pub compass_id: CompassId,
    pub space: SpaceTag,
    pub category: CategoryId,
    pub direction: Vec<f64>,
    pub direction_norm: f64,
    /// `‖d‖` equals 1 within the unit-norm tolerance.
    pub direction_norm_check: bool,
    pub bias: f64,
    pub weight_norm: f64,
    pub step_unit: f64,
    pub feature_scale: f64,
    pub separable: Option<bool>,
    pub n_left: Option<usize>,
    pub n_right: Option<usize>,
    pub source_session: Option<SessionId>,
    pub trajectories: Vec<TrajectoryId>,
}

impl CompassView {
    fn new(map: &CompassMap) -> Self {
        let c: &CalibratedCompass = &map.compass;
        let norm = c.direction.norm();
        Self {
            compass_id: c.id.clone(),
            space: c.space,
            category: c.category,
            direction: c.direction.values().to_vec(),
            direction_norm: norm,
            direction_norm_check: (norm - 1.0).abs() <= UNIT_NORM_TOLERANCE,
            bias: c.bias,
            weight_norm: c.weight_norm,
            step_unit: c.step_unit.magnitude(),
            feature_scale: c.feature_scale,
            separable: c.training_stats.map(|s| s.separable),
            n_left: c.training_stats.map(|s| s.n_left),
            n_right: c.training_stats.map(|s| s.n_right),
            source_session: c.source_session.clone(),
            trajectories: map.trajectories.iter().map(|t| t.id.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: ImageId,
    pub url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepView {
    pub trajectory_id: TrajectoryId,
    pub step_index: i32,
    pub image_id: ImageId,
    pub url: String,
    pub lambda: f64,
    pub margin_value: f64,
    pub clipped: bool,
}

impl StepView {
    fn new(trajectory: &TrajectoryId, step: &TrajectoryStep) -> Self {
        Self {
            trajectory_id: trajectory.clone(),
            step_index: step.step_index,
            image_id: step.image_id.clone(),
            url: image_url(&step.image_id),
            lambda: step.lambda,
            margin_value: step.margin_value,
            clipped: step.clipped,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryView {
    pub trajectory_id: TrajectoryId,
    pub compass_id: CompassId,
    pub category: CategoryId,
    pub center: ImageRef,
    pub steps: Vec<StepView>,
}

impl TrajectoryView {
    fn new(t: &Trajectory) -> Self {
        Self {
            trajectory_id: t.id.clone(),
            compass_id: t.compass.clone(),
            category: t.category,
            center: ImageRef { image_id: t.center.id.clone(), url: image_url(&t.center.id) },
            steps: t.steps.iter().map(|s| StepView::new(&t.id, s)).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadView {
    pub compass: CompassView,
    pub record: DirectionRecord,
    pub fingerprint_mismatch: bool,
}

// ---------------------------------------------------------------- handlers

async fn info(State(state): State<AppRef>) -> Json<InfoView> {
    Json(InfoView {
        info: state.engine.info().clone(),
        fingerprint: state.fingerprint.clone(),
        truncation_theta: state.engine.theta(),
        policy: state.calibration.policy,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSession {
    category: CategoryId,
    #[serde(default)]
    space: Option<SpaceTag>,
}

fn session_view(state: &AppState, session: &latcompass_core::engine::Session) -> SessionView {
    let (n_left, n_right) = session.counts();
    let policy = state.calibration.policy;
    SessionView {
        session_id: session.id.clone(),
        category: session.category,
        space: session.space,
        created_at: session.created_at,
        pool: session.pool.iter().map(|s| pool_image(session, s)).collect(),
        n_left,
        n_right,
        ready: policy.check(n_left, n_right).is_ok(),
        policy,
        next_seed: session.next_seed(),
    }
}

fn pool_image(
    session: &latcompass_core::engine::Session,
    sample: &latcompass_core::generator::ImageSample,
) -> PoolImageView {
    PoolImageView {
        image_id: sample.id.clone(),
        url: image_url(&sample.id),
        side: session.side_of(&sample.id),
        z: sample.z.values().to_vec(),
    }
}

async fn create_session(State(state): State<AppRef>, bytes: Bytes) -> ApiResult<Response> {
    let req: NewSession = body(&bytes)?;
    let session = state.engine.create_session(req.category, req.space.unwrap_or(SpaceTag::Z))?;
    let view = session_view(&state, &session);
    state.sessions.insert(session.id.clone(), session);
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(state): State<AppRef>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let session = state.sessions.get(&SessionId::from(id.as_str())).ok_or_else(|| unknown_session(&id))?;
    let session = session.lock().await;
    Ok(Json(session_view(&state, &session)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolRequest {
    count: usize,
    #[serde(default)]
    seed: Option<u64>,
}

async fn fill_pool(State(state): State<AppRef>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Json<PoolView>> {
    let req: PoolRequest = body(&bytes)?;
    if req.count == 0 || req.count > MAX_POOL_REQUEST {
        return Err(ApiError::bad_request(
            "InvalidRequest",
            format!("count must be between 1 and {MAX_POOL_REQUEST}, got {}", req.count),
        ));
    }
    let session = state.sessions.get(&SessionId::from(id.as_str())).ok_or_else(|| unknown_session(&id))?;
    let mut session = session.lock_owned().await;
    if session.pool.len() + req.count > MAX_POOL_SIZE {
        return Err(ApiError::bad_request(
            "PoolFull",
            format!("pool holds {} images; at most {MAX_POOL_SIZE} are allowed", session.pool.len()),
        ));
    }
    blocking(move || {
        let seed = req.seed.unwrap_or_else(|| session.next_seed());
        let samples = state.engine.fill_pool(&mut session, req.count, seed)?;
        let owner = Owner::Session(session.id.clone());
        for s in &samples {
            state.add_image(s.id.clone(), &s.pixels, Some(s.z.clone()), s.category, owner.clone()).map_err(internal)?;
        }
        Ok(Json(PoolView {
            session_id: session.id.clone(),
            samples: samples.iter().map(|s| pool_image(&session, s)).collect(),
            pool_size: session.pool.len(),
            next_seed: session.next_seed(),
        }))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignRequest {
    image_id: ImageId,
    side: Side,
}

async fn assign(State(state): State<AppRef>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Json<AssignmentView>> {
    let req: AssignRequest = body(&bytes)?;
    let session = state.sessions.get(&SessionId::from(id.as_str())).ok_or_else(|| unknown_session(&id))?;
    let mut session = session.lock().await;
    session.assign(&req.image_id, req.side)?;
    let (n_left, n_right) = session.counts();
    Ok(Json(AssignmentView { image_id: req.image_id, side: req.side, n_left, n_right }))
}

async fn calibrate(State(state): State<AppRef>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = state.sessions.get(&SessionId::from(id.as_str())).ok_or_else(|| unknown_session(&id))?;
    let session = session.lock_owned().await;
    let worker = state.clone();
    let compass = blocking(move || Ok(worker.engine.calibrate(&session, &worker.calibration)?)).await?;
    let map = CompassMap::new(compass);
    let view = CompassView::new(&map);
    state.compasses.insert(map.compass.id.clone(), map);
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn image(State(state): State<AppRef>, Path(id): Path<String>) -> ApiResult<Response> {
    let image = state
        .image(&ImageId::from(id.as_str()))
        .ok_or_else(|| ApiError::not_found("UnknownImage", format!("no image {id}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], Bytes::from_owner(image.png)).into_response())
}

async fn get_compass(State(state): State<AppRef>, Path(id): Path<String>) -> ApiResult<Json<CompassView>> {
    let map = state.compasses.get(&CompassId::from(id.as_str())).ok_or_else(|| unknown_compass(&id))?;
    let map = map.lock().await;
    Ok(Json(CompassView::new(&map)))
}

async fn list_trajectories(
    State(state): State<AppRef>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<TrajectoryView>>> {
    let map = state.compasses.get(&CompassId::from(id.as_str())).ok_or_else(|| unknown_compass(&id))?;
    let map = map.lock().await;
    Ok(Json(map.trajectories.iter().map(TrajectoryView::new).collect()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewTrajectory {
    #[serde(default)]
    start_image_id: Option<ImageId>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    category: Option<CategoryId>,
}

async fn add_trajectory(State(state): State<AppRef>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Response> {
    let req: NewTrajectory = body(&bytes)?;
    let map = state.compasses.get(&CompassId::from(id.as_str())).ok_or_else(|| unknown_compass(&id))?;
    let start = match (&req.start_image_id, req.seed) {
        (Some(image_id), None) => {
            let image = state
                .image(image_id)
                .ok_or_else(|| ApiError::not_found("UnknownImage", format!("no image {image_id}")))?;
            let z = image.z.ok_or_else(|| {
                ApiError::bad_request("InvalidRequest", format!("image {image_id} has no latent to start from"))
            })?;
            Some((z, image.category))
        }
        (None, Some(_)) => None,
        _ => {
            return Err(ApiError::bad_request("InvalidRequest", "give exactly one of start_image_id and seed"));
        }
    };
    let mut map = map.lock_owned().await;
    let worker = state.clone();
    let view = blocking(move || {
        let (z, category) = match start {
            Some((z, category)) => (z, req.category.unwrap_or(category)),
            None => {
                let category = req.category.unwrap_or(map.compass.category);
                let seed = req.seed.expect("checked above");
                (worker.engine.generator().sample(seed, category)?.z, category)
            }
        };
        let compass_id = map.compass.id.clone();
        let trajectory = map.add_trajectory(&worker.engine, &z, category)?;
        let owner = Owner::Compass(compass_id.clone());
        let center = &trajectory.center;
        worker
            .add_image(center.id.clone(), &center.pixels, Some(center.z.clone()), category, owner.clone())
            .map_err(internal)?;
        for step in &trajectory.steps {
            worker.add_image(step.image_id.clone(), &step.image, None, category, owner.clone()).map_err(internal)?;
        }
        worker.add_trajectory(trajectory.id.clone(), compass_id);
        Ok(TrajectoryView::new(trajectory))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_trajectory(State(state): State<AppRef>, Path(id): Path<String>) -> ApiResult<Json<TrajectoryView>> {
    let trajectory_id = TrajectoryId::from(id.as_str());
    let compass = state.compass_of(&trajectory_id).ok_or_else(|| unknown_trajectory(&id))?;
    let map = state.compasses.get(&compass).ok_or_else(|| unknown_trajectory(&id))?;
    let map = map.lock().await;
    let trajectory = map.trajectories.iter().find(|t| t.id == trajectory_id).ok_or_else(|| unknown_trajectory(&id))?;
    Ok(Json(TrajectoryView::new(trajectory)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtendRequest {
    end: End,
}

async fn extend(State(state): State<AppRef>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Json<StepView>> {
    let req: ExtendRequest = body(&bytes)?;
    let trajectory_id = TrajectoryId::from(id.as_str());
    let compass = state.compass_of(&trajectory_id).ok_or_else(|| unknown_trajectory(&id))?;
    let map = state.compasses.get(&compass).ok_or_else(|| unknown_trajectory(&id))?;
    let mut map = map.lock_owned().await;
    blocking(move || {
        let step = map.extend(&state.engine, &trajectory_id, req.end)?;
        let category = map
            .trajectories
            .iter()
            .find(|t| t.id == trajectory_id)
            .map(|t| t.category)
            .expect("extended trajectory exists");
        state
            .add_image(step.image_id.clone(), &step.image, None, category, Owner::Compass(compass))
            .map_err(internal)?;
        Ok(Json(StepView::new(&trajectory_id, &step)))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SaveRequest {
    label: String,
}

async fn save(State(state): State<AppRef>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Response> {
    let req: SaveRequest = body(&bytes)?;
    let map = state.compasses.get(&CompassId::from(id.as_str())).ok_or_else(|| unknown_compass(&id))?;
    let compass = map.lock().await.compass.clone();
    let record =
        blocking(move || Ok(state.store.save(&compass, &req.label, compass.category, &state.fingerprint)?)).await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn list_directions(
    State(state): State<AppRef>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<Json<Vec<DirectionRecord>>> {
    if let Some(status) = query.get("status") {
        let status: ModerationStatus =
            status.parse().map_err(|e: String| ApiError::bad_request("InvalidRequest", e))?;
        if status != ModerationStatus::Approved {
            return Err(ApiError::bad_request("InvalidRequest", "only approved directions are listed"));
        }
    }
    let space = match query.get("space") {
        Some(raw) => Some(raw.parse::<SpaceTag>().map_err(ApiError::from)?),
        None => None,
    };
    blocking(move || {
        state.store.refresh_if_changed()?;
        Ok(Json(state.store.list(Some(ModerationStatus::Approved), space)))
    })
    .await
}

async fn load_direction(State(state): State<AppRef>, Path(id): Path<String>) -> ApiResult<Response> {
    let worker = state.clone();
    let loaded = blocking(move || {
        worker.store.refresh_if_changed()?;
        Ok(worker.store.load(&RecordId::from(id.as_str()), &worker.fingerprint)?)
    })
    .await?;
    let map = CompassMap::new(loaded.compass);
    let view = LoadView {
        compass: CompassView::new(&map),
        record: loaded.record,
        fingerprint_mismatch: loaded.fingerprint_mismatch,
    };
    state.compasses.insert(map.compass.id.clone(), map);
    Ok((StatusCode::CREATED, Json(view)).into_response())
}
