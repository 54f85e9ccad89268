//! HTTP API consumed by the navigator.
//!
//! Every JSON body carries `schema_version`. Errors are `{code, message,
//! field?}` with a matching status code. Each session runs at most one
//! optimization job at a time; its progress is polled through `/job`.
//! Session writes are serialized by a per-session lock and all file and dose
//! work runs on the blocking pool.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use brachynav_core::case::{generate_phantom, load_case, CatheterKind, PatientCase, PhantomSpec};
use brachynav_core::dose::{DoseEngine, DoseGrid, SliceAxis, SliceSpec};
use brachynav_core::optimizer::{
    contribution_report, optimize_with, reoptimize_with, sort_plans, Constraints, ContributionReport,
    MaxTimeOverride, OptimizationSettings, Plan, PlanId, PlanSet, Progress, Provenance, RunControl, SortKey,
};
use brachynav_core::geometry::Vec3;
use brachynav_core::SCHEMA_VERSION;

use crate::diff::{compute_diff, PlanDiff};
use crate::error::{ErrorCode, Result, ServiceError};
use crate::export::{export_plan, import_plan, write_export, ExportedPlan};
use crate::session::{Session, SessionState, SessionStore};

/// Response body with the schema version alongside the payload fields.
#[derive(Serialize)]
struct Envelope<T> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

fn ok<T: Serialize>(body: T) -> Response {
    Json(Envelope {
        schema_version: SCHEMA_VERSION,
        body,
    })
    .into_response()
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(Envelope { schema_version: SCHEMA_VERSION, body: self })).into_response()
    }
}

impl From<JsonRejection> for ServiceError {
    fn from(r: JsonRejection) -> Self {
        ServiceError::new(ErrorCode::Parse, r.body_text())
    }
}

impl From<QueryRejection> for ServiceError {
    fn from(r: QueryRejection) -> Self {
        ServiceError::new(ErrorCode::Parse, r.body_text())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Optimize,
    Reoptimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub kind: JobKind,
    pub state: JobState,
    pub run_id: u32,
    pub evaluations: usize,
    pub budget: usize,
    /// Evaluations consumed / budget.
    pub progress: f64,
    pub error: Option<ServiceError>,
}

struct Inner {
    store: SessionStore,
    engine: DoseEngine,
    cases: Mutex<HashMap<String, Arc<PatientCase>>>,
    jobs: Mutex<HashMap<String, Arc<Mutex<JobStatus>>>>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(store: SessionStore, engine: DoseEngine) -> Self {
        AppState {
            inner: Arc::new(Inner {
                store,
                engine,
                cases: Mutex::default(),
                jobs: Mutex::default(),
                locks: Mutex::default(),
            }),
        }
    }

    pub fn store(&self) -> &SessionStore {
        &self.inner.store
    }

    pub fn engine(&self) -> &DoseEngine {
        &self.inner.engine
    }

    fn case(&self, sid: &str) -> Result<Arc<PatientCase>> {
        if let Some(c) = self.inner.cases.lock().unwrap().get(sid) {
            return Ok(c.clone());
        }
        let case = Arc::new(self.store().load_case(sid)?);
        self.inner.cases.lock().unwrap().insert(sid.to_string(), case.clone());
        Ok(case)
    }

    fn session(&self, sid: &str) -> Result<Session> {
        Ok(Session {
            state: self.store().load_state(sid)?,
            case: (*self.case(sid)?).clone(),
        })
    }

    fn lock(&self, sid: &str) -> Arc<Mutex<()>> {
        self.inner.locks.lock().unwrap().entry(sid.to_string()).or_default().clone()
    }

    /// Read-modify-write of a session's state under its lock.
    fn update<R>(&self, sid: &str, f: impl FnOnce(&mut SessionState) -> Result<R>) -> Result<R> {
        let lock = self.lock(sid);
        let _guard = lock.lock().unwrap();
        let mut state = self.store().load_state(sid)?;
        let r = f(&mut state)?;
        self.store().save_state(&state)?;
        Ok(r)
    }

    fn job(&self, sid: &str) -> Option<JobStatus> {
        self.inner.jobs.lock().unwrap().get(sid).map(|j| j.lock().unwrap().clone())
    }

    fn is_running(&self, sid: &str) -> bool {
        self.job(sid).is_some_and(|j| j.state == JobState::Running)
    }
}

async fn blocking<T, F>(state: AppState, f: F) -> Result<T>
where
    T: Send + 'static,
    F: FnOnce(AppState) -> Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(state))
        .await
        .map_err(|e| ServiceError::new(ErrorCode::Io, format!("worker failed: {e}")))?
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{sid}", get(get_session))
        .route("/sessions/{sid}/optimize", post(start_optimize))
        .route("/sessions/{sid}/reoptimize", post(start_reoptimize))
        .route("/sessions/{sid}/job", get(get_job))
        .route("/sessions/{sid}/plan-sets", get(list_plan_sets))
        .route("/sessions/{sid}/plan-sets/{run}", get(get_plan_set))
        .route("/sessions/{sid}/plans/{pid}", get(get_plan))
        .route("/sessions/{sid}/plans/{pid}/slice", get(get_slice))
        .route("/sessions/{sid}/plans/{pid}/export", post(export))
        .route("/sessions/{sid}/favorites/{pid}", post(toggle_favorite))
        .route("/sessions/{sid}/selection", put(set_selection))
        .route("/sessions/{sid}/diff", get(get_diff))
        .route("/sessions/{sid}/import", post(import))
        .fallback(|| async { ServiceError::not_found("no such endpoint") })
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn parse_plan_id(s: &str) -> Result<PlanId> {
    s.parse::<PlanId>().map_err(ServiceError::from)
}

async fn health() -> Response {
    ok(serde_json::json!({ "status": "ok" }))
}

#[derive(Serialize)]
struct SessionList {
    sessions: Vec<String>,
}

async fn list_sessions(State(app): State<AppState>) -> Result<Response> {
    let list = blocking(app, |app| {
        let dir = app.store().root().join("sessions");
        let mut sessions: Vec<String> = match std::fs::read_dir(dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok()?.file_name().into_string().ok())
                .filter(|id| app.store().exists(id))
                .collect(),
            Err(_) => Vec::new(),
        };
        sessions.sort();
        Ok(SessionList { sessions })
    })
    .await?;
    Ok(ok(list))
}

/// Exactly one case source.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub case: Option<PatientCase>,
    pub case_path: Option<String>,
    pub phantom: Option<PhantomSpec>,
}

#[derive(Serialize)]
pub struct PlanSetSummary {
    pub run_id: u32,
    pub provenance: Provenance,
    pub parent_run: Option<u32>,
    pub evaluations: usize,
    pub feasible_found: bool,
    pub plan_count: usize,
    pub default_plan: Option<PlanId>,
}

impl PlanSetSummary {
    fn of(set: &PlanSet) -> Self {
        PlanSetSummary {
            run_id: set.run_id,
            provenance: set.provenance,
            parent_run: set.parent_run,
            evaluations: set.evaluations,
            feasible_found: set.feasible_found,
            plan_count: set.plans.len(),
            default_plan: set.default_plan().ok(),
        }
    }
}

#[derive(Serialize)]
struct SessionView {
    id: String,
    case_id: String,
    dwell_count: usize,
    plan_sets: Vec<PlanSetSummary>,
    favorites: Vec<PlanId>,
    selected_plan: Option<PlanId>,
    job: Option<JobStatus>,
}

fn session_view(app: &AppState, state: &SessionState, dwell_count: usize) -> SessionView {
    SessionView {
        id: state.id.clone(),
        case_id: state.case_id.clone(),
        dwell_count,
        plan_sets: state.plan_sets.iter().map(PlanSetSummary::of).collect(),
        favorites: state.favorites.iter().copied().collect(),
        selected_plan: state.selected_plan,
        job: app.job(&state.id),
    }
}

async fn create_session(State(app): State<AppState>, body: std::result::Result<Json<CreateSession>, JsonRejection>) -> Result<Response> {
    let Json(req) = body?;
    let view = blocking(app, move |app| {
        let case = match (req.case, req.case_path, req.phantom) {
            (Some(c), None, None) => c.canonicalized()?,
            (None, Some(p), None) => load_case(p)?,
            (None, None, Some(spec)) => generate_phantom(&spec)?,
            _ => {
                return Err(ServiceError::validation(
                    "case",
                    "give exactly one of case, case_path or phantom",
                ))
            }
        };
        let session = app.store().create(case)?;
        let n = session.case.dwell_count();
        let sid = session.state.id.clone();
        app.inner.cases.lock().unwrap().insert(sid, Arc::new(session.case));
        Ok(session_view(&app, &session.state, n))
    })
    .await?;
    Ok((StatusCode::CREATED, ok(view)).into_response())
}

async fn get_session(State(app): State<AppState>, Path(sid): Path<String>) -> Result<Response> {
    let view = blocking(app, move |app| {
        let state = app.store().load_state(&sid)?;
        let n = app.case(&sid)?.dwell_count();
        Ok(session_view(&app, &state, n))
    })
    .await?;
    Ok(ok(view))
}

async fn get_job(State(app): State<AppState>, Path(sid): Path<String>) -> Result<Response> {
    let job = blocking(app, move |app| {
        app.store().load_state(&sid)?;
        app.job(&sid)
            .ok_or_else(|| ServiceError::not_found(format!("session {sid} has no job")))
    })
    .await?;
    Ok(ok(job))
}

/// Registers a running job or fails with a conflict.
fn claim_job(app: &AppState, sid: &str, kind: JobKind, run_id: u32, budget: usize) -> Result<Arc<Mutex<JobStatus>>> {
    let mut jobs = app.inner.jobs.lock().unwrap();
    if jobs.get(sid).is_some_and(|j| j.lock().unwrap().state == JobState::Running) {
        return Err(ServiceError::new(
            ErrorCode::Conflict,
            format!("session {sid} already has a running optimization"),
        ));
    }
    let status = Arc::new(Mutex::new(JobStatus {
        kind,
        state: JobState::Running,
        run_id,
        evaluations: 0,
        budget,
        progress: 0.0,
        error: None,
    }));
    jobs.insert(sid.to_string(), status.clone());
    Ok(status)
}

/// Runs `work` on the blocking pool, stores its plan set and updates `status`.
fn spawn_job<F>(app: AppState, sid: String, status: Arc<Mutex<JobStatus>>, work: F)
where
    F: FnOnce(&AppState, &RunControl) -> brachynav_core::Result<PlanSet> + Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        let run_id = status.lock().unwrap().run_id;
        let report = {
            let status = status.clone();
            move |p: &Progress| {
                let mut s = status.lock().unwrap();
                s.evaluations = p.evaluations;
                s.budget = p.budget;
                s.progress = if p.budget > 0 { p.evaluations as f64 / p.budget as f64 } else { 0.0 };
            }
        };
        let control = RunControl {
            run_id: Some(run_id),
            audit: false,
            progress: Some(&report),
        };
        let outcome = work(&app, &control)
            .map_err(ServiceError::from)
            .and_then(|set| app.update(&sid, |state| state.add_plan_set(set)));
        let mut s = status.lock().unwrap();
        match outcome {
            Ok(()) => {
                s.state = JobState::Completed;
                s.progress = 1.0;
            }
            Err(e) => {
                log::warn!("job for session {sid} failed: {e}");
                s.state = JobState::Failed;
                s.error = Some(e);
            }
        }
    });
}

fn check_settings(case: &PatientCase, settings: &OptimizationSettings) -> Result<()> {
    settings.validate()?;
    Constraints::new(case, settings)?;
    Ok(())
}

fn parse_body<T: serde::de::DeserializeOwned + Default>(bytes: &[u8]) -> Result<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    Ok(serde_json::from_slice(bytes)?)
}

async fn start_optimize(State(app): State<AppState>, Path(sid): Path<String>, body: axum::body::Bytes) -> Result<Response> {
    let job = blocking(app, move |app| {
        let settings: OptimizationSettings = parse_body(&body)?;
        let case = app.case(&sid)?;
        check_settings(&case, &settings)?;
        if settings.evaluation_budget < settings.population_size {
            return Err(ServiceError::validation(
                "evaluation_budget",
                "must be at least the population size",
            ));
        }
        let run_id = app.store().load_state(&sid)?.next_run_id();
        let status = claim_job(&app, &sid, JobKind::Optimize, run_id, settings.evaluation_budget)?;
        let snapshot = status.lock().unwrap().clone();
        spawn_job(app.clone(), sid, status, move |app, control| {
            Ok(optimize_with(app.engine(), &case, &settings, control)?.plan_set)
        });
        Ok(snapshot)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, ok(job)).into_response())
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReoptimizeRequest {
    /// Plan set to continue from; the latest when absent.
    pub from_run: Option<u32>,
    /// Replaces the previous run's settings when given.
    pub settings: Option<OptimizationSettings>,
    /// Added to the settings' overrides, replacing any for the same position.
    pub max_time_overrides: Vec<MaxTimeOverride>,
    pub budget: Option<usize>,
}

/// Settings for a warm start from `previous`.
pub fn reoptimize_settings(previous: &PlanSet, req: &ReoptimizeRequest) -> Result<OptimizationSettings> {
    for (i, o) in req.max_time_overrides.iter().enumerate() {
        if !(o.max_time_s >= 0.0) || !o.max_time_s.is_finite() {
            return Err(ServiceError::validation(
                format!("max_time_overrides[{i}].max_time_s"),
                "must be a nonnegative number of seconds",
            ));
        }
    }
    let mut settings = req.settings.clone().unwrap_or_else(|| previous.settings.clone());
    for o in &req.max_time_overrides {
        settings
            .max_time_overrides
            .retain(|e| !(e.catheter == o.catheter && e.position == o.position));
        settings.max_time_overrides.push(*o);
    }
    if let Some(b) = req.budget {
        settings.reoptimization_budget = Some(b);
    }
    Ok(settings)
}

async fn start_reoptimize(State(app): State<AppState>, Path(sid): Path<String>, body: axum::body::Bytes) -> Result<Response> {
    let job = blocking(app, move |app| {
        let req: ReoptimizeRequest = parse_body(&body)?;
        let case = app.case(&sid)?;
        let state = app.store().load_state(&sid)?;
        let previous = match req.from_run {
            Some(r) => state.require_plan_set(r)?.clone(),
            None => state
                .latest_plan_set()
                .ok_or_else(|| ServiceError::new(ErrorCode::Precondition, "no plan set to continue from"))?
                .clone(),
        };
        let settings = reoptimize_settings(&previous, &req)?;
        check_settings(&case, &settings)?;
        let run_id = state.next_run_id();
        let budget = settings.effective_reoptimization_budget().max(previous.plans.len());
        let status = claim_job(&app, &sid, JobKind::Reoptimize, run_id, budget)?;
        let snapshot = status.lock().unwrap().clone();
        spawn_job(app.clone(), sid, status, move |app, control| {
            Ok(reoptimize_with(app.engine(), &case, &previous, &settings, control)?.plan_set)
        });
        Ok(snapshot)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, ok(job)).into_response())
}

#[derive(Serialize)]
struct PlanSetList {
    plan_sets: Vec<PlanSetSummary>,
}

async fn list_plan_sets(State(app): State<AppState>, Path(sid): Path<String>) -> Result<Response> {
    let list = blocking(app, move |app| {
        let state = app.store().load_state(&sid)?;
        Ok(PlanSetList {
            plan_sets: state.plan_sets.iter().map(PlanSetSummary::of).collect(),
        })
    })
    .await?;
    Ok(ok(list))
}

#[derive(Deserialize)]
struct SortQuery {
    sort: Option<SortKey>,
}

/// One point of the trade-off scatter.
#[derive(Serialize)]
pub struct FrontPoint {
    pub id: PlanId,
    pub lci_w: f64,
    pub lsi_w: f64,
    pub lai_w: f64,
    pub lci: f64,
    pub lsi: f64,
    pub in_golden_corner: bool,
    pub feasible: bool,
    pub favorite: bool,
    pub selected: bool,
}

#[derive(Serialize)]
struct PlanSetView {
    #[serde(flatten)]
    summary: PlanSetSummary,
    sort: SortKey,
    order: Vec<PlanId>,
    points: Vec<FrontPoint>,
}

async fn get_plan_set(
    State(app): State<AppState>,
    Path((sid, run)): Path<(String, u32)>,
    query: std::result::Result<Query<SortQuery>, QueryRejection>,
) -> Result<Response> {
    let Query(q) = query?;
    let view = blocking(app, move |app| {
        let state = app.store().load_state(&sid)?;
        let set = state.require_plan_set(run)?;
        let case = app.case(&sid)?;
        let sort = q.sort.unwrap_or(SortKey::SparingToCoverage);
        let points = set
            .plans
            .iter()
            .map(|p| FrontPoint {
                id: p.id,
                lci_w: p.objective.lci_w,
                lsi_w: p.objective.lsi_w,
                lai_w: p.objective.lai_w,
                lci: p.objective.lci,
                lsi: p.objective.lsi,
                in_golden_corner: p.objective.in_golden_corner,
                feasible: p.feasible,
                favorite: state.favorites.contains(&p.id),
                selected: state.selected_plan == Some(p.id),
            })
            .collect();
        Ok(PlanSetView {
            summary: PlanSetSummary::of(set),
            sort,
            order: sort_plans(&case, &set.plans, sort),
            points,
        })
    })
    .await?;
    Ok(ok(view))
}

#[derive(Serialize)]
pub struct DwellRow {
    pub catheter_id: u32,
    pub kind: CatheterKind,
    pub position_index: usize,
    pub position_mm: Vec3,
    pub time_s: f64,
    pub active: bool,
    /// Effective maximum under the plan set's settings; 0 means disabled.
    pub max_time_s: f64,
}

#[derive(Serialize)]
struct PlanView<'a> {
    plan: &'a Plan,
    favorite: bool,
    selected: bool,
    dwell_table: Vec<DwellRow>,
    contributions: ContributionReport,
}

async fn get_plan(State(app): State<AppState>, Path((sid, pid)): Path<(String, String)>) -> Result<Response> {
    let body = blocking(app, move |app| {
        let id = parse_plan_id(&pid)?;
        let state = app.store().load_state(&sid)?;
        let case = app.case(&sid)?;
        let plan = state.require_plan(id)?;
        let settings = &state.require_plan_set(id.run)?.settings;
        let max = Constraints::new(&case, settings)
            .map(|c| c.max_time_s)
            .unwrap_or_else(|_| case.dwell_mask.effective_max_flat());
        let active = case.dwell_mask.active_flat();
        let mut dwell_table = Vec::with_capacity(case.dwell_count());
        let mut j = 0;
        for c in &case.catheters {
            for (i, &p) in c.dwell_positions.iter().enumerate() {
                dwell_table.push(DwellRow {
                    catheter_id: c.id,
                    kind: c.kind,
                    position_index: i,
                    position_mm: p,
                    time_s: plan.dwell_times[j],
                    active: active[j],
                    max_time_s: max[j],
                });
                j += 1;
            }
        }
        let view = PlanView {
            plan,
            favorite: state.favorites.contains(&id),
            selected: state.selected_plan == Some(id),
            dwell_table,
            contributions: contribution_report(&case, &plan.dwell_times)?,
        };
        Ok(serde_json::to_value(&view)?)
    })
    .await?;
    Ok(ok(body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SliceQuery {
    axis: SliceAxis,
    position_mm: f64,
    spacing_mm: Option<f64>,
}

impl SliceQuery {
    fn spec(&self) -> SliceSpec {
        SliceSpec {
            axis: self.axis,
            position_mm: self.position_mm,
            spacing_mm: self.spacing_mm.unwrap_or(1.0),
        }
    }
}

#[derive(Serialize)]
struct SliceView {
    plan_id: PlanId,
    grid: DoseGrid,
    /// Isodose levels as fractions of the prescription dose.
    isodose_fractions: Vec<f64>,
}

async fn get_slice(
    State(app): State<AppState>,
    Path((sid, pid)): Path<(String, String)>,
    query: std::result::Result<Query<SliceQuery>, QueryRejection>,
) -> Result<Response> {
    let Query(q) = query?;
    let view = blocking(app, move |app| {
        let id = parse_plan_id(&pid)?;
        let state = app.store().load_state(&sid)?;
        let case = app.case(&sid)?;
        let plan = state.require_plan(id)?;
        let grid = app.engine().render_slice(&case, &plan.dwell_times, &q.spec())?;
        Ok(SliceView {
            plan_id: id,
            isodose_fractions: grid.isodose_levels_percent.iter().map(|p| p / 100.0).collect(),
            grid,
        })
    })
    .await?;
    Ok(ok(view))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffQuery {
    left: String,
    right: String,
    axis: Option<SliceAxis>,
    position_mm: Option<f64>,
    spacing_mm: Option<f64>,
}

async fn get_diff(
    State(app): State<AppState>,
    Path(sid): Path<String>,
    query: std::result::Result<Query<DiffQuery>, QueryRejection>,
) -> Result<Response> {
    let Query(q) = query?;
    let diff: PlanDiff = blocking(app, move |app| {
        let left = parse_plan_id(&q.left)?;
        let right = parse_plan_id(&q.right)?;
        let slice = match (q.axis, q.position_mm) {
            (Some(axis), Some(position_mm)) => Some(SliceSpec {
                axis,
                position_mm,
                spacing_mm: q.spacing_mm.unwrap_or(1.0),
            }),
            (None, None) => None,
            _ => return Err(ServiceError::validation("axis", "axis and position_mm go together")),
        };
        let session = app.session(&sid)?;
        compute_diff(app.engine(), &session, left, right, slice.as_ref())
    })
    .await?;
    Ok(ok(diff))
}

#[derive(Serialize)]
struct FavoriteView {
    plan_id: PlanId,
    favorite: bool,
}

async fn toggle_favorite(State(app): State<AppState>, Path((sid, pid)): Path<(String, String)>) -> Result<Response> {
    let view = blocking(app, move |app| {
        let id = parse_plan_id(&pid)?;
        let favorite = app.update(&sid, |s| s.toggle_favorite(id))?;
        Ok(FavoriteView { plan_id: id, favorite })
    })
    .await?;
    Ok(ok(view))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionRequest {
    plan_id: PlanId,
}

#[derive(Serialize)]
struct SelectionView {
    selected_plan: PlanId,
}

async fn set_selection(
    State(app): State<AppState>,
    Path(sid): Path<String>,
    body: std::result::Result<Json<SelectionRequest>, JsonRejection>,
) -> Result<Response> {
    let Json(req) = body?;
    let view = blocking(app, move |app| {
        app.update(&sid, |s| s.select(req.plan_id))?;
        Ok(SelectionView {
            selected_plan: req.plan_id,
        })
    })
    .await?;
    Ok(ok(view))
}

#[derive(Serialize)]
struct ExportView {
    path: String,
    export: ExportedPlan,
}

async fn export(State(app): State<AppState>, Path((sid, pid)): Path<(String, String)>) -> Result<Response> {
    let view = blocking(app, move |app| {
        let id = parse_plan_id(&pid)?;
        let state = app.store().load_state(&sid)?;
        let case = app.case(&sid)?;
        let plan = state.require_plan(id)?;
        let exported = export_plan(app.engine(), &case, plan)?;
        let dir = app.store().exports_dir(&sid)?;
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{id}.json"));
        write_export(&exported, &path)?;
        Ok(ExportView {
            path: path.display().to_string(),
            export: exported,
        })
    })
    .await?;
    Ok(ok(view))
}

#[derive(Serialize)]
struct ImportView {
    plan_set: PlanSetSummary,
    plan: Plan,
}

/// Adds an exported plan as a one-plan set with `manual_import` provenance.
async fn import(
    State(app): State<AppState>,
    Path(sid): Path<String>,
    body: std::result::Result<Json<ExportedPlan>, JsonRejection>,
) -> Result<Response> {
    let Json(exported) = body?;
    let view = blocking(app, move |app| {
        if app.is_running(&sid) {
            return Err(ServiceError::new(
                ErrorCode::Conflict,
                format!("session {sid} has a running optimization"),
            ));
        }
        let case = app.case(&sid)?;
        app.update(&sid, |state| {
            let settings = state
                .latest_plan_set()
                .map(|s| s.settings.clone())
                .unwrap_or_default();
            let run_id = state.next_run_id();
            let plan = import_plan(app.engine(), &case, &exported, &settings, PlanId { run: run_id, index: 0 })?;
            let set = PlanSet {
                schema_version: SCHEMA_VERSION,
                run_id,
                provenance: Provenance::ManualImport,
                parent_run: None,
                settings,
                evaluations: 1,
                feasible_found: plan.feasible,
                plans: vec![plan.clone()],
            };
            let summary = PlanSetSummary::of(&set);
            state.add_plan_set(set)?;
            Ok(ImportView { plan_set: summary, plan })
        })
    })
    .await?;
    Ok((StatusCode::CREATED, ok(view)).into_response())
}
