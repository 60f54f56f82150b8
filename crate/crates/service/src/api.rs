use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, RawQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;
use tokio::task::AbortHandle;

use deepquali_core::canonical;
use deepquali_core::config::CliConfig;
use deepquali_core::engine::{assess_story, AssessOptions, ExecutionParams, LlmBackend};
use deepquali_core::harness::{
    acceptance_output, agreement_output, feedback_output, tool_vs_expert_outputs, AcceptanceRecord,
    ExpertProfile, FeedbackRecord, Granularity, HarnessError, LabelRecord, StudyDir, StudyRecord,
};
use deepquali_core::quality_model::FragmentStyle;
use deepquali_core::story::{parse_story, StoryError};

use crate::jobs::{Jobs, SubmitError};

/// Error body: `{code, message, details}`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_owned(),
            message: message.into(),
            details: Value::Null,
        }
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }
}

impl From<HarnessError> for ApiError {
    fn from(e: HarnessError) -> Self {
        if let HarnessError::Story(s) = e {
            return s.into();
        }
        let status = match e.code() {
            "not_found" => StatusCode::NOT_FOUND,
            "locked" => StatusCode::CONFLICT,
            "range" | "validation" | "referential" | "coverage" | "expert_count" | "metrics" => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let details = match &e {
            HarnessError::Coverage(missing) => json!({ "missing": missing }),
            HarnessError::ExpertCount { company, found } => {
                json!({ "company_id": company, "experts": found })
            }
            _ => Value::Null,
        };
        ApiError::new(status, e.code(), e.to_string()).with_details(details)
    }
}

impl From<StoryError> for ApiError {
    fn from(e: StoryError) -> Self {
        match &e {
            StoryError::Format { line, column, .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "format", e.to_string())
                    .with_details(json!({ "line": line, "column": column }))
            }
            StoryError::MissingFields(fields) => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "validation",
                e.to_string(),
            )
            .with_details(json!({ "fields": fields })),
            _ => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "validation",
                e.to_string(),
            ),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        canonical_response(self.status, &self)
    }
}

fn canonical_response<T: Serialize + ?Sized>(status: StatusCode, value: &T) -> Response {
    raw_json(
        status,
        canonical::to_canonical_string(value).expect("payloads serialize"),
    )
}

fn raw_json(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn parse_body<T: DeserializeOwned>(body: &str) -> Result<T, ApiError> {
    serde_json::from_str(body).map_err(|e| {
        ApiError::new(StatusCode::BAD_REQUEST, "format", e.to_string())
            .with_details(json!({ "line": e.line(), "column": e.column() }))
    })
}

type ApiResult = Result<Response, ApiError>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSelection {
    /// Run the DoR stage. Defaults to whether the study has a DoR model.
    pub dor: Option<bool>,
    pub fragment_style: Option<FragmentStyle>,
    pub grounding_lint: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsOverrides {
    pub model_name: Option<String>,
    pub temperature: Option<f64>,
    pub seed: Option<i64>,
    pub max_tokens: Option<u32>,
    pub stop: Option<Vec<String>>,
    pub presence_penalty: Option<f64>,
    pub frequency_penalty: Option<f64>,
}

impl ParamsOverrides {
    fn apply(self, mut p: ExecutionParams) -> ExecutionParams {
        if let Some(v) = self.model_name {
            p.model_name = v;
        }
        if let Some(v) = self.temperature {
            p.temperature = v;
        }
        if self.seed.is_some() {
            p.seed = self.seed;
        }
        if let Some(v) = self.max_tokens {
            p.max_tokens = v;
        }
        if self.stop.is_some() {
            p.stop = self.stop;
        }
        if let Some(v) = self.presence_penalty {
            p.presence_penalty = v;
        }
        if let Some(v) = self.frequency_penalty {
            p.frequency_penalty = v;
        }
        p
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentRequest {
    pub story_id: String,
    #[serde(default)]
    pub models: ModelSelection,
    #[serde(default)]
    pub overrides: ParamsOverrides,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(t) => vec![t],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Clone)]
pub(crate) struct AppState(Arc<Inner>);

pub(crate) struct Inner {
    root: PathBuf,
    writer: Mutex<Option<StudyDir>>,
    config: CliConfig,
    backend: Arc<dyn LlmBackend>,
    jobs: Jobs,
    handles: std::sync::Mutex<BTreeMap<String, AbortHandle>>,
}

impl AppState {
    pub(crate) fn new(
        root: PathBuf,
        study: StudyDir,
        config: CliConfig,
        backend: Arc<dyn LlmBackend>,
        jobs: Jobs,
    ) -> Self {
        AppState(Arc::new(Inner {
            root,
            writer: Mutex::new(Some(study)),
            config,
            backend,
            jobs,
            handles: Default::default(),
        }))
    }

    pub(crate) fn abort_jobs(&self) {
        for (_, h) in std::mem::take(&mut *self.0.handles.lock().unwrap()) {
            h.abort();
        }
        self.0.jobs.fail_active();
    }

    /// Drops the writer, releasing the study lock.
    pub(crate) fn release(&self) {
        // Jobs were aborted first, so nobody holds the writer for long.
        loop {
            if let Ok(mut guard) = self.0.writer.try_lock() {
                guard.take();
                return;
            }
            std::thread::yield_now();
        }
    }

    fn reader(&self) -> Result<StudyDir, ApiError> {
        Ok(StudyDir::open(&self.0.root)?)
    }

    async fn write<T>(
        &self,
        f: impl FnOnce(&mut StudyDir) -> Result<T, HarnessError>,
    ) -> Result<T, ApiError> {
        let mut guard = self.0.writer.lock().await;
        let study = guard.as_mut().ok_or_else(|| {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "shutdown",
                "service is shutting down",
            )
        })?;
        Ok(f(study)?)
    }
}

pub(crate) fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/stories", get(list_stories).post(create_story))
        .route("/stories/{id}", get(get_story))
        .route("/stories/{id}/versions", get(list_versions))
        .route("/stories/{id}/versions/{version}", get(get_version))
        .route("/stories/{id}/revisions", post(revise_story))
        .route("/assessments", post(submit_assessment))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/reports", get(list_reports))
        .route("/reports/{id}", get(get_report))
        .route("/experts", get(list_experts).post(post_experts))
        .route("/labels", post(post_labels))
        .route("/feedback", post(post_feedback))
        .route("/acceptance", post(post_acceptance))
        .route("/models", get(get_models))
        .route("/evaluation/{table}", get(evaluation));
    Router::new()
        .nest("/api", api)
        .fallback(|| async {
            ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
        })
        .with_state(state)
}

async fn list_stories(State(s): State<AppState>) -> ApiResult {
    Ok(canonical_response(StatusCode::OK, &s.reader()?.stories()?))
}

async fn create_story(State(s): State<AppState>, body: String) -> ApiResult {
    let story = parse_story(&body)?;
    let version = s
        .write(|study| {
            if study.has_story(&story.id) {
                return Ok(None);
            }
            study.add_story_version(&story, false).map(Some)
        })
        .await?;
    match version {
        Some(v) => Ok(canonical_response(StatusCode::CREATED, &v)),
        None => Err(ApiError::new(
            StatusCode::CONFLICT,
            "conflict",
            format!("story '{}' exists; submit a revision instead", story.id),
        )),
    }
}

async fn get_story(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(canonical_response(StatusCode::OK, &s.reader()?.story(&id)?))
}

async fn list_versions(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(canonical_response(
        StatusCode::OK,
        &s.reader()?.story_versions(&id)?,
    ))
}

async fn get_version(
    State(s): State<AppState>,
    Path((id, version)): Path<(String, String)>,
) -> ApiResult {
    let n: u32 = version.trim_start_matches('v').parse().map_err(|_| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "format",
            format!("bad version '{version}'"),
        )
    })?;
    Ok(canonical_response(
        StatusCode::OK,
        &s.reader()?.story_version(&id, n)?,
    ))
}

async fn revise_story(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: String,
) -> ApiResult {
    let story = parse_story(&body)?;
    if story.id != id {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "validation",
            format!("document id '{}' does not match '{id}'", story.id),
        )
        .with_details(json!({ "fields": ["id"] })));
    }
    let version = s
        .write(|study| {
            if !study.has_story(&id) {
                return Err(HarnessError::NotFound {
                    kind: "story",
                    id: id.clone(),
                });
            }
            study.add_story_version(&story, true)
        })
        .await?;
    Ok(canonical_response(StatusCode::CREATED, &version))
}

async fn submit_assessment(State(s): State<AppState>, body: String) -> ApiResult {
    let req: AssessmentRequest = parse_body(&body)?;
    let reader = s.reader()?;
    let story = reader.story(&req.story_id)?;
    let version = reader.latest_version(&story.id)?;
    let models = s.0.config.model_set(&reader)?;
    let use_dor = req.models.dor.unwrap_or(models.dor.is_some());
    if use_dor && models.dor.is_none() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "validation",
            "the study has no DoR model",
        ));
    }
    let params = req.overrides.apply(s.0.config.params.clone());
    params.validate().map_err(|e| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "validation",
            e.to_string(),
        )
    })?;
    let options = AssessOptions {
        story_version: version,
        invest_fragment: req
            .models
            .fragment_style
            .unwrap_or(s.0.config.fragment_style),
        grounding_lint: req
            .models
            .grounding_lint
            .unwrap_or(s.0.config.grounding_lint),
    };

    let job = match s.0.jobs.submit(&story.id, version) {
        Ok(job) => job,
        Err(SubmitError::Active(active)) => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "conflict",
                format!("story '{}' already has an active job", story.id),
            )
            .with_details(json!({ "job_id": active })))
        }
        Err(SubmitError::Store(e)) => return Err(e.into()),
    };

    let state = s.clone();
    let job_id = job.job_id.clone();
    let task = tokio::spawn(async move {
        state.0.jobs.running(&job_id);
        let dor = if use_dor { models.dor.as_ref() } else { None };
        let result = assess_story(
            &story,
            &models.invest,
            dor,
            &params,
            state.0.backend.as_ref(),
            &options,
        )
        .await;
        match result {
            Ok(report) => match state.write(|study| study.save_report(&report)).await {
                Ok(report_id) => state.0.jobs.done(&job_id, report_id),
                Err(e) => state.0.jobs.failed(&job_id, e.message),
            },
            Err(e) => state.0.jobs.failed(&job_id, e.to_string()),
        }
        state.0.handles.lock().unwrap().remove(&job_id);
    });
    s.0.handles
        .lock()
        .unwrap()
        .insert(job.job_id.clone(), task.abort_handle());
    Ok(canonical_response(StatusCode::ACCEPTED, &job))
}

async fn list_jobs(State(s): State<AppState>) -> ApiResult {
    Ok(canonical_response(StatusCode::OK, &s.0.jobs.all()))
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    match s.0.jobs.get(&id) {
        Some(job) => Ok(canonical_response(StatusCode::OK, &job)),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("job '{id}' not found"),
        )),
    }
}

async fn list_reports(State(s): State<AppState>) -> ApiResult {
    let summaries: Vec<Value> = s
        .reader()?
        .reports()?
        .into_iter()
        .map(|r| {
            json!({
                "report_id": r.report_id,
                "story_id": r.story_id,
                "story_version": r.story_version,
                "backend": r.backend,
                "created_at": r.created_at,
                "ready": r.rti.ready,
            })
        })
        .collect();
    Ok(canonical_response(StatusCode::OK, &summaries))
}

async fn get_report(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let report = s.reader()?.report(&id)?;
    Ok(raw_json(StatusCode::OK, report.to_canonical()))
}

async fn list_experts(State(s): State<AppState>) -> ApiResult {
    Ok(canonical_response(StatusCode::OK, &s.reader()?.experts()?))
}

async fn post_experts(State(s): State<AppState>, body: String) -> ApiResult {
    let experts = parse_body::<OneOrMany<ExpertProfile>>(&body)?.into_vec();
    let replaced = s
        .write(|study| {
            experts
                .into_iter()
                .map(|e| study.put_expert(e))
                .collect::<Result<Vec<bool>, _>>()
        })
        .await?;
    Ok(canonical_response(
        StatusCode::OK,
        &json!({ "replaced": replaced }),
    ))
}

async fn record<T: DeserializeOwned + Into<StudyRecord>>(s: &AppState, body: &str) -> ApiResult {
    let records: Vec<StudyRecord> = parse_body::<OneOrMany<T>>(body)?
        .into_vec()
        .into_iter()
        .map(Into::into)
        .collect();
    let outcomes = s.write(|study| study.record_all(records)).await?;
    Ok(canonical_response(StatusCode::OK, &outcomes))
}

async fn post_labels(State(s): State<AppState>, body: String) -> ApiResult {
    record::<LabelRecord>(&s, &body).await
}

async fn post_feedback(State(s): State<AppState>, body: String) -> ApiResult {
    record::<FeedbackRecord>(&s, &body).await
}

async fn post_acceptance(State(s): State<AppState>, body: String) -> ApiResult {
    record::<AcceptanceRecord>(&s, &body).await
}

async fn get_models(State(s): State<AppState>) -> ApiResult {
    let models = s.0.config.model_set(&s.reader()?)?;
    Ok(canonical_response(
        StatusCode::OK,
        &json!({ "invest": models.invest, "rti": models.rti, "dor": models.dor }),
    ))
}

fn query_param(query: &Option<String>, key: &str) -> Option<String> {
    query.as_deref()?.split('&').find_map(|pair| {
        let (k, v) = pair.split_once('=')?;
        (k == key).then(|| v.to_owned())
    })
}

async fn evaluation(
    State(s): State<AppState>,
    Path(table): Path<String>,
    RawQuery(query): RawQuery,
) -> ApiResult {
    let reader = s.reader()?;
    let models = s.0.config.model_set(&reader)?;
    let output = match table.as_str() {
        "agreement" => {
            let granularity = match query_param(&query, "granularity").as_deref() {
                None | Some("statements") => Granularity::Statements,
                Some("criterion_medians") => Granularity::CriterionMedians,
                Some(other) => {
                    return Err(ApiError::new(
                        StatusCode::BAD_REQUEST,
                        "format",
                        format!("unknown granularity '{other}'"),
                    ))
                }
            };
            agreement_output(&reader, &models, granularity)?
        }
        "deviation" | "classification" => tool_vs_expert_outputs(&reader, &models)?
            .into_iter()
            .find(|o| o.name == table)
            .expect("both tables are always produced"),
        "feedback" => feedback_output(&reader)?,
        "acceptance" => acceptance_output(&reader)?,
        other => {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "not_found",
                format!("no evaluation table '{other}'"),
            ))
        }
    };
    Ok(raw_json(StatusCode::OK, output.json))
}
