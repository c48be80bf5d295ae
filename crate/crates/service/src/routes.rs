use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use subplex_core::analysis::DiagnosticsConfig;
use subplex_core::data::{load_attributions, IngestConfig, InputFormat};
use subplex_core::pipeline::PipelineConfig;
use tower_http::services::ServeDir;
use uuid::Uuid;

use crate::error::{ApiError, ApiResult};
use crate::session::{Session, SessionSnapshot};
use crate::{AppState, Job, JobState};

pub(crate) fn build(state: AppState) -> Router {
    let limit = state.0.config.body_limit;
    let ui = state.0.config.ui_dir.clone();
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/restore", post(restore_session))
        .route("/sessions/{id}", get(summary).delete(drop_session))
        .route("/sessions/{id}/attributions", post(upload))
        .route("/sessions/{id}/pipeline", post(run_pipeline).get(pipeline_status))
        .route("/sessions/{id}/jobs/{job}", get(job_status))
        .route("/sessions/{id}/layout", get(layout))
        .route("/sessions/{id}/partition", get(partition))
        .route("/sessions/{id}/ranking", get(ranking))
        .route("/sessions/{id}/histograms", get(histograms))
        .route("/sessions/{id}/diagnostics", get(diagnostics))
        .route("/sessions/{id}/selection", get(get_selection).put(put_selection))
        .route("/sessions/{id}/selection/instances", get(selected_instances))
        .route("/sessions/{id}/selection/groups", get(selected_groups))
        .route("/sessions/{id}/selection/split", get(selection_split))
        .route("/sessions/{id}/subpopulations", post(add_subpopulation))
        .route("/sessions/{id}/subpopulations/{gid}", delete(remove_subpopulation))
        .route("/sessions/{id}/snapshot", get(get_snapshot).post(save_snapshot))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn parse_json<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(ApiError::from_json)
}

async fn blocking<T: Send + 'static>(job: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(job)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Serialize)]
struct Created {
    session_id: String,
}

async fn create_session(State(state): State<AppState>) -> impl IntoResponse {
    let id = state.insert(Session::new(Uuid::new_v4().to_string()));
    (StatusCode::CREATED, Json(Created { session_id: id }))
}

async fn restore_session(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let snap: SessionSnapshot = serde_json::from_slice(&body).map_err(ApiError::from_json)?;
    let id = Uuid::new_v4().to_string();
    let session = blocking(move || Session::restore(id, snap)).await?;
    let id = state.insert(session);
    Ok((StatusCode::CREATED, Json(Created { session_id: id })).into_response())
}

async fn summary(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let s = cell.read().await;
    Ok(Json(s.summary()).into_response())
}

async fn drop_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state
        .0
        .sessions
        .write()
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(ApiError::no_session)
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct UploadQuery {
    id_column: Option<String>,
    label_column: Option<String>,
    /// `,`, `tab`, `\t` or any single byte.
    delimiter: Option<String>,
    format: Option<InputFormat>,
}

#[derive(Serialize)]
struct Uploaded {
    n_instances: usize,
    n_features: usize,
    feature_names: Vec<String>,
}

async fn upload(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<UploadQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("");
    let format = q.format.unwrap_or(if content_type.starts_with("application/json") {
        InputFormat::Json
    } else if content_type.starts_with("text/csv") || content_type.starts_with("text/tab-separated-values") {
        InputFormat::Delimited
    } else {
        InputFormat::Auto
    });
    let delimiter = match q.delimiter.as_deref() {
        None => None,
        Some("tab") | Some("\\t") | Some("\t") => Some(b'\t'),
        Some(d) if d.len() == 1 => Some(d.as_bytes()[0]),
        Some(d) => return Err(ApiError::unprocessable(format!("unsupported delimiter {d:?}"))),
    };
    let cfg = IngestConfig {
        format,
        id_column: q.id_column,
        label_column: q.label_column,
        delimiter,
    };
    let matrix = blocking(move || Ok(load_attributions(&body[..], &cfg)?)).await?;
    let reply = Uploaded {
        n_instances: matrix.n_instances(),
        n_features: matrix.n_features(),
        feature_names: matrix.feature_names().to_vec(),
    };
    cell.write().await.upload(matrix);
    Ok(Json(reply).into_response())
}

#[derive(Serialize)]
struct Accepted {
    job_id: String,
    status: &'static str,
    poll: String,
}

fn job_response(state: &JobState) -> Response {
    match state {
        JobState::Running => (StatusCode::ACCEPTED, Json(state)).into_response(),
        JobState::Done { result } => Json(result).into_response(),
        JobState::Failed { error, .. } => error.clone().into_response(),
    }
}

async fn run_pipeline(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let config: PipelineConfig = parse_json(&body)?;
    let job = cell.read().await.pipeline_job(config)?;

    let job_id = Uuid::new_v4().to_string();
    state.0.jobs.lock().insert(
        job_id.clone(),
        Job {
            session: id.clone(),
            state: JobState::Running,
        },
    );
    let task_state = state.clone();
    let task_job_id = job_id.clone();
    let mut task = tokio::spawn(async move {
        let computed = {
            let job = job.clone();
            blocking(move || job.compute()).await
        };
        let outcome = match computed {
            Ok(analysis) => cell.write().await.install(&job, analysis),
            Err(e) => Err(e),
        };
        let finished = match outcome {
            Ok(result) => JobState::Done { result },
            Err(error) => {
                tracing::warn!("pipeline failed: {}", error.error);
                JobState::Failed {
                    code: error.status,
                    error,
                }
            }
        };
        if let Some(entry) = task_state.0.jobs.lock().get_mut(&task_job_id) {
            entry.state = finished.clone();
        }
        finished
    });

    match tokio::time::timeout(state.0.config.job_threshold, &mut task).await {
        Ok(Ok(finished)) => Ok(job_response(&finished)),
        Ok(Err(e)) => Err(ApiError::internal(format!("pipeline task failed: {e}"))),
        Err(_) => {
            let poll = format!("/sessions/{id}/jobs/{job_id}");
            Ok((
                StatusCode::ACCEPTED,
                [(header::LOCATION, poll.clone())],
                Json(Accepted {
                    job_id,
                    status: "running",
                    poll,
                }),
            )
                .into_response())
        }
    }
}

async fn pipeline_status(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let s = cell.read().await;
    Ok(Json(s.status()?).into_response())
}

async fn job_status(State(state): State<AppState>, Path((id, job)): Path<(String, String)>) -> ApiResult<Response> {
    state.session(&id)?;
    let jobs = state.0.jobs.lock();
    let entry = jobs
        .get(&job)
        .filter(|j| j.session == id)
        .ok_or_else(|| ApiError::not_found("unknown job"))?;
    let code = match entry.state {
        JobState::Running => StatusCode::ACCEPTED,
        _ => StatusCode::OK,
    };
    Ok((code, Json(&entry.state)).into_response())
}

async fn layout(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let s = cell.read().await;
    Ok(Json(s.layout()?).into_response())
}

async fn partition(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let s = cell.read().await;
    Ok(Json(s.partition()?).into_response())
}

#[derive(Deserialize, Default, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum BasisQuery {
    Mean,
    #[default]
    Deviation,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct RankingQuery {
    basis: BasisQuery,
    group: Option<usize>,
    bins: Option<usize>,
}

async fn ranking(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RankingQuery>,
) -> ApiResult<Response> {
    let cell = state.session(&id)?.read_owned().await;
    let ranking = match q.basis {
        BasisQuery::Mean => {
            let group = q
                .group
                .ok_or_else(|| ApiError::unprocessable("basis=mean needs a group"))?;
            cell.mean_ranking(group)?
        }
        BasisQuery::Deviation => blocking(move || cell.deviation_ranking(q.bins)).await?,
    };
    Ok(Json(ranking).into_response())
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct BinsQuery {
    bins: Option<usize>,
}

async fn histograms(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<BinsQuery>,
) -> ApiResult<Response> {
    let cell = state.session(&id)?.read_owned().await;
    let payload = blocking(move || cell.histograms(q.bins)).await?;
    Ok(Json(payload).into_response())
}

async fn diagnostics(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<DiagnosticsConfig>,
) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let s = cell.read().await;
    Ok(Json(s.diagnostics(&q)?).into_response())
}

#[derive(Deserialize, Serialize, Default)]
struct Indices {
    indices: Vec<usize>,
}

async fn get_selection(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let s = cell.read().await;
    Ok(Json(Indices {
        indices: s.selection().indices().to_vec(),
    })
    .into_response())
}

async fn put_selection(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let req: Indices = serde_json::from_slice(&body).map_err(ApiError::from_json)?;
    let mut s = cell.write().await;
    let sel = s.set_selection(req.indices)?;
    Ok(Json(Indices {
        indices: sel.indices().to_vec(),
    })
    .into_response())
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct FormatQuery {
    format: Option<String>,
}

async fn selected_instances(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FormatQuery>,
) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let s = cell.read().await;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(s.selected_instances()?).into_response()),
        Some("csv") => Ok(([(header::CONTENT_TYPE, "text/csv")], s.selected_instances_csv()?).into_response()),
        Some(other) => Err(ApiError::unprocessable(format!("unknown format {other:?}"))),
    }
}

async fn selected_groups(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let s = cell.read().await;
    Ok(Json(s.selected_groups()?).into_response())
}

async fn selection_split(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let s = cell.read().await;
    Ok(Json(s.selection_split()?).into_response())
}

async fn add_subpopulation(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let mut guard = state.session(&id)?.write_owned().await;
    let payload = blocking(move || guard.add_subpopulation()).await?;
    Ok((StatusCode::CREATED, Json(payload)).into_response())
}

async fn remove_subpopulation(
    State(state): State<AppState>,
    Path((id, gid)): Path<(String, usize)>,
) -> ApiResult<Response> {
    let mut guard = state.session(&id)?.write_owned().await;
    let payload = blocking(move || guard.remove_subpopulation(gid)).await?;
    Ok(Json(payload).into_response())
}

async fn get_snapshot(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let cell = state.session(&id)?;
    let s = cell.read().await;
    Ok(Json(s.snapshot()).into_response())
}

#[derive(Serialize)]
struct Saved {
    path: String,
}

async fn save_snapshot(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let dir = state
        .0
        .config
        .snapshot_dir
        .clone()
        .ok_or_else(|| ApiError::conflict("snapshots are disabled on this server"))?;
    let snap = state.session(&id)?.read().await.snapshot();
    let path = dir.join(format!("{id}.json"));
    let target = path.clone();
    blocking(move || {
        std::fs::create_dir_all(&dir).map_err(|e| ApiError::internal(e.to_string()))?;
        let text = serde_json::to_vec(&snap).map_err(|e| ApiError::internal(e.to_string()))?;
        let tmp = target.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| ApiError::internal(e.to_string()))?;
        std::fs::rename(&tmp, &target).map_err(|e| ApiError::internal(e.to_string()))
    })
    .await?;
    Ok(Json(Saved {
        path: path.display().to_string(),
    })
    .into_response())
}
