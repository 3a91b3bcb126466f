//! JSON HTTP API over a catalog, plus optional static hosting of the review UI.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tower_http::services::{ServeDir, ServeFile};

use crate::catalog::{Axis, Catalog, PatientSnapshot, PhantomFilter, QcSummary, ReviewRequest};
use crate::error::Error;
use crate::qc::FinalStatus;

pub type SharedCatalog = Arc<RwLock<Catalog>>;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::InvalidArgument(_) | Error::Config(_) | Error::Json(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = serde_json::json!({"error": self.0.code(), "message": self.0.to_string()});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn read(cat: &SharedCatalog) -> std::sync::RwLockReadGuard<'_, Catalog> {
    cat.read().unwrap_or_else(|p| p.into_inner())
}

#[derive(Serialize)]
struct PhantomSummary {
    phantom_id: String,
    patient: PatientSnapshot,
    status: FinalStatus,
    review_rating: Option<u8>,
    structure_count: usize,
    meshed_structures: usize,
}

#[derive(Serialize)]
struct PhantomList {
    count: usize,
    phantoms: Vec<PhantomSummary>,
}

fn parse_filter(q: &HashMap<String, String>, cat: &Catalog) -> Result<PhantomFilter, Error> {
    let num = |key: &str| -> Result<Option<f64>, Error> {
        match q.get(key).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            None => Ok(None),
            Some(s) => s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| Error::InvalidArgument(format!("{key} must be a number, got {s:?}"))),
        }
    };
    let nonempty = |key: &str| q.get(key).map(|s| s.trim()).filter(|s| !s.is_empty());
    if let Some(k) = q.keys().find(|k| {
        !matches!(
            k.as_str(),
            "sex" | "age_min" | "age_max" | "race" | "bmi_min" | "bmi_max" | "structure" | "include_all"
        )
    }) {
        return Err(Error::InvalidArgument(format!("unknown query parameter {k:?}")));
    }
    let structure = match nonempty("structure") {
        None => None,
        Some(s) => Some(match s.parse::<u16>() {
            Ok(id) => id,
            Err(_) => cat
                .taxonomy()
                .by_name(s)
                .map(|d| d.id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown structure {s:?}")))?,
        }),
    };
    Ok(PhantomFilter {
        sex: nonempty("sex").map(str::parse).transpose()?,
        age_min: num("age_min")?,
        age_max: num("age_max")?,
        race: nonempty("race").map(str::to_string),
        bmi_min: num("bmi_min")?,
        bmi_max: num("bmi_max")?,
        structure,
        include_all: matches!(nonempty("include_all"), Some("1" | "true")),
    })
}

async fn list_phantoms(
    State(cat): State<SharedCatalog>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<PhantomList>> {
    let cat = read(&cat);
    let filter = parse_filter(&q, &cat)?;
    let phantoms: Vec<PhantomSummary> = cat
        .query_phantoms(&filter)?
        .into_iter()
        .map(|m| PhantomSummary {
            phantom_id: m.phantom_id.clone(),
            patient: m.patient.clone(),
            status: m.status(),
            review_rating: m.review_rating,
            structure_count: m.structures.len(),
            meshed_structures: m.structures.iter().filter(|s| s.mesh_path.is_some()).count(),
        })
        .collect();
    Ok(Json(PhantomList {
        count: phantoms.len(),
        phantoms,
    }))
}

async fn get_phantom(State(cat): State<SharedCatalog>, Path(id): Path<String>) -> ApiResult<Response> {
    let cat = read(&cat);
    Ok(Json(cat.manifest(&id)?).into_response())
}

async fn get_mesh(
    State(cat): State<SharedCatalog>,
    Path((id, sid)): Path<(String, String)>,
) -> ApiResult<Response> {
    let sid: u16 = sid
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("structure id {sid:?} is not a number")))?;
    let path = read(&cat).mesh_path(&id, sid)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| Error::io(&path, e))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn get_preview(
    State(cat): State<SharedCatalog>,
    Path((id, file)): Path<(String, String)>,
) -> ApiResult<Response> {
    let axis: Axis = file
        .strip_suffix(".png")
        .ok_or_else(|| Error::NotFound(format!("preview {file}")))?
        .parse()
        .map_err(|_| Error::NotFound(format!("preview {file}")))?;
    let path = read(&cat).preview_path(&id, axis)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| Error::io(&path, e))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Serialize)]
struct PendingItem {
    scan_id: String,
    patient_id: String,
    previews: BTreeMap<Axis, String>,
    qc: QcSummary,
}

#[derive(Serialize)]
struct PendingList {
    count: usize,
    items: Vec<PendingItem>,
}

async fn pending(State(cat): State<SharedCatalog>) -> Json<PendingList> {
    let items: Vec<PendingItem> = read(&cat)
        .pending_reviews()
        .into_iter()
        .map(|p| PendingItem {
            previews: Axis::ALL
                .into_iter()
                .map(|a| (a, format!("/api/phantoms/{}/preview/{}.png", p.scan_id, a.as_str())))
                .collect(),
            scan_id: p.scan_id,
            patient_id: p.patient_id,
            qc: p.qc,
        })
        .collect();
    Json(PendingList {
        count: items.len(),
        items,
    })
}

async fn submit_review(
    State(cat): State<SharedCatalog>,
    Path(scan_id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: ReviewRequest = serde_json::from_slice(&body)
        .map_err(|e| Error::InvalidArgument(format!("review body: {e}")))?;
    let mut cat = cat.write().unwrap_or_else(|p| p.into_inner());
    let outcome = cat.submit_review(&scan_id, &req)?;
    Ok(Json(outcome).into_response())
}

async fn demographics(State(cat): State<SharedCatalog>) -> ApiResult<Response> {
    Ok(Json(read(&cat).demographics_summary()?).into_response())
}

async fn volumes(State(cat): State<SharedCatalog>) -> ApiResult<Response> {
    let stats = read(&cat).volume_summary()?;
    Ok(Json(serde_json::json!({ "structures": stats })).into_response())
}

async fn funnel(State(cat): State<SharedCatalog>) -> ApiResult<Response> {
    Ok(Json(read(&cat).funnel()?).into_response())
}

async fn api_not_found() -> ApiError {
    ApiError(Error::NotFound("no such endpoint".into()))
}

/// API routes under `/api`, and the UI bundle at `/` when `ui` is given.
pub fn router(cat: SharedCatalog, ui: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/phantoms", get(list_phantoms))
        .route("/phantoms/{id}", get(get_phantom))
        .route("/phantoms/{id}/structures/{sid}/mesh", get(get_mesh))
        .route("/phantoms/{id}/preview/{file}", get(get_preview))
        .route("/reviews/pending", get(pending))
        .route("/reviews/{scan_id}", post(submit_review))
        .route("/stats/demographics", get(demographics))
        .route("/stats/volumes", get(volumes))
        .route("/qc/funnel", get(funnel))
        .fallback(api_not_found)
        .with_state(cat);
    let app = Router::new().nest("/api", api);
    match ui {
        Some(dir) => {
            let index = dir.join("index.html");
            app.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)))
        }
        None => app,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(catalog: Catalog, addr: SocketAddr, ui: Option<PathBuf>) -> crate::Result<()> {
    let app = router(Arc::new(RwLock::new(catalog)), ui);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("{addr}"), e))?;
    let local = listener.local_addr().map_err(|e| Error::io(format!("{addr}"), e))?;
    eprintln!("listening on http://{local}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(format!("{local}"), e))
}
