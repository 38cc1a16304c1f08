use axum::extract::{Query, State};
use axum::http::header::CONTENT_TYPE;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use ehr_core::audit::{retention_cutoff, AuditAction, AuditEntry, AuditFilter, AuditLog, Page};
use ehr_core::ids::PatientId;
use ehr_core::time::{parse_iso, to_iso};
use ehr_core::Error;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::app::AppState;
use crate::error::ApiError;
use crate::extract::Principal;

const MAX_PAGE: usize = 1000;

#[derive(Deserialize)]
struct AuditQuery {
    actor_id: Option<String>,
    patient_id: Option<String>,
    document_id: Option<String>,
    action: Option<AuditAction>,
    from: Option<String>,
    to: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

fn instant(field: &str, v: Option<String>) -> Result<Option<i64>, Error> {
    v.map(|s| parse_iso(&s).ok_or_else(|| Error::field(field, "expected an ISO-8601 timestamp")))
        .transpose()
}

async fn query(
    State(s): State<AppState>,
    Principal(c): Principal,
    Query(q): Query<AuditQuery>,
) -> Result<Json<Vec<AuditEntry>>, ApiError> {
    let filter = AuditFilter {
        actor_id: q.actor_id,
        patient_id: q.patient_id.as_deref().map(PatientId::from),
        document_id: q.document_id,
        action: q.action,
        from: instant("from", q.from)?,
        to: instant("to", q.to)?,
    };
    let page = Page {
        offset: q.offset.unwrap_or(0),
        limit: q.limit.unwrap_or(Page::default().limit).min(MAX_PAGE),
    };
    Ok(Json(s.platform.audit.query(&c, &filter, page)?))
}

async fn export(State(s): State<AppState>, Principal(c): Principal) -> Result<Response, ApiError> {
    AuditLog::authorize_reader(&c)?;
    let mut out = Vec::new();
    s.platform
        .audit
        .export_ndjson(&mut out)
        .map_err(|e| Error::Internal(e.to_string()))?;
    Ok(([(CONTENT_TYPE, "application/x-ndjson")], out).into_response())
}

async fn retention(State(s): State<AppState>, Principal(c): Principal) -> Result<Json<Value>, ApiError> {
    AuditLog::authorize_reader(&c)?;
    let now = s.platform.now();
    let years = s.platform.options().audit_retention_years;
    let due = s.platform.audit.retention_check(now);
    Ok(Json(json!({
        "retention_years": years,
        "cutoff": retention_cutoff(now, years).map(to_iso),
        "entries_past_horizon": due.len(),
        "document_ids": due.iter().map(|e| &e.document_id).collect::<Vec<_>>(),
    })))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/audit", get(query))
        .route("/api/audit/export", get(export))
        .route("/api/audit/retention", get(retention))
        .with_state(state)
}
