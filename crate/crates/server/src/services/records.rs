use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use ehr_core::ids::{EntityId, PatientId, VisitId};
use ehr_core::pipeline::RequestContext;
use ehr_core::records::{EntityKind, RecordOperation};
use ehr_core::Error;
use serde_json::Value;

use crate::app::AppState;
use crate::error::ApiError;
use crate::extract::{ApiJson, RawToken, RequestOrigin};

fn entity_kind(segment: &str) -> Result<EntityKind, ApiError> {
    EntityKind::ALL
        .into_iter()
        .find(|k| k.collection() == segment)
        .ok_or_else(|| Error::NotFound(format!("no record collection {segment:?}")).into())
}

async fn run(
    s: AppState,
    token: RawToken,
    origin: RequestOrigin,
    op: RecordOperation,
    patient: Option<PatientId>,
    payload: Value,
) -> Response {
    let created = matches!(
        op,
        RecordOperation::CreateRecord | RecordOperation::CreateVisit | RecordOperation::CreateEntity(_)
    );
    let mut ctx = RequestContext::new(op)
        .payload(payload)
        .origin(origin.0.ip, origin.0.user_agent);
    ctx.raw_token = token.0;
    ctx.target_patient = patient;
    let platform = s.platform.clone();
    let outcome = match tokio::task::spawn_blocking(move || platform.record_request(ctx)).await {
        Ok(o) => o,
        Err(e) => return ApiError::from(Error::Internal(e.to_string())).into_response(),
    };
    match outcome.result {
        Ok(out) => {
            let status = if created { StatusCode::CREATED } else { StatusCode::OK };
            (status, Json(out.to_json())).into_response()
        }
        Err(e) => ApiError(e).into_response(),
    }
}

async fn create_record(
    State(s): State<AppState>,
    token: RawToken,
    origin: RequestOrigin,
    ApiJson(body): ApiJson<Value>,
) -> Response {
    let patient = body.get("patient_id").and_then(Value::as_str).map(PatientId::from);
    run(s, token, origin, RecordOperation::CreateRecord, patient, body).await
}

async fn get_record(
    State(s): State<AppState>,
    token: RawToken,
    origin: RequestOrigin,
    Path(p): Path<String>,
) -> Response {
    run(
        s,
        token,
        origin,
        RecordOperation::GetRecord,
        Some(p.as_str().into()),
        Value::Null,
    )
    .await
}

async fn create_visit(
    State(s): State<AppState>,
    token: RawToken,
    origin: RequestOrigin,
    Path(p): Path<String>,
    ApiJson(body): ApiJson<Value>,
) -> Response {
    run(
        s,
        token,
        origin,
        RecordOperation::CreateVisit,
        Some(p.as_str().into()),
        body,
    )
    .await
}

async fn list_visits(
    State(s): State<AppState>,
    token: RawToken,
    origin: RequestOrigin,
    Path(p): Path<String>,
) -> Response {
    run(
        s,
        token,
        origin,
        RecordOperation::ListVisits,
        Some(p.as_str().into()),
        Value::Null,
    )
    .await
}

async fn update_visit(
    State(s): State<AppState>,
    token: RawToken,
    origin: RequestOrigin,
    Path((p, v)): Path<(String, String)>,
    ApiJson(body): ApiJson<Value>,
) -> Response {
    let op = RecordOperation::UpdateVisit(VisitId::from(v.as_str()));
    run(s, token, origin, op, Some(p.as_str().into()), body).await
}

async fn delete_visit(
    State(s): State<AppState>,
    token: RawToken,
    origin: RequestOrigin,
    Path((p, v)): Path<(String, String)>,
) -> Response {
    let op = RecordOperation::DeleteVisit(VisitId::from(v.as_str()));
    run(s, token, origin, op, Some(p.as_str().into()), Value::Null).await
}

async fn create_entity(
    State(s): State<AppState>,
    token: RawToken,
    origin: RequestOrigin,
    Path((p, kind)): Path<(String, String)>,
    ApiJson(body): ApiJson<Value>,
) -> Response {
    match entity_kind(&kind) {
        Ok(k) => {
            run(
                s,
                token,
                origin,
                RecordOperation::CreateEntity(k),
                Some(p.as_str().into()),
                body,
            )
            .await
        }
        Err(e) => e.into_response(),
    }
}

async fn update_entity(
    State(s): State<AppState>,
    token: RawToken,
    origin: RequestOrigin,
    Path((p, kind, id)): Path<(String, String, String)>,
    ApiJson(body): ApiJson<Value>,
) -> Response {
    match entity_kind(&kind) {
        Ok(k) => {
            let op = RecordOperation::UpdateEntity(k, EntityId::from(id.as_str()));
            run(s, token, origin, op, Some(p.as_str().into()), body).await
        }
        Err(e) => e.into_response(),
    }
}

async fn delete_entity(
    State(s): State<AppState>,
    token: RawToken,
    origin: RequestOrigin,
    Path((p, kind, id)): Path<(String, String, String)>,
) -> Response {
    match entity_kind(&kind) {
        Ok(k) => {
            let op = RecordOperation::DeleteEntity(k, EntityId::from(id.as_str()));
            run(s, token, origin, op, Some(p.as_str().into()), Value::Null).await
        }
        Err(e) => e.into_response(),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/records", post(create_record))
        .route("/api/records/{patient}", get(get_record))
        .route("/api/records/{patient}/visits", post(create_visit).get(list_visits))
        .route(
            "/api/records/{patient}/visits/{visit}",
            put(update_visit).delete(delete_visit),
        )
        .route("/api/records/{patient}/{kind}", post(create_entity))
        .route(
            "/api/records/{patient}/{kind}/{id}",
            put(update_entity).delete(delete_entity),
        )
        .with_state(state)
}
