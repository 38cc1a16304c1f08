//! One router per upstream service. Each is reached only through the
//! gateway.

mod ai;
mod audit;
mod directory;
mod identity;
mod records;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ehr_core::gateway::Upstream;
use serde::Serialize;

use crate::app::AppState;
use crate::gateway::LocalUpstream;

pub fn upstreams(state: AppState, max_upload: usize) -> Vec<LocalUpstream> {
    vec![
        LocalUpstream::new(Upstream::IdentityAccess, identity::router(state.clone())),
        LocalUpstream::new(Upstream::UserDirectory, directory::router(state.clone())),
        LocalUpstream::new(Upstream::PatientRecords, records::router(state.clone())),
        LocalUpstream::new(Upstream::AiOrchestrator, ai::router(state.clone(), max_upload)),
        LocalUpstream::new(Upstream::AuditLog, audit::router(state)),
    ]
}

pub(crate) fn created<T: Serialize>(body: T) -> Response {
    (StatusCode::CREATED, Json(body)).into_response()
}
