use axum::extract::{Path, Query, State};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use ehr_core::directory::{
    Admission, AdmissionFilter, DataAdditionRequest, EmergencyContact, ExaminationRequest, Hospital, NewContact,
    NewDataAdditionRequest, NewDoctor, NewPatient, UserProfile, Verdict,
};
use ehr_core::ids::{AdmissionId, DoctorId, PatientId, RequestId};
use ehr_core::platform::Resolution;
use ehr_core::Error;
use serde::Deserialize;
use serde_json::json;

use super::created;
use crate::app::AppState;
use crate::error::ApiError;
use crate::extract::{ApiJson, MaybePrincipal, Principal, RequestOrigin};

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn profile(State(s): State<AppState>, Principal(c): Principal) -> ApiResult<UserProfile> {
    Ok(Json(s.platform.directory.profile(&c)?))
}

async fn register_patient(
    State(s): State<AppState>,
    MaybePrincipal(c): MaybePrincipal,
    ApiJson(body): ApiJson<NewPatient>,
) -> Result<Response, ApiError> {
    let id = s.platform.directory.register_patient(c.as_ref(), body)?;
    Ok(created(json!({ "patient_id": id })))
}

async fn register_doctor(
    State(s): State<AppState>,
    Principal(c): Principal,
    ApiJson(body): ApiJson<NewDoctor>,
) -> Result<Response, ApiError> {
    let id = s.platform.directory.register_doctor(&c, body)?;
    Ok(created(json!({ "doctor_id": id })))
}

#[derive(Deserialize)]
struct AdmitBody {
    patient_id: PatientId,
    doctor_id: DoctorId,
}

async fn admit(
    State(s): State<AppState>,
    Principal(c): Principal,
    ApiJson(body): ApiJson<AdmitBody>,
) -> Result<Response, ApiError> {
    Ok(created(s.platform.directory.admit(
        &c,
        &body.patient_id,
        &body.doctor_id,
    )?))
}

#[derive(Deserialize)]
struct AdmissionQuery {
    doctor_id: Option<DoctorId>,
    patient_id: Option<PatientId>,
}

async fn list_admissions(
    State(s): State<AppState>,
    Principal(c): Principal,
    Query(q): Query<AdmissionQuery>,
) -> ApiResult<Vec<Admission>> {
    let filter = match (q.doctor_id, q.patient_id) {
        (Some(_), Some(_)) => return Err(Error::field("doctor_id", "filter by doctor or patient, not both").into()),
        (Some(d), None) => AdmissionFilter::ByDoctor(d),
        (None, Some(p)) => AdmissionFilter::ByPatient(p),
        (None, None) => AdmissionFilter::All,
    };
    Ok(Json(s.platform.directory.list_admissions(&c, &filter)?))
}

async fn discharge(State(s): State<AppState>, Principal(c): Principal, Path(id): Path<String>) -> ApiResult<Admission> {
    Ok(Json(
        s.platform.directory.discharge(&c, &AdmissionId::from(id.as_str()))?,
    ))
}

async fn submit_data_request(
    State(s): State<AppState>,
    Principal(c): Principal,
    ApiJson(body): ApiJson<NewDataAdditionRequest>,
) -> Result<Response, ApiError> {
    Ok(created(s.platform.directory.submit_data_addition_request(&c, body)?))
}

async fn list_data_requests(State(s): State<AppState>, Principal(c): Principal) -> ApiResult<Vec<DataAdditionRequest>> {
    Ok(Json(s.platform.directory.list_data_addition_requests(&c)?))
}

#[derive(Deserialize)]
struct DoctorBody {
    doctor_id: DoctorId,
}

async fn forward(
    State(s): State<AppState>,
    Principal(c): Principal,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<DoctorBody>,
) -> ApiResult<DataAdditionRequest> {
    let id = RequestId::from(id.as_str());
    Ok(Json(s.platform.directory.forward_request(&c, &id, &body.doctor_id)?))
}

#[derive(Deserialize)]
struct ResolveBody {
    verdict: Verdict,
}

async fn resolve(
    State(s): State<AppState>,
    Principal(c): Principal,
    RequestOrigin(origin): RequestOrigin,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<ResolveBody>,
) -> ApiResult<Resolution> {
    let id = RequestId::from(id.as_str());
    let r = s
        .run(move |p| p.resolve_request(&c, &id, body.verdict, &origin))
        .await?;
    Ok(Json(r))
}

#[derive(Deserialize)]
struct ExamBody {
    requested_type: String,
}

async fn request_examination(
    State(s): State<AppState>,
    Principal(c): Principal,
    ApiJson(body): ApiJson<ExamBody>,
) -> Result<Response, ApiError> {
    Ok(created(
        s.platform.directory.request_examination(&c, &body.requested_type)?,
    ))
}

async fn list_examinations(State(s): State<AppState>, Principal(c): Principal) -> ApiResult<Vec<ExaminationRequest>> {
    Ok(Json(s.platform.directory.list_examination_requests(&c)?))
}

async fn schedule(
    State(s): State<AppState>,
    Principal(c): Principal,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<DoctorBody>,
) -> ApiResult<serde_json::Value> {
    let id = RequestId::from(id.as_str());
    let (request, admission) = s.platform.directory.schedule_examination(&c, &id, &body.doctor_id)?;
    Ok(Json(json!({ "request": request, "admission": admission })))
}

async fn hospitals(State(s): State<AppState>, Principal(c): Principal) -> Json<Vec<Hospital>> {
    Json(s.platform.directory.list_hospitals(&c))
}

async fn add_contact(
    State(s): State<AppState>,
    Principal(c): Principal,
    ApiJson(body): ApiJson<NewContact>,
) -> Result<Response, ApiError> {
    let id = s.platform.directory.assign_emergency_contact(&c, body)?;
    Ok(created(json!({ "contact_id": id })))
}

async fn contacts(State(s): State<AppState>, Principal(c): Principal) -> ApiResult<Vec<EmergencyContact>> {
    if c.is_service() || c.primary_role() != Some(ehr_core::identity::Role::Patient) {
        return Err(Error::Forbidden("only patients list their emergency contacts".into()).into());
    }
    Ok(Json(
        s.platform
            .directory
            .emergency_contacts(&PatientId::from(c.subject.as_str())),
    ))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/user/profile", get(profile))
        .route("/api/patients", post(register_patient))
        .route("/api/doctors", post(register_doctor))
        .route("/api/admissions", post(admit).get(list_admissions))
        .route("/api/admissions/{id}/discharge", post(discharge))
        .route(
            "/api/requests/data-addition",
            post(submit_data_request).get(list_data_requests),
        )
        .route("/api/requests/data-addition/{id}/forward", post(forward))
        .route("/api/requests/data-addition/{id}/resolve", post(resolve))
        .route(
            "/api/requests/examination",
            post(request_examination).get(list_examinations),
        )
        .route("/api/requests/examination/{id}/schedule", post(schedule))
        .route("/api/hospitals", get(hospitals))
        .route("/api/contacts", post(add_contact).get(contacts))
        .with_state(state)
}
