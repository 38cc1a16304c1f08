use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::ids::*;
use crate::time::{iso, iso_opt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub patient_id: PatientId,
    pub national_id: String,
    pub name: String,
    pub contact: String,
    #[serde(with = "iso")]
    pub registered_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewPatient {
    pub national_id: String,
    pub name: String,
    #[serde(default)]
    pub contact: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoctorProfile {
    pub doctor_id: DoctorId,
    pub name: String,
    pub specialty: String,
    pub hospital_ids: BTreeSet<HospitalId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewDoctor {
    pub name: String,
    pub specialty: String,
    #[serde(default)]
    pub hospital_ids: BTreeSet<HospitalId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdminProfile {
    pub admin_id: AdminId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hospital {
    pub hospital_id: HospitalId,
    pub name: String,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmergencyContact {
    pub contact_id: ContactId,
    pub name: String,
    pub phone: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewContact {
    pub name: String,
    pub phone: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionState {
    Active,
    Discharged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Admission {
    pub admission_id: AdmissionId,
    pub patient_id: PatientId,
    pub doctor_id: DoctorId,
    pub admitted_by: AdminId,
    pub state: AdmissionState,
    #[serde(with = "iso")]
    pub admitted_at: i64,
    #[serde(with = "iso_opt", default)]
    pub discharged_at: Option<i64>,
}

impl Admission {
    pub fn is_active(&self) -> bool {
        self.state == AdmissionState::Active
    }

    /// Whether the admission granted access at instant `t`.
    pub fn active_at(&self, t: i64) -> bool {
        self.admitted_at <= t && self.discharged_at.is_none_or(|d| t < d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", content = "id", rename_all = "snake_case")]
pub enum AdmissionFilter {
    All,
    ByDoctor(DoctorId),
    ByPatient(PatientId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    TestResult,
    Prescription,
    Report,
    Diagnosis,
    Surgery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Submitted,
    Forwarded,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataAdditionRequest {
    pub request_id: RequestId,
    pub patient_id: PatientId,
    pub data_type: DataType,
    pub issuance_date: NaiveDate,
    pub document_ref: String,
    /// Free-text label for the submitted item, e.g. the condition name.
    pub description: String,
    pub state: RequestState,
    pub reviewing_doctor: Option<DoctorId>,
    #[serde(with = "iso")]
    pub submitted_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewDataAdditionRequest {
    pub data_type: DataType,
    pub issuance_date: NaiveDate,
    pub document_ref: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExaminationState {
    Pending,
    Scheduled,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExaminationRequest {
    pub request_id: RequestId,
    pub patient_id: PatientId,
    pub requested_type: String,
    pub state: ExaminationState,
    pub resulting_admission: Option<AdmissionId>,
    #[serde(with = "iso")]
    pub requested_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    AccessAttempt,
    Assignment,
    Registration,
    Discharge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemEvent {
    pub event_id: EventId,
    pub actor_id: String,
    pub event_kind: EventKind,
    pub detail: String,
    #[serde(with = "iso")]
    pub at: i64,
}

/// What `GET /api/user/profile` returns for the caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum UserProfile {
    Patient(PatientProfile),
    Doctor(DoctorProfile),
    Admin(AdminProfile),
    Service { client_id: String },
}
