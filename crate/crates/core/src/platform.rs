//! Wires every service together the way the deployed system does. The HTTP
//! layer only authenticates, parses and forwards to this.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ai::{
    AiService, ClassifierClient, GeneratorClient, ImageFormatTag, MedicalReport, PromptSet, RecordSource,
    ReferenceClassifier, ReferenceGenerator, ReviewVerdict, SummaryResult, XrayLabel, XrayResult,
};
use crate::audit::{AccessType, AuditDraft, AuditLog, AuditStatus, AuditStore, MemoryAuditStore};
use crate::blob::{BlobStore, MemoryBlobStore};
use crate::clock::Clock;
use crate::directory::{DataAdditionRequest, DataType, Directory, NewDoctor, NewPatient, Verdict};
use crate::gateway::{CacheTtls, TtlCache};
use crate::identity::{
    scopes, IdentityProvider, PrincipalClaims, Role, ServiceCredential, TokenSigner, DEFAULT_ISSUER,
};
use crate::ids::*;
use crate::pipeline::{PipelineOutcome, RequestContext, SecurityPipeline};
use crate::records::{
    Attachment, AttachmentKind, EntityKind, ExaminationType, RecordOperation, RecordOutput, RecordService,
    ResolvedRecord, VisitInput,
};
use crate::schema::SchemaSet;
use crate::{Error, Result};

pub const AI_CLIENT_ID: &str = "ai-orchestrator";

#[derive(Debug, Clone)]
pub struct PlatformOptions {
    pub signing_key: Vec<u8>,
    pub token_ttl_secs: i64,
    pub cache_ttls: CacheTtls,
    pub audit_retention_years: u32,
    pub ai_client_secret: String,
}

impl Default for PlatformOptions {
    fn default() -> Self {
        Self {
            signing_key: b"desk-ehr-development-signing-key".to_vec(),
            token_ttl_secs: 3600,
            cache_ttls: CacheTtls::default(),
            audit_retention_years: 5,
            ai_client_secret: "ai-orchestrator-secret".into(),
        }
    }
}

/// Swappable collaborators. Defaults are in-memory and deterministic.
pub struct Backends {
    pub generator: Arc<dyn GeneratorClient>,
    pub classifier: Arc<dyn ClassifierClient>,
    pub audit_store: Box<dyn AuditStore>,
    pub blobs: Arc<dyn BlobStore>,
    pub prompts: PromptSet,
    pub schemas: SchemaSet,
}

impl Default for Backends {
    fn default() -> Self {
        Self {
            generator: Arc::new(ReferenceGenerator),
            classifier: Arc::new(ReferenceClassifier),
            audit_store: Box::new(MemoryAuditStore),
            blobs: Arc::new(MemoryBlobStore::new()),
            prompts: PromptSet::builtin(),
            schemas: SchemaSet::builtin(),
        }
    }
}

pub struct Platform {
    pub clock: Arc<dyn Clock>,
    pub identity: Arc<IdentityProvider>,
    pub directory: Arc<Directory>,
    pub records: Arc<RecordService>,
    pub audit: Arc<AuditLog>,
    pub pipeline: Arc<SecurityPipeline>,
    pub cache: Arc<TtlCache>,
    pub blobs: Arc<dyn BlobStore>,
    pub ai: Arc<AiService>,
    pub schemas: Arc<SchemaSet>,
    options: PlatformOptions,
    // approval checks and effects happen under one lock so a request is
    // applied at most once
    approvals: Mutex<()>,
}

/// Origin of a request, copied into audit entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Origin {
    pub ip: String,
    pub user_agent: String,
}

impl Origin {
    pub fn new(ip: impl Into<String>, user_agent: impl Into<String>) -> Self {
        Self {
            ip: ip.into(),
            user_agent: user_agent.into(),
        }
    }

    fn internal() -> Self {
        Self::new("127.0.0.1", AI_CLIENT_ID)
    }
}

/// Result of approving or rejecting a data-addition request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub request: DataAdditionRequest,
    /// Record documents created or changed by an approval.
    pub applied: Vec<String>,
}

/// Seeded principals for demos, tests and load runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoPopulation {
    pub admin: AdminId,
    pub hospital: HospitalId,
    pub doctors: Vec<DoctorId>,
    pub patients: Vec<PatientId>,
    pub password: String,
}

impl Platform {
    pub fn new(options: PlatformOptions, clock: Arc<dyn Clock>, backends: Backends) -> Result<Self> {
        let directory = Arc::new(Directory::new(clock.clone()));
        let identity = Arc::new(IdentityProvider::new(
            TokenSigner::new(options.signing_key.clone(), DEFAULT_ISSUER),
            clock.clone(),
            directory.clone(),
        ));
        identity.register_client(ServiceCredential {
            client_id: AI_CLIENT_ID.into(),
            client_secret: options.ai_client_secret.clone(),
            allowed_scopes: [scopes::RECORD_READ, scopes::REPORT_GENERATE].map(String::from).into(),
        });
        let records = Arc::new(RecordService::new(directory.clone()));
        let audit = Arc::new(
            AuditLog::with_store(backends.audit_store, clock.clone())?
                .with_retention_years(options.audit_retention_years),
        );
        let schemas = Arc::new(backends.schemas);
        let pipeline = Arc::new(SecurityPipeline::new(
            identity.clone(),
            schemas.clone(),
            directory.clone(),
            records.clone(),
            audit.clone(),
            clock.clone(),
        ));
        let cache = Arc::new(TtlCache::new(clock.clone(), options.cache_ttls));
        let ai = Arc::new(AiService::new(
            backends.generator,
            backends.classifier,
            backends.prompts,
            cache.clone(),
            backends.blobs.clone(),
            clock.clone(),
        ));
        Ok(Self {
            clock,
            identity,
            directory,
            records,
            audit,
            pipeline,
            cache,
            blobs: backends.blobs,
            ai,
            schemas,
            options,
            approvals: Mutex::new(()),
        })
    }

    /// In-memory platform with reference AI clients.
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self::new(PlatformOptions::default(), clock, Backends::default()).expect("memory audit store cannot fail")
    }

    pub fn options(&self) -> &PlatformOptions {
        &self.options
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    // ----- identity -----------------------------------------------------

    pub fn login(&self, principal: &str, password: &str) -> Result<(String, Role)> {
        let (token, role) = self.identity.login(principal, password, self.options.token_ttl_secs)?;
        Ok((token.0, role))
    }

    pub fn client_credentials(&self, client_id: &str, secret: &str, scopes: &BTreeSet<String>) -> Result<String> {
        Ok(self
            .identity
            .issue_service_token(client_id, secret, scopes, self.options.token_ttl_secs)?
            .0)
    }

    pub fn authenticate(&self, token: Option<&str>) -> Result<PrincipalClaims> {
        let token = token.ok_or_else(|| Error::Unauthorized("missing bearer token".into()))?;
        self.identity
            .validate(token)
            .map_err(|r| Error::Unauthorized(r.to_string()))
    }

    fn ai_token(&self, scope: &str) -> Result<String> {
        self.client_credentials(AI_CLIENT_ID, &self.options.ai_client_secret, &[scope.to_owned()].into())
    }

    // ----- records ------------------------------------------------------

    /// Runs a record operation through the security pipeline. Successful
    /// mutations drop the patient's cached AI and query entries.
    pub fn record_request(&self, ctx: RequestContext) -> PipelineOutcome {
        let mutation = !ctx.operation.is_read();
        let patient = ctx.target_patient.clone();
        let out = self.pipeline.process(ctx);
        if mutation && out.result.is_ok() {
            if let Some(p) = patient {
                self.cache.invalidate_patient(p.as_str());
            }
        }
        out
    }

    fn require_care(&self, claims: &PrincipalClaims, patient: &PatientId) -> Result<DoctorId> {
        if claims.is_service() || !claims.has_role(Role::Doctor) {
            return Err(Error::Forbidden("only doctors may use this workflow".into()));
        }
        let doctor = DoctorId::from(claims.subject.as_str());
        if !self.directory.has_active_admission(&doctor, patient) {
            return Err(Error::AccessDenied(format!("no active admission for {patient}")));
        }
        Ok(doctor)
    }

    /// Fetches a resolved record as the AI service principal, through the
    /// pipeline so the access is authorized and audited.
    pub fn fetch_record_as_service(&self, patient: &PatientId, origin: &Origin) -> Result<ResolvedRecord> {
        let token = self.ai_token(scopes::RECORD_READ)?;
        let ctx = RequestContext::new(RecordOperation::GetRecord)
            .token(token)
            .patient(patient.clone())
            .origin(origin.ip.clone(), origin.user_agent.clone());
        match self.pipeline.process(ctx).result {
            Ok(RecordOutput::Resolved(r)) => Ok(*r),
            Ok(other) => Err(Error::Internal(format!("unexpected pipeline output {other:?}"))),
            Err(e) => Err(e.error),
        }
    }

    // ----- AI -----------------------------------------------------------

    pub fn summarize(&self, claims: &PrincipalClaims, patient: &PatientId) -> Result<SummaryResult> {
        self.require_care(claims, patient)?;
        let service = self.authenticate(Some(&self.ai_token(scopes::RECORD_READ)?))?;
        let source = PipelineSource {
            platform: self,
            origin: Origin::internal(),
        };
        self.ai.summarize_history(&service, patient, &source)
    }

    pub fn generate_report(
        &self,
        claims: &PrincipalClaims,
        patient: &PatientId,
        visit: &VisitId,
    ) -> Result<MedicalReport> {
        self.require_care(claims, patient)?;
        let profile = self
            .directory
            .patient(patient)
            .ok_or_else(|| Error::NotFound(format!("patient {patient}")))?;
        let record = self.fetch_record_as_service(patient, &Origin::internal())?;
        self.ai.generate_report(claims, &profile, &record, visit)
    }

    pub fn report(&self, claims: &PrincipalClaims, id: &ReportId) -> Result<MedicalReport> {
        let report = self
            .ai
            .report(id)
            .ok_or_else(|| Error::NotFound(format!("report {id}")))?;
        self.require_care(claims, &report.patient_id)?;
        Ok(report)
    }

    pub fn classify_xray(
        &self,
        claims: &PrincipalClaims,
        patient: &PatientId,
        image: &[u8],
        format: ImageFormatTag,
        file_name: Option<&str>,
    ) -> Result<XrayResult> {
        self.require_care(claims, patient)?;
        self.ai.classify_xray(claims, patient, image, format, file_name)
    }

    pub fn review_xray(
        &self,
        claims: &PrincipalClaims,
        id: &XrayResultId,
        verdict: ReviewVerdict,
        final_label: Option<XrayLabel>,
    ) -> Result<XrayResult> {
        let existing = self
            .ai
            .xray_result(id)
            .ok_or_else(|| Error::NotFound(format!("x-ray result {id}")))?;
        self.require_care(claims, &existing.patient_id)?;
        self.ai.review_xray(claims, id, verdict, final_label)
    }

    pub fn xray_history(&self, claims: &PrincipalClaims, patient: &PatientId) -> Result<Vec<XrayResult>> {
        self.require_care(claims, patient)?;
        Ok(self.ai.xray_history(patient))
    }

    // ----- data-addition approvals --------------------------------------

    /// Resolves a forwarded request. An approval writes the submitted item
    /// into the patient's record, audited under the reviewing doctor.
    pub fn resolve_request(
        &self,
        claims: &PrincipalClaims,
        id: &RequestId,
        verdict: Verdict,
        origin: &Origin,
    ) -> Result<Resolution> {
        let _guard = self.approvals.lock().unwrap();
        let req = self
            .directory
            .data_request(id)
            .ok_or_else(|| Error::NotFound(format!("request {id}")))?;
        let applied = if verdict == Verdict::Approved
            && req.reviewing_doctor.as_ref().map(DoctorId::as_str) == Some(claims.subject.as_str())
            && req.state == crate::directory::RequestState::Forwarded
        {
            self.apply_approval(&req, origin)?
        } else {
            Vec::new()
        };
        // the directory re-checks reviewer and state and reports refusals
        let request = self.directory.resolve_request(claims, id, verdict)?;
        if !applied.is_empty() {
            self.cache.invalidate_patient(req.patient_id.as_str());
        }
        Ok(Resolution { request, applied })
    }

    fn apply_approval(&self, req: &DataAdditionRequest, origin: &Origin) -> Result<Vec<String>> {
        let doctor = req
            .reviewing_doctor
            .clone()
            .ok_or_else(|| Error::Internal("forwarded request without reviewer".into()))?;
        let patient = &req.patient_id;
        let now = self.clock.now();
        let mut applied = Vec::new();
        let mut gate = |eff: &crate::records::Effect| -> Result<()> {
            self.audit
                .append_at(
                    AuditDraft {
                        collection_name: eff.collection.clone(),
                        document_id: eff.document_id.clone(),
                        patient_id: Some(patient.clone()),
                        action: eff.action,
                        actor_id: doctor.to_string(),
                        ip_address: origin.ip.clone(),
                        user_agent: origin.user_agent.clone(),
                        reason: format!("{} (approved request {})", eff.reason, req.request_id),
                        access_type: AccessType::Regular,
                        status: AuditStatus::Success,
                        failed_layer: None,
                        error_kind: None,
                    },
                    now,
                )
                .map(|_| ())
        };
        if !self.records.has_record(patient) {
            let rec = self.records.create_record(patient, now, &mut gate)?;
            applied.push(rec.record_id.to_string());
        }
        let label = if req.description.trim().is_empty() {
            format!("document {}", req.document_ref)
        } else {
            req.description.trim().to_owned()
        };
        let date = req.issuance_date.to_string();
        let entity = |kind: EntityKind,
                      payload: serde_json::Value,
                      gate: &mut dyn FnMut(&crate::records::Effect) -> Result<()>| {
            self.schemas
                .validate(kind.schema(), &payload, crate::time::date_of(now))?;
            self.records.execute(
                &RecordOperation::CreateEntity(kind),
                patient,
                &payload,
                doctor.as_str(),
                now,
                gate,
            )
        };
        match req.data_type {
            DataType::Diagnosis => {
                let out = entity(
                    EntityKind::Condition,
                    json!({"name": label, "chronic": false, "onset_date": date, "notes": format!("from document {}", req.document_ref)}),
                    &mut gate,
                )?;
                applied.push(output_id(&out));
            }
            DataType::Surgery => {
                let out = entity(
                    EntityKind::Surgery,
                    json!({"name": label, "date": date, "outcome": format!("documented in {}", req.document_ref)}),
                    &mut gate,
                )?;
                applied.push(output_id(&out));
            }
            DataType::Prescription => {
                let out = entity(
                    EntityKind::Medication,
                    json!({"name": label, "dosage": "as prescribed", "frequency": "as prescribed", "active": true, "start_date": date}),
                    &mut gate,
                )?;
                applied.push(output_id(&out));
            }
            DataType::TestResult | DataType::Report => {
                let kind = if req.data_type == DataType::TestResult {
                    AttachmentKind::LabResult
                } else {
                    AttachmentKind::Report
                };
                let attachment = Attachment {
                    kind,
                    storage_ref: req.document_ref.clone(),
                };
                let has_visit = self.records.snapshot(patient).is_some_and(|r| !r.visits.is_empty());
                let visit = if has_visit {
                    self.records.attach_to_latest_visit(
                        patient,
                        attachment,
                        "Visit Attachment Added",
                        now,
                        &mut gate,
                    )?
                } else {
                    let input = VisitInput {
                        examination_type: ExaminationType::Routine,
                        date: req.issuance_date,
                        complaints: String::new(),
                        symptoms: Vec::new(),
                        diagnosis: format!("imported {label}"),
                        treatments: Vec::new(),
                        notes: String::new(),
                        vitals: Default::default(),
                        attachments: vec![attachment],
                    };
                    self.records.add_visit(patient, doctor.clone(), input, now, &mut gate)?
                };
                applied.push(visit.to_string());
            }
        }
        Ok(applied)
    }

    // ----- demo data ----------------------------------------------------

    /// Seeds one admin and hospital plus `n` doctors and `n` patients. Doctor
    /// `i` has an active admission for patient `i`, whose record holds one
    /// visit. Every principal logs in with the shared password.
    pub fn seed_demo(&self, n: usize, password: &str) -> Result<DemoPopulation> {
        let admin = self.directory.seed_admin("Desk Administrator");
        let hospital = self.directory.seed_hospital("Central Hospital", "Cairo");
        let admin_claims = PrincipalClaims::user(admin.as_str(), Role::Admin, self.now(), 60);
        self.identity.set_password(admin.as_str(), password);
        let mut doctors = Vec::with_capacity(n);
        let mut patients = Vec::with_capacity(n);
        for i in 0..n {
            let d = self.directory.seed_doctor(NewDoctor {
                name: format!("Dr. Demo {}", i + 1),
                specialty: "Internal Medicine".into(),
                hospital_ids: [hospital.clone()].into(),
            })?;
            let p = self.directory.register_patient(
                Some(&admin_claims),
                NewPatient {
                    national_id: format!("{:014}", 29_000_000_000_000u64 + i as u64),
                    name: format!("Demo Patient {}", i + 1),
                    contact: String::new(),
                },
            )?;
            self.identity.set_password(d.as_str(), password);
            self.identity.set_password(p.as_str(), password);
            self.directory.admit(&admin_claims, &p, &d)?;
            let now = self.now();
            let mut gate = |eff: &crate::records::Effect| -> Result<()> {
                self.audit
                    .append_at(
                        AuditDraft {
                            collection_name: eff.collection.clone(),
                            document_id: eff.document_id.clone(),
                            patient_id: Some(p.clone()),
                            action: eff.action,
                            actor_id: d.to_string(),
                            ip_address: "127.0.0.1".into(),
                            user_agent: "seed".into(),
                            reason: eff.reason.clone(),
                            access_type: AccessType::Regular,
                            status: AuditStatus::Success,
                            failed_layer: None,
                            error_kind: None,
                        },
                        now,
                    )
                    .map(|_| ())
            };
            self.records.create_record(&p, now, &mut gate)?;
            self.records.add_visit(
                &p,
                d.clone(),
                VisitInput {
                    examination_type: ExaminationType::Routine,
                    date: crate::time::date_of(now),
                    complaints: "routine check".into(),
                    symptoms: Vec::new(),
                    diagnosis: "healthy".into(),
                    treatments: Vec::new(),
                    notes: String::new(),
                    vitals: Default::default(),
                    attachments: Vec::new(),
                },
                now,
                &mut gate,
            )?;
            doctors.push(d);
            patients.push(p);
        }
        Ok(DemoPopulation {
            admin,
            hospital,
            doctors,
            patients,
            password: password.to_owned(),
        })
    }
}

fn output_id(out: &RecordOutput) -> String {
    match out {
        RecordOutput::Entity(id) => id.to_string(),
        other => other.to_json().to_string(),
    }
}

struct PipelineSource<'a> {
    platform: &'a Platform,
    origin: Origin,
}

impl RecordSource for PipelineSource<'_> {
    fn fetch_record(&self, patient: &PatientId) -> Result<ResolvedRecord> {
        self.platform.fetch_record_as_service(patient, &self.origin)
    }
}
