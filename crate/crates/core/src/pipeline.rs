//! The ordered chain every record request passes through: authenticate,
//! authorize, validate, access control, then audit. The first failing layer
//! ends the request; later layers never run.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::audit::{AccessType, AuditAction, AuditDraft, AuditEntry, AuditLog, AuditStatus};
use crate::clock::Clock;
use crate::identity::{IdentityProvider, PrincipalClaims, Role, TokenRejection};
use crate::ids::PatientId;
use crate::records::{CareRelations, Effect, RecordOperation, RecordOutput, RecordService};
use crate::schema::SchemaSet;
use crate::time::date_of;
use crate::{Error, ErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Authentication,
    Authorization,
    Validation,
    AccessControl,
    Audit,
}

impl Layer {
    pub const ORDER: [Layer; 5] = [
        Layer::Authentication,
        Layer::Authorization,
        Layer::Validation,
        Layer::AccessControl,
        Layer::Audit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Authentication => "authentication",
            Layer::Authorization => "authorization",
            Layer::Validation => "validation",
            Layer::AccessControl => "access_control",
            Layer::Audit => "audit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerVerdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOutcome {
    pub layer: Layer,
    pub verdict: LayerVerdict,
    pub error_kind: Option<ErrorKind>,
}

/// Source of decoded claims for the authentication layer.
pub trait TokenValidator: Send + Sync {
    fn validate(&self, token: &str) -> Result<PrincipalClaims, TokenRejection>;
}

impl TokenValidator for IdentityProvider {
    fn validate(&self, token: &str) -> Result<PrincipalClaims, TokenRejection> {
        IdentityProvider::validate(self, token)
    }
}

#[derive(Debug, Clone)]
pub struct RequestContext {
    pub raw_token: Option<String>,
    /// Set once authentication passes.
    pub claims: Option<PrincipalClaims>,
    pub operation: RecordOperation,
    pub payload: Value,
    pub target_patient: Option<PatientId>,
    pub source_ip: String,
    pub user_agent: String,
}

impl RequestContext {
    pub fn new(operation: RecordOperation) -> Self {
        Self {
            raw_token: None,
            claims: None,
            operation,
            payload: Value::Null,
            target_patient: None,
            source_ip: "127.0.0.1".into(),
            user_agent: String::new(),
        }
    }

    pub fn token(mut self, token: impl Into<String>) -> Self {
        self.raw_token = Some(token.into());
        self
    }

    pub fn payload(mut self, payload: Value) -> Self {
        self.payload = payload;
        self
    }

    pub fn patient(mut self, patient: impl Into<PatientId>) -> Self {
        self.target_patient = Some(patient.into());
        self
    }

    pub fn origin(mut self, ip: impl Into<String>, user_agent: impl Into<String>) -> Self {
        self.source_ip = ip.into();
        self.user_agent = user_agent.into();
        self
    }
}

/// A request failure. `layer` is `None` when every layer passed and the
/// operation itself failed (missing entity, duplicate record).
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineError {
    pub layer: Option<Layer>,
    pub error: Error,
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        self.error.kind()
    }

    /// Machine-readable error body.
    pub fn body(&self) -> Value {
        let mut body = json!({
            "error_kind": self.kind(),
            "layer": self.layer.map(Layer::as_str),
            "detail": self.error.public_detail(),
        });
        if let Error::Validation(fields) = &self.error {
            body["fields"] = json!(fields);
        }
        body
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub result: Result<RecordOutput, PipelineError>,
    /// Layers in the order they ran.
    pub trace: Vec<LayerOutcome>,
    pub audit: Option<AuditEntry>,
}

pub struct SecurityPipeline {
    tokens: Arc<dyn TokenValidator>,
    schemas: Arc<SchemaSet>,
    relations: Arc<dyn CareRelations>,
    records: Arc<RecordService>,
    audit: Arc<AuditLog>,
    clock: Arc<dyn Clock>,
}

fn operation_action(op: &RecordOperation) -> AuditAction {
    match op {
        RecordOperation::GetRecord | RecordOperation::ListVisits => AuditAction::View,
        RecordOperation::CreateRecord | RecordOperation::CreateVisit | RecordOperation::CreateEntity(_) => {
            AuditAction::Create
        }
        RecordOperation::UpdateVisit(_) | RecordOperation::UpdateEntity(..) => AuditAction::Update,
        RecordOperation::DeleteVisit(_) | RecordOperation::DeleteEntity(..) => AuditAction::Delete,
    }
}

fn operation_collection(op: &RecordOperation) -> &'static str {
    match op {
        RecordOperation::CreateRecord | RecordOperation::GetRecord => "medical_records",
        RecordOperation::CreateVisit
        | RecordOperation::ListVisits
        | RecordOperation::UpdateVisit(_)
        | RecordOperation::DeleteVisit(_) => "visits",
        RecordOperation::CreateEntity(k)
        | RecordOperation::UpdateEntity(k, _)
        | RecordOperation::DeleteEntity(k, _) => k.collection(),
    }
}

impl SecurityPipeline {
    pub fn new(
        tokens: Arc<dyn TokenValidator>,
        schemas: Arc<SchemaSet>,
        relations: Arc<dyn CareRelations>,
        records: Arc<RecordService>,
        audit: Arc<AuditLog>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            tokens,
            schemas,
            relations,
            records,
            audit,
            clock,
        }
    }

    pub fn audit_log(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    pub fn records(&self) -> &Arc<RecordService> {
        &self.records
    }

    pub fn authenticate_layer(&self, ctx: &mut RequestContext) -> Result<(), Error> {
        let token = ctx
            .raw_token
            .as_deref()
            .ok_or_else(|| Error::Unauthorized(TokenRejection::Missing.to_string()))?;
        let claims = self
            .tokens
            .validate(token)
            .map_err(|r| Error::Unauthorized(r.to_string()))?;
        ctx.claims = Some(claims);
        Ok(())
    }

    /// Users need one of the operation's permissions; service principals
    /// need the operation's scope instead, since they carry no permissions.
    pub fn authorize_layer(&self, claims: &PrincipalClaims, op: &RecordOperation) -> Result<(), Error> {
        let ok = if claims.is_service() {
            claims.has_scope(op.required_scope())
        } else {
            op.accepted_permissions().into_iter().any(|p| claims.has_permission(p))
        };
        if ok {
            Ok(())
        } else {
            Err(Error::insufficient_permissions())
        }
    }

    pub fn validate_layer(&self, ctx: &RequestContext) -> Result<(), Error> {
        let today = date_of(self.clock.now());
        self.schemas.validate(ctx.operation.schema(), &ctx.payload, today)?;
        if ctx.operation == RecordOperation::CreateRecord {
            let body_patient = ctx.payload.get("patient_id").and_then(Value::as_str);
            if let (Some(b), Some(t)) = (body_patient, &ctx.target_patient) {
                if b != t.as_str() {
                    return Err(Error::field("patient_id", "does not match the addressed patient"));
                }
            }
        }
        Ok(())
    }

    pub fn access_control_layer(&self, ctx: &RequestContext) -> Result<(), Error> {
        let claims = ctx
            .claims
            .as_ref()
            .ok_or_else(|| Error::Internal("access control before authentication".into()))?;
        let target = ctx
            .target_patient
            .as_ref()
            .ok_or_else(|| Error::AccessDenied("request names no patient".into()))?;
        let granted = if claims.is_service() {
            claims.has_scope(ctx.operation.required_scope())
        } else {
            match claims.primary_role() {
                Some(Role::Doctor) => self.relations.has_active_admission(&claims.subject, target),
                Some(Role::Patient) => claims.subject == target.as_str(),
                _ => false,
            }
        };
        if granted {
            Ok(())
        } else {
            Err(Error::AccessDenied(format!("no care relationship with {target}")))
        }
    }

    /// Runs every layer in order, dispatches on full pass, and writes
    /// exactly one audit entry whatever the outcome.
    pub fn process(&self, mut ctx: RequestContext) -> PipelineOutcome {
        let now = self.clock.now();
        let mut trace = Vec::with_capacity(5);

        let fail_at = |layer: Layer, error: Error, ctx: &RequestContext, mut trace: Vec<LayerOutcome>| {
            trace.push(LayerOutcome {
                layer,
                verdict: LayerVerdict::Fail,
                error_kind: Some(error.kind()),
            });
            let audit = self
                .audit
                .append_at(self.failure_draft(ctx, Some(layer), &error), now)
                .ok();
            PipelineOutcome {
                result: Err(PipelineError {
                    layer: Some(layer),
                    error,
                }),
                trace,
                audit,
            }
        };
        let pass = |trace: &mut Vec<LayerOutcome>, layer: Layer| {
            trace.push(LayerOutcome {
                layer,
                verdict: LayerVerdict::Pass,
                error_kind: None,
            })
        };

        if let Err(e) = self.authenticate_layer(&mut ctx) {
            return fail_at(Layer::Authentication, e, &ctx, trace);
        }
        pass(&mut trace, Layer::Authentication);

        let claims = ctx.claims.clone().expect("set by authentication");
        if let Err(e) = self.authorize_layer(&claims, &ctx.operation) {
            return fail_at(Layer::Authorization, e, &ctx, trace);
        }
        pass(&mut trace, Layer::Authorization);

        if let Err(e) = self.validate_layer(&ctx) {
            return fail_at(Layer::Validation, e, &ctx, trace);
        }
        pass(&mut trace, Layer::Validation);

        if let Err(e) = self.access_control_layer(&ctx) {
            return fail_at(Layer::AccessControl, e, &ctx, trace);
        }
        pass(&mut trace, Layer::AccessControl);

        // All four checks passed. The audit append is the commit gate of
        // the operation: if it cannot be written, the operation is discarded.
        let target = ctx.target_patient.clone().expect("checked by access control");
        let mut written: Option<AuditEntry> = None;
        let mut audit_error: Option<Error> = None;
        let result = {
            let mut gate = |eff: &Effect| -> Result<(), Error> {
                let draft = self.success_draft(&ctx, &claims, eff);
                match self.audit.append_at(draft, now) {
                    Ok(e) => {
                        written = Some(e);
                        Ok(())
                    }
                    Err(e) => {
                        audit_error = Some(e.clone());
                        Err(e)
                    }
                }
            };
            self.records
                .execute(&ctx.operation, &target, &ctx.payload, &claims.subject, now, &mut gate)
        };

        if let Some(e) = audit_error {
            trace.push(LayerOutcome {
                layer: Layer::Audit,
                verdict: LayerVerdict::Fail,
                error_kind: Some(ErrorKind::Internal),
            });
            return PipelineOutcome {
                result: Err(PipelineError {
                    layer: Some(Layer::Audit),
                    error: Error::Internal(format!("audit log unavailable: {e}")),
                }),
                trace,
                audit: None,
            };
        }

        match result {
            Ok(out) => {
                pass(&mut trace, Layer::Audit);
                PipelineOutcome {
                    result: Ok(out),
                    trace,
                    audit: written,
                }
            }
            Err(error) => {
                let audit = self.audit.append_at(self.failure_draft(&ctx, None, &error), now);
                let audit = match audit {
                    Ok(a) => {
                        pass(&mut trace, Layer::Audit);
                        Some(a)
                    }
                    Err(_) => {
                        trace.push(LayerOutcome {
                            layer: Layer::Audit,
                            verdict: LayerVerdict::Fail,
                            error_kind: Some(ErrorKind::Internal),
                        });
                        None
                    }
                };
                PipelineOutcome {
                    result: Err(PipelineError { layer: None, error }),
                    trace,
                    audit,
                }
            }
        }
    }

    fn success_draft(&self, ctx: &RequestContext, claims: &PrincipalClaims, eff: &Effect) -> AuditDraft {
        AuditDraft {
            collection_name: eff.collection.clone(),
            document_id: eff.document_id.clone(),
            patient_id: ctx.target_patient.clone(),
            action: eff.action,
            actor_id: claims.subject.clone(),
            ip_address: ctx.source_ip.clone(),
            user_agent: ctx.user_agent.clone(),
            reason: eff.reason.clone(),
            access_type: AccessType::Regular,
            status: AuditStatus::Success,
            failed_layer: None,
            error_kind: None,
        }
    }

    fn failure_draft(&self, ctx: &RequestContext, layer: Option<Layer>, error: &Error) -> AuditDraft {
        let op = &ctx.operation;
        let stage = layer.map_or("execution", Layer::as_str);
        AuditDraft {
            collection_name: operation_collection(op).to_owned(),
            document_id: ctx
                .target_patient
                .as_ref()
                .map_or_else(|| "-".to_owned(), |p| p.to_string()),
            patient_id: ctx.target_patient.clone(),
            action: operation_action(op),
            actor_id: ctx
                .claims
                .as_ref()
                .map_or_else(|| "anonymous".to_owned(), |c| c.subject.clone()),
            ip_address: ctx.source_ip.clone(),
            user_agent: ctx.user_agent.clone(),
            reason: format!("{} refused at {stage}", op.name()),
            access_type: AccessType::Regular,
            status: AuditStatus::Failure,
            failed_layer: layer,
            error_kind: Some(error.kind()),
        }
    }
}
