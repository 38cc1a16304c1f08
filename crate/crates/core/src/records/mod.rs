//! Per-patient medical record aggregates and their entity collections.
//!
//! Each patient's documents sit behind their own mutex. A mutation works on
//! a copy, asks the caller's commit gate (the audit append) for permission,
//! and only then swaps the copy in, so a failed audit write leaves no trace.

mod model;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, RwLock};

pub use model::*;
use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::audit::AuditAction;
use crate::directory::Directory;
use crate::identity::{scopes, Permission};
use crate::ids::*;
use crate::{Error, Result};

/// Relationship facts the record service needs from the user directory.
pub trait CareRelations: Send + Sync {
    fn patient_exists(&self, patient: &PatientId) -> bool;
    fn has_active_admission(&self, doctor: &str, patient: &PatientId) -> bool;
    fn doctor_name(&self, doctor: &DoctorId) -> Option<String>;
}

impl CareRelations for Directory {
    fn patient_exists(&self, patient: &PatientId) -> bool {
        Directory::patient_exists(self, patient)
    }

    fn has_active_admission(&self, doctor: &str, patient: &PatientId) -> bool {
        Directory::has_active_admission(self, &DoctorId::from(doctor), patient)
    }

    fn doctor_name(&self, doctor: &DoctorId) -> Option<String> {
        self.doctor(doctor).map(|d| d.name)
    }
}

/// What a handler did, in the terms the audit log records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Effect {
    pub collection: String,
    pub document_id: String,
    pub action: AuditAction,
    pub reason: String,
}

/// Called with the effect of an operation before it becomes visible. An
/// error aborts the operation.
pub type CommitGate<'a> = &'a mut dyn FnMut(&Effect) -> Result<()>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RecordOperation {
    CreateRecord,
    GetRecord,
    CreateVisit,
    ListVisits,
    UpdateVisit(VisitId),
    DeleteVisit(VisitId),
    CreateEntity(EntityKind),
    UpdateEntity(EntityKind, EntityId),
    DeleteEntity(EntityKind, EntityId),
}

#[derive(Clone, Copy)]
enum Verb {
    Create,
    Update,
    Delete,
}

fn entity_permission(kind: EntityKind, verb: Verb) -> Permission {
    use EntityKind as K;
    use Permission as P;
    use Verb as V;
    match (kind, verb) {
        (K::Allergy, V::Create) => P::CreateAllergy,
        (K::Allergy, V::Update) => P::UpdateAllergy,
        (K::Allergy, V::Delete) => P::DeleteAllergy,
        (K::Condition, V::Create) => P::CreateCondition,
        (K::Condition, V::Update) => P::UpdateCondition,
        (K::Condition, V::Delete) => P::DeleteCondition,
        (K::Medication, V::Create) => P::CreateMedication,
        (K::Medication, V::Update) => P::UpdateMedication,
        (K::Medication, V::Delete) => P::DeleteMedication,
        (K::Surgery, V::Create) => P::CreateSurgery,
        (K::Surgery, V::Update) => P::UpdateSurgery,
        (K::Surgery, V::Delete) => P::DeleteSurgery,
        // the permission vocabulary has no immunization or lifestyle names;
        // these sub-documents are governed by the record-level permission
        (K::Immunization | K::Lifestyle, _) => P::CreateRecord,
    }
}

impl RecordOperation {
    pub fn name(&self) -> String {
        match self {
            RecordOperation::CreateRecord => "create_record".into(),
            RecordOperation::GetRecord => "get_record".into(),
            RecordOperation::CreateVisit => "create_visit".into(),
            RecordOperation::ListVisits => "list_visits".into(),
            RecordOperation::UpdateVisit(_) => "update_visit".into(),
            RecordOperation::DeleteVisit(_) => "delete_visit".into(),
            RecordOperation::CreateEntity(k) => format!("create_{}", k.schema()),
            RecordOperation::UpdateEntity(k, _) => format!("update_{}", k.schema()),
            RecordOperation::DeleteEntity(k, _) => format!("delete_{}", k.schema()),
        }
    }

    /// Schema id the payload is validated against.
    pub fn schema(&self) -> &'static str {
        match self {
            RecordOperation::CreateRecord => "create_record",
            RecordOperation::CreateVisit | RecordOperation::UpdateVisit(_) => "visit",
            RecordOperation::CreateEntity(k) | RecordOperation::UpdateEntity(k, _) => k.schema(),
            RecordOperation::GetRecord
            | RecordOperation::ListVisits
            | RecordOperation::DeleteVisit(_)
            | RecordOperation::DeleteEntity(..) => "empty",
        }
    }

    pub fn is_read(&self) -> bool {
        matches!(self, RecordOperation::GetRecord | RecordOperation::ListVisits)
    }

    /// Scope a service principal must hold for this operation.
    pub fn required_scope(&self) -> &'static str {
        if self.is_read() {
            scopes::RECORD_READ
        } else {
            scopes::RECORD_WRITE
        }
    }

    /// Holding any one of these permissions passes authorization.
    pub fn accepted_permissions(&self) -> Vec<Permission> {
        match self {
            RecordOperation::CreateRecord => vec![Permission::CreateRecord],
            RecordOperation::GetRecord => vec![Permission::GetRecord, Permission::GetOwnRecord],
            RecordOperation::ListVisits => vec![Permission::GetVisit, Permission::GetOwnRecord],
            RecordOperation::CreateVisit => vec![Permission::CreateVisit],
            RecordOperation::UpdateVisit(_) => vec![Permission::UpdateVisit],
            RecordOperation::DeleteVisit(_) => vec![Permission::DeleteVisit],
            RecordOperation::CreateEntity(k) => vec![entity_permission(*k, Verb::Create)],
            RecordOperation::UpdateEntity(k, _) => vec![entity_permission(*k, Verb::Update)],
            RecordOperation::DeleteEntity(k, _) => vec![entity_permission(*k, Verb::Delete)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordOutput {
    Record(Box<MedicalRecord>),
    Resolved(Box<ResolvedRecord>),
    Visit(VisitId),
    Entity(EntityId),
    Visits(Vec<VisitSummary>),
    Deleted(String),
}

impl RecordOutput {
    pub fn to_json(&self) -> Value {
        let v = match self {
            RecordOutput::Record(r) => serde_json::to_value(r),
            RecordOutput::Resolved(r) => serde_json::to_value(r),
            RecordOutput::Visit(id) => Ok(serde_json::json!({ "visit_id": id })),
            RecordOutput::Entity(id) => Ok(serde_json::json!({ "id": id })),
            RecordOutput::Visits(v) => serde_json::to_value(v),
            RecordOutput::Deleted(id) => Ok(serde_json::json!({ "deleted": id })),
        };
        v.unwrap_or(Value::Null)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PatientDocs {
    record: MedicalRecord,
    conditions: BTreeMap<EntityId, Condition>,
    medications: BTreeMap<EntityId, Medication>,
    allergies: BTreeMap<EntityId, Allergy>,
    surgeries: BTreeMap<EntityId, Surgery>,
    immunizations: BTreeMap<EntityId, Immunization>,
    visits: BTreeMap<VisitId, Visit>,
}

fn pick<K: Ord, V: Clone>(ids: &[K], coll: &BTreeMap<K, V>) -> Vec<V> {
    ids.iter().filter_map(|id| coll.get(id).cloned()).collect()
}

fn remove_id<K: PartialEq>(ids: &mut Vec<K>, id: &K) {
    ids.retain(|x| x != id);
}

impl PatientDocs {
    fn new(record: MedicalRecord) -> Self {
        Self {
            record,
            conditions: BTreeMap::new(),
            medications: BTreeMap::new(),
            allergies: BTreeMap::new(),
            surgeries: BTreeMap::new(),
            immunizations: BTreeMap::new(),
            visits: BTreeMap::new(),
        }
    }

    fn resolve(&self) -> ResolvedRecord {
        let r = &self.record;
        ResolvedRecord {
            record: r.clone(),
            conditions: pick(&r.condition_ids, &self.conditions),
            medications: pick(&r.medication_ids, &self.medications),
            allergies: pick(&r.allergy_ids, &self.allergies),
            surgeries: pick(&r.surgery_ids, &self.surgeries),
            immunizations: pick(&r.immunization_ids, &self.immunizations),
            visits: pick(&r.visit_ids, &self.visits),
        }
    }

    /// Lists every broken reference in either direction.
    fn integrity_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let rid = &self.record.record_id;
        macro_rules! check {
            ($ids:expr, $coll:expr, $label:literal) => {
                for id in &$ids {
                    match $coll.get(id) {
                        None => out.push(format!("{rid}: dangling {} {id}", $label)),
                        Some(e) if &e.record_id != rid => out.push(format!("{id}: back-reference mismatch")),
                        Some(_) => {}
                    }
                }
                for id in $coll.keys() {
                    if !$ids.contains(id) {
                        out.push(format!("{rid}: orphaned {} {id}", $label));
                    }
                }
                let mut seen = std::collections::BTreeSet::new();
                for id in &$ids {
                    if !seen.insert(id) {
                        out.push(format!("{rid}: duplicate {} {id}", $label));
                    }
                }
            };
        }
        check!(self.record.condition_ids, self.conditions, "condition");
        check!(self.record.medication_ids, self.medications, "medication");
        check!(self.record.allergy_ids, self.allergies, "allergy");
        check!(self.record.surgery_ids, self.surgeries, "surgery");
        check!(self.record.immunization_ids, self.immunizations, "immunization");
        check!(self.record.visit_ids, self.visits, "visit");
        out
    }
}

fn parse<T: DeserializeOwned>(payload: &Value) -> Result<T> {
    let payload = if payload.is_null() {
        Value::Object(Default::default())
    } else {
        payload.clone()
    };
    serde_json::from_value(payload).map_err(|e| Error::field("$", e.to_string()))
}

fn effect(collection: &str, document_id: &str, action: AuditAction, reason: impl Into<String>) -> Effect {
    Effect {
        collection: collection.to_owned(),
        document_id: document_id.to_owned(),
        action,
        reason: reason.into(),
    }
}

fn verb_reason(kind: &str, action: AuditAction) -> String {
    let verb = match action {
        AuditAction::View => "Viewed",
        AuditAction::Create => "Created",
        AuditAction::Update => "Updated",
        AuditAction::Delete => "Deleted",
    };
    format!("{kind} {verb}")
}

/// Storage for record aggregates plus the operation handlers that run after
/// the security layers have passed.
pub struct RecordService {
    docs: RwLock<HashMap<PatientId, Arc<Mutex<PatientDocs>>>>,
    ids: IdGen,
    relations: Arc<dyn CareRelations>,
}

impl RecordService {
    pub fn new(relations: Arc<dyn CareRelations>) -> Self {
        Self {
            docs: RwLock::default(),
            ids: IdGen::new(),
            relations,
        }
    }

    fn slot(&self, patient: &PatientId) -> Result<Arc<Mutex<PatientDocs>>> {
        self.docs
            .read()
            .unwrap()
            .get(patient)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("medical record for {patient}")))
    }

    pub fn has_record(&self, patient: &PatientId) -> bool {
        self.docs.read().unwrap().contains_key(patient)
    }

    /// Current version of the patient's record, if one exists.
    pub fn version(&self, patient: &PatientId) -> Option<u64> {
        let slot = self.slot(patient).ok()?;
        let v = slot.lock().unwrap().record.version;
        Some(v)
    }

    /// Unaudited snapshot for internal consumers and tests.
    pub fn snapshot(&self, patient: &PatientId) -> Option<ResolvedRecord> {
        let slot = self.slot(patient).ok()?;
        let docs = slot.lock().unwrap();
        Some(docs.resolve())
    }

    /// Every broken reference across all stored records.
    pub fn integrity_violations(&self) -> Vec<String> {
        let slots: Vec<_> = self.docs.read().unwrap().values().cloned().collect();
        slots
            .iter()
            .flat_map(|s| s.lock().unwrap().integrity_violations())
            .collect()
    }

    /// Runs a validated operation for `actor` against `patient`'s record.
    pub fn execute(
        &self,
        op: &RecordOperation,
        patient: &PatientId,
        payload: &Value,
        actor: &str,
        now: i64,
        gate: CommitGate<'_>,
    ) -> Result<RecordOutput> {
        match op {
            RecordOperation::CreateRecord => self
                .create_record(patient, now, gate)
                .map(|r| RecordOutput::Record(Box::new(r))),
            RecordOperation::GetRecord => self.read(patient, gate, |d| {
                let rid = d.record.record_id.to_string();
                Ok((
                    RecordOutput::Resolved(Box::new(d.resolve())),
                    effect("medical_records", &rid, AuditAction::View, "Medical Record Viewed"),
                ))
            }),
            RecordOperation::ListVisits => self.read(patient, gate, |d| {
                let mut visits: Vec<&Visit> = d.visits.values().collect();
                // newest first; later ids break ties between same-day visits
                visits.sort_by(|a, b| b.date.cmp(&a.date).then_with(|| b.visit_id.cmp(&a.visit_id)));
                let rows = visits
                    .into_iter()
                    .map(|v| VisitSummary {
                        visit_id: v.visit_id.clone(),
                        examination_type: v.examination_type,
                        date: v.date,
                        doctor_name: self
                            .relations
                            .doctor_name(&v.doctor_id)
                            .unwrap_or_else(|| v.doctor_id.to_string()),
                    })
                    .collect();
                let rid = d.record.record_id.to_string();
                Ok((
                    RecordOutput::Visits(rows),
                    effect("visits", &rid, AuditAction::View, "Visits Listed"),
                ))
            }),
            RecordOperation::CreateVisit => {
                let input: VisitInput = parse(payload)?;
                self.add_visit(patient, DoctorId::from(actor), input, now, gate)
                    .map(RecordOutput::Visit)
            }
            RecordOperation::UpdateVisit(id) => {
                let input: VisitInput = parse(payload)?;
                self.write(patient, now, gate, |d| {
                    let v = d
                        .visits
                        .get_mut(id)
                        .ok_or_else(|| Error::NotFound(format!("visit {id}")))?;
                    v.examination_type = input.examination_type;
                    v.date = input.date;
                    v.complaints = input.complaints;
                    v.symptoms = input.symptoms;
                    v.diagnosis = input.diagnosis;
                    v.treatments = input.treatments;
                    v.notes = input.notes;
                    v.vitals = input.vitals;
                    v.attachments = input.attachments;
                    Ok((
                        RecordOutput::Visit(id.clone()),
                        effect("visits", id.as_str(), AuditAction::Update, "Visit Updated"),
                    ))
                })
            }
            RecordOperation::DeleteVisit(id) => self.write(patient, now, gate, |d| {
                d.visits
                    .remove(id)
                    .ok_or_else(|| Error::NotFound(format!("visit {id}")))?;
                remove_id(&mut d.record.visit_ids, id);
                Ok((
                    RecordOutput::Deleted(id.to_string()),
                    effect("visits", id.as_str(), AuditAction::Delete, "Visit Deleted"),
                ))
            }),
            RecordOperation::CreateEntity(kind) => self.upsert_entity(patient, *kind, None, payload, now, gate),
            RecordOperation::UpdateEntity(kind, id) => self.upsert_entity(patient, *kind, Some(id), payload, now, gate),
            RecordOperation::DeleteEntity(kind, id) => self.delete_entity(patient, *kind, id, now, gate),
        }
    }

    pub fn create_record(&self, patient: &PatientId, now: i64, gate: CommitGate<'_>) -> Result<MedicalRecord> {
        if !self.relations.patient_exists(patient) {
            return Err(Error::NotFound(format!("patient {patient}")));
        }
        // the map's write lock makes check-then-insert atomic
        let mut map = self.docs.write().unwrap();
        if map.contains_key(patient) {
            return Err(Error::Conflict(format!("{patient} already has a medical record")));
        }
        let record = MedicalRecord {
            record_id: RecordId(self.ids.next("rec")),
            patient_id: patient.clone(),
            condition_ids: Vec::new(),
            medication_ids: Vec::new(),
            allergy_ids: Vec::new(),
            surgery_ids: Vec::new(),
            immunization_ids: Vec::new(),
            lifestyle: None,
            visit_ids: Vec::new(),
            version: 0,
            created_at: now,
            updated_at: now,
        };
        gate(&effect(
            "medical_records",
            record.record_id.as_str(),
            AuditAction::Create,
            "Medical Record Created",
        ))?;
        map.insert(patient.clone(), Arc::new(Mutex::new(PatientDocs::new(record.clone()))));
        Ok(record)
    }

    pub fn add_visit(
        &self,
        patient: &PatientId,
        doctor: DoctorId,
        input: VisitInput,
        now: i64,
        gate: CommitGate<'_>,
    ) -> Result<VisitId> {
        let id = VisitId(self.ids.next("vis"));
        self.write(patient, now, gate, |d| {
            let visit = Visit {
                visit_id: id.clone(),
                record_id: d.record.record_id.clone(),
                examination_type: input.examination_type,
                date: input.date,
                doctor_id: doctor,
                complaints: input.complaints,
                symptoms: input.symptoms,
                diagnosis: input.diagnosis,
                treatments: input.treatments,
                notes: input.notes,
                vitals: input.vitals,
                attachments: input.attachments,
                created_at: now,
            };
            d.visits.insert(id.clone(), visit);
            d.record.visit_ids.push(id.clone());
            Ok((
                id.clone(),
                effect("visits", id.as_str(), AuditAction::Create, "Visit Created"),
            ))
        })
    }

    /// Appends an attachment to the patient's most recent visit.
    pub fn attach_to_latest_visit(
        &self,
        patient: &PatientId,
        attachment: Attachment,
        reason: &str,
        now: i64,
        gate: CommitGate<'_>,
    ) -> Result<VisitId> {
        self.write(patient, now, gate, |d| {
            let latest = d
                .visits
                .values_mut()
                .max_by(|a, b| a.date.cmp(&b.date).then_with(|| a.visit_id.cmp(&b.visit_id)))
                .ok_or_else(|| Error::NotFound(format!("no visits for {patient}")))?;
            latest.attachments.push(attachment);
            let id = latest.visit_id.clone();
            Ok((id.clone(), effect("visits", id.as_str(), AuditAction::Update, reason)))
        })
    }

    pub fn visit(&self, patient: &PatientId, visit: &VisitId) -> Option<Visit> {
        let slot = self.slot(patient).ok()?;
        let docs = slot.lock().unwrap();
        docs.visits.get(visit).cloned()
    }

    fn upsert_entity(
        &self,
        patient: &PatientId,
        kind: EntityKind,
        existing: Option<&EntityId>,
        payload: &Value,
        now: i64,
        gate: CommitGate<'_>,
    ) -> Result<RecordOutput> {
        let id = match existing {
            Some(id) => id.clone(),
            None if kind == EntityKind::Lifestyle => EntityId::from("lifestyle"),
            None => EntityId(self.ids.next(kind.id_prefix())),
        };
        let action = if existing.is_some() {
            AuditAction::Update
        } else {
            AuditAction::Create
        };

        macro_rules! put {
            ($d:ident, $coll:ident, $ids:ident, $value:expr) => {{
                if existing.is_some() {
                    if !$d.$coll.contains_key(&id) {
                        return Err(Error::NotFound(format!("{} {id}", kind.schema())));
                    }
                } else {
                    $d.record.$ids.push(id.clone());
                }
                $d.$coll.insert(id.clone(), $value);
            }};
        }

        let effect = effect(
            kind.collection(),
            id.as_str(),
            action,
            verb_reason(kind.label(), action),
        );
        match kind {
            EntityKind::Condition => {
                let i: ConditionInput = parse(payload)?;
                self.write(patient, now, gate, |d| {
                    let rid = d.record.record_id.clone();
                    put!(
                        d,
                        conditions,
                        condition_ids,
                        Condition {
                            condition_id: id.clone(),
                            record_id: rid,
                            name: i.name,
                            chronic: i.chronic,
                            onset_date: i.onset_date,
                            notes: i.notes,
                        }
                    );
                    Ok((RecordOutput::Entity(id.clone()), effect))
                })
            }
            EntityKind::Medication => {
                let i: MedicationInput = parse(payload)?;
                self.write(patient, now, gate, |d| {
                    let rid = d.record.record_id.clone();
                    put!(
                        d,
                        medications,
                        medication_ids,
                        Medication {
                            medication_id: id.clone(),
                            record_id: rid,
                            name: i.name,
                            dosage: i.dosage,
                            frequency: i.frequency,
                            active: i.active,
                            start_date: i.start_date,
                            end_date: i.end_date,
                        }
                    );
                    Ok((RecordOutput::Entity(id.clone()), effect))
                })
            }
            EntityKind::Allergy => {
                let i: AllergyInput = parse(payload)?;
                self.write(patient, now, gate, |d| {
                    let rid = d.record.record_id.clone();
                    put!(
                        d,
                        allergies,
                        allergy_ids,
                        Allergy {
                            allergy_id: id.clone(),
                            record_id: rid,
                            allergen: i.allergen,
                            category: i.category,
                            severity: i.severity,
                        }
                    );
                    Ok((RecordOutput::Entity(id.clone()), effect))
                })
            }
            EntityKind::Surgery => {
                let i: SurgeryInput = parse(payload)?;
                self.write(patient, now, gate, |d| {
                    let rid = d.record.record_id.clone();
                    put!(
                        d,
                        surgeries,
                        surgery_ids,
                        Surgery {
                            surgery_id: id.clone(),
                            record_id: rid,
                            name: i.name,
                            date: i.date,
                            outcome: i.outcome,
                        }
                    );
                    Ok((RecordOutput::Entity(id.clone()), effect))
                })
            }
            EntityKind::Immunization => {
                let i: ImmunizationInput = parse(payload)?;
                self.write(patient, now, gate, |d| {
                    let rid = d.record.record_id.clone();
                    put!(
                        d,
                        immunizations,
                        immunization_ids,
                        Immunization {
                            immunization_id: id.clone(),
                            record_id: rid,
                            vaccine: i.vaccine,
                            date: i.date,
                        }
                    );
                    Ok((RecordOutput::Entity(id.clone()), effect))
                })
            }
            EntityKind::Lifestyle => {
                let i: LifestyleInput = parse(payload)?;
                self.write(patient, now, gate, |d| {
                    if existing.is_some() && d.record.lifestyle.is_none() {
                        return Err(Error::NotFound("lifestyle".into()));
                    }
                    d.record.lifestyle = Some(Lifestyle {
                        smoking: i.smoking,
                        alcohol: i.alcohol,
                        exercise: i.exercise,
                        updated_at: now,
                    });
                    Ok((RecordOutput::Entity(id.clone()), effect))
                })
            }
        }
    }

    fn delete_entity(
        &self,
        patient: &PatientId,
        kind: EntityKind,
        id: &EntityId,
        now: i64,
        gate: CommitGate<'_>,
    ) -> Result<RecordOutput> {
        let missing = || Error::NotFound(format!("{} {id}", kind.schema()));
        self.write(patient, now, gate, |d| {
            let found = match kind {
                EntityKind::Condition => d.conditions.remove(id).is_some(),
                EntityKind::Medication => d.medications.remove(id).is_some(),
                EntityKind::Allergy => d.allergies.remove(id).is_some(),
                EntityKind::Surgery => d.surgeries.remove(id).is_some(),
                EntityKind::Immunization => d.immunizations.remove(id).is_some(),
                EntityKind::Lifestyle => d.record.lifestyle.take().is_some(),
            };
            if !found {
                return Err(missing());
            }
            let r = &mut d.record;
            match kind {
                EntityKind::Condition => remove_id(&mut r.condition_ids, id),
                EntityKind::Medication => remove_id(&mut r.medication_ids, id),
                EntityKind::Allergy => remove_id(&mut r.allergy_ids, id),
                EntityKind::Surgery => remove_id(&mut r.surgery_ids, id),
                EntityKind::Immunization => remove_id(&mut r.immunization_ids, id),
                EntityKind::Lifestyle => {}
            }
            Ok((
                RecordOutput::Deleted(id.to_string()),
                effect(
                    kind.collection(),
                    id.as_str(),
                    AuditAction::Delete,
                    verb_reason(kind.label(), AuditAction::Delete),
                ),
            ))
        })
    }

    fn read<T>(
        &self,
        patient: &PatientId,
        gate: CommitGate<'_>,
        f: impl FnOnce(&PatientDocs) -> Result<(T, Effect)>,
    ) -> Result<T> {
        let slot = self.slot(patient)?;
        let docs = slot.lock().unwrap();
        let (out, eff) = f(&docs)?;
        drop(docs);
        gate(&eff)?;
        Ok(out)
    }

    fn write<T>(
        &self,
        patient: &PatientId,
        now: i64,
        gate: CommitGate<'_>,
        f: impl FnOnce(&mut PatientDocs) -> Result<(T, Effect)>,
    ) -> Result<T> {
        let slot = self.slot(patient)?;
        let mut docs = slot.lock().unwrap();
        let mut draft = docs.clone();
        let (out, eff) = f(&mut draft)?;
        draft.record.version += 1;
        draft.record.updated_at = draft.record.updated_at.max(now);
        gate(&eff)?;
        *docs = draft;
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
