use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::ids::*;
use crate::time::iso;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedicalRecord {
    pub record_id: RecordId,
    pub patient_id: PatientId,
    pub condition_ids: Vec<EntityId>,
    pub medication_ids: Vec<EntityId>,
    pub allergy_ids: Vec<EntityId>,
    pub surgery_ids: Vec<EntityId>,
    pub immunization_ids: Vec<EntityId>,
    pub lifestyle: Option<Lifestyle>,
    pub visit_ids: Vec<VisitId>,
    /// Incremented on every mutation; AI outputs remember the version they
    /// were derived from.
    pub version: u64,
    #[serde(with = "iso")]
    pub created_at: i64,
    #[serde(with = "iso")]
    pub updated_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub condition_id: EntityId,
    pub record_id: RecordId,
    pub name: String,
    pub chronic: bool,
    pub onset_date: Option<NaiveDate>,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Medication {
    pub medication_id: EntityId,
    pub record_id: RecordId,
    pub name: String,
    pub dosage: String,
    pub frequency: String,
    pub active: bool,
    pub start_date: Option<NaiveDate>,
    pub end_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllergyCategory {
    Drug,
    Food,
    Environmental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allergy {
    pub allergy_id: EntityId,
    pub record_id: RecordId,
    pub allergen: String,
    pub category: AllergyCategory,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Surgery {
    pub surgery_id: EntityId,
    pub record_id: RecordId,
    pub name: String,
    pub date: NaiveDate,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Immunization {
    pub immunization_id: EntityId,
    pub record_id: RecordId,
    pub vaccine: String,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoking {
    Never,
    Former,
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alcohol {
    None,
    Occasional,
    Regular,
}

/// Singleton sub-document of the record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lifestyle {
    pub smoking: Smoking,
    pub alcohol: Alcohol,
    pub exercise: String,
    #[serde(with = "iso")]
    pub updated_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExaminationType {
    Routine,
    FollowUp,
    Emergency,
}

impl ExaminationType {
    pub fn label(self) -> &'static str {
        match self {
            ExaminationType::Routine => "routine",
            ExaminationType::FollowUp => "follow_up",
            ExaminationType::Emergency => "emergency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Treatment {
    pub name: String,
    #[serde(default)]
    pub dosage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentKind {
    LabResult,
    XrayImage,
    Report,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub kind: AttachmentKind,
    pub storage_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub visit_id: VisitId,
    pub record_id: RecordId,
    pub examination_type: ExaminationType,
    pub date: NaiveDate,
    pub doctor_id: DoctorId,
    pub complaints: String,
    pub symptoms: Vec<String>,
    pub diagnosis: String,
    pub treatments: Vec<Treatment>,
    pub notes: String,
    pub vitals: BTreeMap<String, Measurement>,
    pub attachments: Vec<Attachment>,
    #[serde(with = "iso")]
    pub created_at: i64,
}

/// Row of the patient's examination list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitSummary {
    pub visit_id: VisitId,
    pub examination_type: ExaminationType,
    pub date: NaiveDate,
    pub doctor_name: String,
}

/// A record with every referenced entity resolved, in reference order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRecord {
    pub record: MedicalRecord,
    pub conditions: Vec<Condition>,
    pub medications: Vec<Medication>,
    pub allergies: Vec<Allergy>,
    pub surgeries: Vec<Surgery>,
    pub immunizations: Vec<Immunization>,
    pub visits: Vec<Visit>,
}

// ----- inputs (validated payloads) ---------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisitInput {
    pub examination_type: ExaminationType,
    pub date: NaiveDate,
    #[serde(default)]
    pub complaints: String,
    #[serde(default)]
    pub symptoms: Vec<String>,
    pub diagnosis: String,
    #[serde(default)]
    pub treatments: Vec<Treatment>,
    #[serde(default)]
    pub notes: String,
    #[serde(default)]
    pub vitals: BTreeMap<String, Measurement>,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionInput {
    pub name: String,
    pub chronic: bool,
    #[serde(default)]
    pub onset_date: Option<NaiveDate>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedicationInput {
    pub name: String,
    pub dosage: String,
    pub frequency: String,
    pub active: bool,
    #[serde(default)]
    pub start_date: Option<NaiveDate>,
    #[serde(default)]
    pub end_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllergyInput {
    pub allergen: String,
    pub category: AllergyCategory,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurgeryInput {
    pub name: String,
    pub date: NaiveDate,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImmunizationInput {
    pub vaccine: String,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifestyleInput {
    pub smoking: Smoking,
    pub alcohol: Alcohol,
    pub exercise: String,
}

/// Sub-collections of a record addressable by `PUT/DELETE .../{kind}/{id}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Allergy,
    Condition,
    Medication,
    Surgery,
    Immunization,
    Lifestyle,
}

impl EntityKind {
    pub const ALL: [EntityKind; 6] = [
        EntityKind::Allergy,
        EntityKind::Condition,
        EntityKind::Medication,
        EntityKind::Surgery,
        EntityKind::Immunization,
        EntityKind::Lifestyle,
    ];

    /// Collection name as used in URLs and audit entries.
    pub fn collection(self) -> &'static str {
        match self {
            EntityKind::Allergy => "allergies",
            EntityKind::Condition => "conditions",
            EntityKind::Medication => "medications",
            EntityKind::Surgery => "surgeries",
            EntityKind::Immunization => "immunizations",
            EntityKind::Lifestyle => "lifestyle",
        }
    }

    pub fn schema(self) -> &'static str {
        match self {
            EntityKind::Allergy => "allergy",
            EntityKind::Condition => "condition",
            EntityKind::Medication => "medication",
            EntityKind::Surgery => "surgery",
            EntityKind::Immunization => "immunization",
            EntityKind::Lifestyle => "lifestyle",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EntityKind::Allergy => "Allergy",
            EntityKind::Condition => "Condition",
            EntityKind::Medication => "Medication",
            EntityKind::Surgery => "Surgery",
            EntityKind::Immunization => "Immunization",
            EntityKind::Lifestyle => "Lifestyle",
        }
    }

    pub(crate) fn id_prefix(self) -> &'static str {
        match self {
            EntityKind::Allergy => "alg",
            EntityKind::Condition => "cnd",
            EntityKind::Medication => "med",
            EntityKind::Surgery => "srg",
            EntityKind::Immunization => "imm",
            EntityKind::Lifestyle => "lfs",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.collection())
    }
}

impl FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityKind::ALL
            .into_iter()
            .find(|k| k.collection() == s || k.schema() == s)
            .ok_or_else(|| format!("unknown record collection {s:?}"))
    }
}
