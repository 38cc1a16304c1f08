use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Patient,
    Doctor,
    Admin,
    Service,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Patient => "patient",
            Role::Doctor => "doctor",
            Role::Admin => "admin",
            Role::Service => "service",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "patient" => Ok(Role::Patient),
            "doctor" => Ok(Role::Doctor),
            "admin" => Ok(Role::Admin),
            "service" => Ok(Role::Service),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// Closed permission vocabulary. Wire names are the camelCase variant names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Permission {
    // clinical (doctor)
    CreateAllergy,
    CreateCondition,
    CreateMedication,
    CreateRecord,
    CreateSurgery,
    CreateVisit,
    DeleteAllergy,
    DeleteCondition,
    DeleteMedication,
    DeleteSurgery,
    DeleteVisit,
    GetRecord,
    GetVisit,
    UpdateAllergy,
    UpdateCondition,
    UpdateMedication,
    UpdateSurgery,
    UpdateVisit,
    // patient self-service
    GetOwnRecord,
    RequestDataAddition,
    RequestExamination,
    // admission management (admin)
    AdmitPatient,
    DischargePatient,
    RegisterPatient,
    RegisterDoctor,
}

use Permission::*;

const DOCTOR_PERMISSIONS: [Permission; 18] = [
    CreateAllergy,
    CreateCondition,
    CreateMedication,
    CreateRecord,
    CreateSurgery,
    CreateVisit,
    DeleteAllergy,
    DeleteCondition,
    DeleteMedication,
    DeleteSurgery,
    DeleteVisit,
    GetRecord,
    GetVisit,
    UpdateAllergy,
    UpdateCondition,
    UpdateMedication,
    UpdateSurgery,
    UpdateVisit,
];

const PATIENT_PERMISSIONS: [Permission; 3] = [GetOwnRecord, RequestDataAddition, RequestExamination];

const ADMIN_PERMISSIONS: [Permission; 4] = [AdmitPatient, DischargePatient, RegisterPatient, RegisterDoctor];

impl Permission {
    pub const ALL: [Permission; 25] = [
        CreateAllergy,
        CreateCondition,
        CreateMedication,
        CreateRecord,
        CreateSurgery,
        CreateVisit,
        DeleteAllergy,
        DeleteCondition,
        DeleteMedication,
        DeleteSurgery,
        DeleteVisit,
        GetRecord,
        GetVisit,
        UpdateAllergy,
        UpdateCondition,
        UpdateMedication,
        UpdateSurgery,
        UpdateVisit,
        GetOwnRecord,
        RequestDataAddition,
        RequestExamination,
        AdmitPatient,
        DischargePatient,
        RegisterPatient,
        RegisterDoctor,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Permission {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| format!("unknown permission {s:?}"))
    }
}

/// The permission set granted to a role. Service principals get none; they
/// act through scopes.
pub fn role_permissions(role: Role) -> BTreeSet<Permission> {
    match role {
        Role::Doctor => DOCTOR_PERMISSIONS.into_iter().collect(),
        Role::Patient => PATIENT_PERMISSIONS.into_iter().collect(),
        Role::Admin => ADMIN_PERMISSIONS.into_iter().collect(),
        Role::Service => BTreeSet::new(),
    }
}

/// Well-known service scopes.
pub mod scopes {
    pub const RECORD_READ: &str = "record:read";
    pub const RECORD_WRITE: &str = "record:write";
    pub const AUDIT_READ: &str = "audit:read";
    pub const REPORT_GENERATE: &str = "report:generate";
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doctor_set_has_eighteen_clinical_permissions() {
        let p = role_permissions(Role::Doctor);
        assert_eq!(p.len(), 18);
        for name in ["createVisit", "getRecord", "updateMedication", "deleteVisit"] {
            assert!(p.contains(&name.parse().unwrap()), "{name}");
        }
    }

    #[test]
    fn patient_cannot_create_visits() {
        let p = role_permissions(Role::Patient);
        assert!(!p.contains(&CreateVisit));
        assert!(p.contains(&GetOwnRecord));
    }

    #[test]
    fn admin_has_no_clinical_permissions() {
        let admin = role_permissions(Role::Admin);
        assert!(admin.is_disjoint(&role_permissions(Role::Doctor)));
        assert!(admin.is_disjoint(&role_permissions(Role::Patient)));
    }

    #[test]
    fn names_round_trip() {
        for p in Permission::ALL {
            assert_eq!(p.name().parse::<Permission>().unwrap(), p);
        }
        assert_eq!(CreateVisit.name(), "createVisit");
        assert!("purgeEverything".parse::<Permission>().is_err());
    }
}
