use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Upstream {
    IdentityAccess,
    UserDirectory,
    PatientRecords,
    AiOrchestrator,
    AuditLog,
}

impl Upstream {
    pub fn name(self) -> &'static str {
        match self {
            Upstream::IdentityAccess => "identity-access",
            Upstream::UserDirectory => "user-directory",
            Upstream::PatientRecords => "patient-records",
            Upstream::AiOrchestrator => "ai-orchestrator",
            Upstream::AuditLog => "audit-log",
        }
    }
}

/// Path prefixes in match order. A prefix matches the path itself or any
/// path continuing with `/`.
pub const ROUTES: &[(&str, Upstream)] = &[
    ("/auth", Upstream::IdentityAccess),
    ("/api/auth", Upstream::IdentityAccess),
    ("/api/user", Upstream::UserDirectory),
    ("/api/admissions", Upstream::UserDirectory),
    ("/api/patients", Upstream::UserDirectory),
    ("/api/doctors", Upstream::UserDirectory),
    ("/api/requests", Upstream::UserDirectory),
    ("/api/examinations", Upstream::UserDirectory),
    ("/api/hospitals", Upstream::UserDirectory),
    ("/api/contacts", Upstream::UserDirectory),
    ("/api/records", Upstream::PatientRecords),
    ("/api/ai", Upstream::AiOrchestrator),
    ("/chat", Upstream::AiOrchestrator),
    ("/chats", Upstream::AiOrchestrator),
    ("/api/audit", Upstream::AuditLog),
];

/// Upstream service for a request path, or `None` for unknown paths.
pub fn route(path: &str) -> Option<Upstream> {
    ROUTES.iter().find_map(|(prefix, up)| {
        let rest = path.strip_prefix(prefix)?;
        (rest.is_empty() || rest.starts_with('/')).then_some(*up)
    })
}
