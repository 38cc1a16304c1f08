//! Append-only audit trail.
//!
//! There is no update or delete path: the log exposes `append`, queries,
//! a tamper-evidence hash over any prefix, and an advisory retention check.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Months};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::clock::Clock;
use crate::identity::{scopes, PrincipalClaims, Role};
use crate::ids::PatientId;
use crate::pipeline::Layer;
use crate::time::iso;
use crate::{Error, ErrorKind, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AuditAction {
    View,
    Create,
    Update,
    Delete,
}

impl AuditAction {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditAction::View => "VIEW",
            AuditAction::Create => "CREATE",
            AuditAction::Update => "UPDATE",
            AuditAction::Delete => "DELETE",
        }
    }
}

impl fmt::Display for AuditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AuditAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "VIEW" => Ok(AuditAction::View),
            "CREATE" => Ok(AuditAction::Create),
            "UPDATE" => Ok(AuditAction::Update),
            "DELETE" => Ok(AuditAction::Delete),
            other => Err(Error::field(
                "action",
                format!("{other:?} is not one of VIEW, CREATE, UPDATE, DELETE"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessType {
    Regular,
    Emergency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AuditStatus {
    Success,
    Failure,
}

/// One immutable audit record. The actor field is `actor_id` rather than
/// `doctor_id` because patients, admins and services act too.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub entry_id: String,
    pub sequence: u64,
    pub collection_name: String,
    pub document_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<PatientId>,
    pub action: AuditAction,
    pub actor_id: String,
    pub ip_address: String,
    pub user_agent: String,
    pub reason: String,
    pub access_type: AccessType,
    pub status: AuditStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_layer: Option<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<ErrorKind>,
    #[serde(with = "iso")]
    pub created_at: i64,
    #[serde(with = "iso")]
    pub updated_at: i64,
    pub version: u32,
}

/// Everything the caller supplies; the log fills in id, sequence and times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditDraft {
    pub collection_name: String,
    pub document_id: String,
    #[serde(default)]
    pub patient_id: Option<PatientId>,
    pub action: AuditAction,
    pub actor_id: String,
    #[serde(default)]
    pub ip_address: String,
    #[serde(default)]
    pub user_agent: String,
    pub reason: String,
    #[serde(default = "regular")]
    pub access_type: AccessType,
    pub status: AuditStatus,
    #[serde(default)]
    pub failed_layer: Option<Layer>,
    #[serde(default)]
    pub error_kind: Option<ErrorKind>,
}

fn regular() -> AccessType {
    AccessType::Regular
}

/// Durable backing for the log. `append` must not return until the entry
/// is durable.
pub trait AuditStore: Send + Sync {
    fn append(&self, entry: &AuditEntry) -> Result<()>;
    fn load(&self) -> Result<Vec<AuditEntry>>;
}

#[derive(Default)]
pub struct MemoryAuditStore;

impl AuditStore for MemoryAuditStore {
    fn append(&self, _entry: &AuditEntry) -> Result<()> {
        Ok(())
    }

    fn load(&self) -> Result<Vec<AuditEntry>> {
        Ok(Vec::new())
    }
}

/// Newline-delimited JSON file, synced after every append.
pub struct FileAuditStore {
    path: PathBuf,
    file: Mutex<File>,
}

impl FileAuditStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::Internal(format!("open audit file {}: {e}", path.display())))?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }
}

impl AuditStore for FileAuditStore {
    fn append(&self, entry: &AuditEntry) -> Result<()> {
        let mut line = serde_json::to_vec(entry).map_err(|e| Error::Internal(e.to_string()))?;
        line.push(b'\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(&line)
            .and_then(|_| f.sync_data())
            .map_err(|e| Error::Internal(format!("audit write: {e}")))
    }

    fn load(&self) -> Result<Vec<AuditEntry>> {
        let f = File::open(&self.path).map_err(|e| Error::Internal(format!("audit read: {e}")))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::Internal(format!("audit read: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry =
                serde_json::from_str(&line).map_err(|e| Error::Internal(format!("audit file line {}: {e}", i + 1)))?;
            out.push(entry);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFilter {
    pub actor_id: Option<String>,
    pub patient_id: Option<PatientId>,
    pub document_id: Option<String>,
    pub action: Option<AuditAction>,
    /// Inclusive lower bound on `created_at`.
    pub from: Option<i64>,
    /// Exclusive upper bound on `created_at`.
    pub to: Option<i64>,
}

impl AuditFilter {
    pub fn matches(&self, e: &AuditEntry) -> bool {
        self.actor_id.as_ref().is_none_or(|a| &e.actor_id == a)
            && self
                .patient_id
                .as_ref()
                .is_none_or(|p| e.patient_id.as_ref() == Some(p))
            && self.document_id.as_ref().is_none_or(|d| &e.document_id == d)
            && self.action.is_none_or(|a| e.action == a)
            && self.from.is_none_or(|f| e.created_at >= f)
            && self.to.is_none_or(|t| e.created_at < t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub offset: usize,
    pub limit: usize,
}

impl Default for Page {
    fn default() -> Self {
        Self { offset: 0, limit: 100 }
    }
}

pub const DEFAULT_RETENTION_YEARS: u32 = 5;

pub struct AuditLog {
    entries: RwLock<Vec<AuditEntry>>,
    // single ordering point for appends
    append_gate: Mutex<()>,
    store: Box<dyn AuditStore>,
    clock: Arc<dyn Clock>,
    retention_years: u32,
}

impl AuditLog {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self::with_store(Box::new(MemoryAuditStore), clock).expect("memory store cannot fail to load")
    }

    /// Opens a log over `store`, replaying whatever it already holds.
    pub fn with_store(store: Box<dyn AuditStore>, clock: Arc<dyn Clock>) -> Result<Self> {
        let existing = store.load()?;
        Ok(Self {
            entries: RwLock::new(existing),
            append_gate: Mutex::new(()),
            store,
            clock,
            retention_years: DEFAULT_RETENTION_YEARS,
        })
    }

    pub fn with_retention_years(mut self, years: u32) -> Self {
        self.retention_years = years;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends an entry stamped with the log's clock.
    pub fn append(&self, draft: AuditDraft) -> Result<AuditEntry> {
        let now = self.clock.now();
        self.append_at(draft, now)
    }

    /// Appends with an explicit creation time (imports, fixtures).
    pub fn append_at(&self, draft: AuditDraft, created_at: i64) -> Result<AuditEntry> {
        let _turn = self.append_gate.lock().unwrap();
        let sequence = self.entries.read().unwrap().last().map_or(1, |e| e.sequence + 1);
        let entry = AuditEntry {
            entry_id: format!("aud-{sequence:08}"),
            sequence,
            collection_name: draft.collection_name,
            document_id: draft.document_id,
            patient_id: draft.patient_id,
            action: draft.action,
            actor_id: draft.actor_id,
            ip_address: draft.ip_address,
            user_agent: draft.user_agent,
            reason: draft.reason,
            access_type: draft.access_type,
            status: draft.status,
            failed_layer: draft.failed_layer,
            error_kind: draft.error_kind,
            created_at,
            updated_at: created_at,
            version: 0,
        };
        self.store.append(&entry)?;
        self.entries.write().unwrap().push(entry.clone());
        Ok(entry)
    }

    /// Appends from an untyped document, rejecting anything outside the
    /// closed vocabularies.
    pub fn append_document(&self, doc: &Value) -> Result<AuditEntry> {
        if let Some(a) = doc.get("action").and_then(Value::as_str) {
            a.parse::<AuditAction>()?;
        }
        let draft: AuditDraft = serde_json::from_value(doc.clone()).map_err(|e| Error::field("$", e.to_string()))?;
        self.append(draft)
    }

    /// Admin users and services holding `audit:read` may query.
    pub fn authorize_reader(claims: &PrincipalClaims) -> Result<()> {
        let ok = if claims.is_service() {
            claims.has_scope(scopes::AUDIT_READ)
        } else {
            claims.has_role(Role::Admin)
        };
        if ok {
            Ok(())
        } else {
            Err(Error::insufficient_permissions())
        }
    }

    pub fn query(&self, claims: &PrincipalClaims, filter: &AuditFilter, page: Page) -> Result<Vec<AuditEntry>> {
        Self::authorize_reader(claims)?;
        Ok(self.select(filter, page))
    }

    /// Unchecked query for internal use.
    pub fn select(&self, filter: &AuditFilter, page: Page) -> Vec<AuditEntry> {
        self.entries
            .read()
            .unwrap()
            .iter()
            .filter(|e| filter.matches(e))
            .skip(page.offset)
            .take(page.limit)
            .cloned()
            .collect()
    }

    pub fn snapshot(&self) -> Vec<AuditEntry> {
        self.entries.read().unwrap().clone()
    }

    /// Hex SHA-256 chain over the first `prefix` entries:
    /// `h0 = 0^32`, `h_i = SHA256(h_{i-1} || json(entry_i))`.
    pub fn stream_hash(&self, prefix: usize) -> String {
        let entries = self.entries.read().unwrap();
        chain_hash(&entries[..prefix.min(entries.len())])
    }

    /// Entries old enough to archive. Advisory only: nothing is removed.
    pub fn retention_check(&self, now: i64) -> Vec<AuditEntry> {
        let Some(cutoff) = retention_cutoff(now, self.retention_years) else {
            return Vec::new();
        };
        self.entries
            .read()
            .unwrap()
            .iter()
            .filter(|e| e.created_at < cutoff)
            .cloned()
            .collect()
    }

    /// Writes the full stream as newline-delimited JSON.
    pub fn export_ndjson(&self, mut out: impl Write) -> std::io::Result<()> {
        for e in self.entries.read().unwrap().iter() {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// The instant `years` calendar years before `now`. Entries created strictly
/// before it are past the horizon.
pub fn retention_cutoff(now: i64, years: u32) -> Option<i64> {
    let t = DateTime::from_timestamp(now, 0)?;
    t.checked_sub_months(Months::new(years.checked_mul(12)?))
        .map(|d| d.timestamp())
}

pub fn chain_hash(entries: &[AuditEntry]) -> String {
    let mut h = [0u8; 32];
    for e in entries {
        let mut d = Sha256::new();
        d.update(h);
        d.update(serde_json::to_vec(e).expect("audit entries serialize"));
        h = d.finalize().into();
    }
    h.iter().map(|b| format!("{b:02x}")).collect()
}
