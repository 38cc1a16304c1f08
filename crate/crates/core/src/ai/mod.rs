//! AI workflows over pluggable generator and classifier clients: history
//! summaries, doctor chat sessions, visit reports, and X-ray triage.

mod clients;
mod prompts;
mod report;
mod text;
mod xray;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

pub use clients::*;
pub use prompts::PromptSet;
pub use report::{MedicalReport, PageBlock, PageLayout, ReportLayout, ReportSection, SectionKey};
pub use text::serialize_record_to_text;
pub use xray::{encode_pixel_data, prepare_image, ImageFormatTag};

use crate::blob::BlobStore;
use crate::clock::Clock;
use crate::directory::PatientProfile;
use crate::gateway::{summary_key, TtlCache};
use crate::identity::{scopes, PrincipalClaims, Role};
use crate::ids::*;
use crate::records::ResolvedRecord;
use crate::time::{iso, iso_opt};
use crate::{Error, Result};

/// Where the summarizer gets records from. The platform implementation goes
/// through the security pipeline with a machine token.
pub trait RecordSource: Send + Sync {
    fn fetch_record(&self, patient: &PatientId) -> Result<ResolvedRecord>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryResult {
    pub patient_id: PatientId,
    pub summary_text: String,
    #[serde(with = "iso")]
    pub generated_at: i64,
    pub source_record_version: u64,
    pub prompt_version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnAuthor {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub author: TurnAuthor,
    pub content: String,
    #[serde(with = "iso")]
    pub at: i64,
}

impl Turn {
    fn as_message(&self) -> ChatMessage {
        match self.author {
            TurnAuthor::User => ChatMessage::user(self.content.clone()),
            TurnAuthor::Assistant => ChatMessage::assistant(self.content.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationLog {
    pub conversation_id: ConversationId,
    pub doctor_id: DoctorId,
    pub system_role: String,
    pub turns: Vec<Turn>,
    #[serde(with = "iso")]
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationSummary {
    pub conversation_id: ConversationId,
    pub first_turn_preview: String,
    #[serde(with = "iso")]
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub conversation_id: ConversationId,
    pub bot_reply: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewVerdict {
    Pending,
    Confirmed,
    Modified,
    Overridden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XrayResult {
    pub result_id: XrayResultId,
    pub patient_id: PatientId,
    pub image_ref: String,
    pub label: XrayLabel,
    pub confidence: f64,
    pub reviewer_verdict: ReviewVerdict,
    pub reviewer_id: Option<DoctorId>,
    pub final_label: Option<XrayLabel>,
    #[serde(with = "iso")]
    pub created_at: i64,
    #[serde(with = "iso_opt", default)]
    pub reviewed_at: Option<i64>,
}

const PREVIEW_CHARS: usize = 80;

fn require_doctor(claims: &PrincipalClaims) -> Result<DoctorId> {
    if claims.has_role(Role::Doctor) && !claims.is_service() {
        Ok(DoctorId::from(claims.subject.as_str()))
    } else {
        Err(Error::Forbidden("only doctors may use this workflow".into()))
    }
}

fn require_input(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(Error::field("user_input", "must not be empty"))
    } else {
        Ok(())
    }
}

pub struct AiService {
    generator: Arc<dyn GeneratorClient>,
    classifier: Arc<dyn ClassifierClient>,
    prompts: PromptSet,
    cache: Arc<TtlCache>,
    blobs: Arc<dyn BlobStore>,
    clock: Arc<dyn Clock>,
    ids: IdGen,
    conversations: RwLock<HashMap<ConversationId, Arc<Mutex<ConversationLog>>>>,
    summaries: RwLock<HashMap<PatientId, SummaryResult>>,
    reports: RwLock<BTreeMap<ReportId, MedicalReport>>,
    xrays: RwLock<BTreeMap<XrayResultId, XrayResult>>,
}

impl AiService {
    pub fn new(
        generator: Arc<dyn GeneratorClient>,
        classifier: Arc<dyn ClassifierClient>,
        prompts: PromptSet,
        cache: Arc<TtlCache>,
        blobs: Arc<dyn BlobStore>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            generator,
            classifier,
            prompts,
            cache,
            blobs,
            clock,
            ids: IdGen::new(),
            conversations: RwLock::default(),
            summaries: RwLock::default(),
            reports: RwLock::default(),
            xrays: RwLock::default(),
        }
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    // ----- summarization ------------------------------------------------

    /// Summarizes a patient's history. Cached per patient and reused while
    /// the record version is unchanged.
    pub fn summarize_history(
        &self,
        claims: &PrincipalClaims,
        patient: &PatientId,
        source: &dyn RecordSource,
    ) -> Result<SummaryResult> {
        if !(claims.is_service() && claims.has_scope(scopes::RECORD_READ)) {
            return Err(Error::insufficient_permissions());
        }
        let record = source.fetch_record(patient)?;
        let key = summary_key(patient.as_str());
        if let Some(bytes) = self.cache.get(&key) {
            if let Ok(hit) = serde_json::from_slice::<SummaryResult>(&bytes) {
                if hit.source_record_version == record.record.version && hit.prompt_version == self.prompts.version {
                    return Ok(hit);
                }
            }
        }
        let text = serialize_record_to_text(&record);
        let summary_text = self
            .generator
            .generate(&self.prompts.summarizer, &[ChatMessage::user(text)])?;
        let result = SummaryResult {
            patient_id: patient.clone(),
            summary_text,
            generated_at: self.clock.now(),
            source_record_version: record.record.version,
            prompt_version: self.prompts.version,
        };
        let bytes = serde_json::to_vec(&result).map_err(|e| Error::Internal(e.to_string()))?;
        self.cache.put_default(&key, bytes)?;
        self.summaries.write().unwrap().insert(patient.clone(), result.clone());
        Ok(result)
    }

    pub fn latest_summary(&self, patient: &PatientId) -> Option<SummaryResult> {
        self.summaries.read().unwrap().get(patient).cloned()
    }

    // ----- chat ---------------------------------------------------------

    pub fn chat_initiate(&self, claims: &PrincipalClaims, user_input: &str) -> Result<ChatReply> {
        let doctor = require_doctor(claims)?;
        require_input(user_input)?;
        let messages = [ChatMessage::user(user_input)];
        let reply = self.generator.generate(&self.prompts.chatbot, &messages)?;
        let now = self.clock.now();
        let id = ConversationId(self.ids.next("conv"));
        let log = ConversationLog {
            conversation_id: id.clone(),
            doctor_id: doctor,
            system_role: self.prompts.chatbot.clone(),
            turns: vec![
                Turn {
                    author: TurnAuthor::User,
                    content: user_input.to_owned(),
                    at: now,
                },
                Turn {
                    author: TurnAuthor::Assistant,
                    content: reply.clone(),
                    at: now,
                },
            ],
            created_at: now,
        };
        self.conversations
            .write()
            .unwrap()
            .insert(id.clone(), Arc::new(Mutex::new(log)));
        Ok(ChatReply {
            conversation_id: id,
            bot_reply: reply,
        })
    }

    fn owned_conversation(&self, claims: &PrincipalClaims, id: &ConversationId) -> Result<Arc<Mutex<ConversationLog>>> {
        let doctor = require_doctor(claims)?;
        let conv = self
            .conversations
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("conversation {id}")))?;
        if conv.lock().unwrap().doctor_id != doctor {
            return Err(Error::Forbidden("conversation belongs to another doctor".into()));
        }
        Ok(conv)
    }

    /// Sends the whole prior history plus the new question. Calls on one
    /// conversation are serialized by its lock.
    pub fn chat_continue(&self, claims: &PrincipalClaims, id: &ConversationId, user_input: &str) -> Result<String> {
        let conv = self.owned_conversation(claims, id)?;
        require_input(user_input)?;
        let mut log = conv.lock().unwrap();
        let mut messages: Vec<ChatMessage> = log.turns.iter().map(Turn::as_message).collect();
        messages.push(ChatMessage::user(user_input));
        let reply = self.generator.generate(&log.system_role, &messages)?;
        let now = self.clock.now();
        log.turns.push(Turn {
            author: TurnAuthor::User,
            content: user_input.to_owned(),
            at: now,
        });
        log.turns.push(Turn {
            author: TurnAuthor::Assistant,
            content: reply.clone(),
            at: now,
        });
        Ok(reply)
    }

    pub fn list_conversations(&self, claims: &PrincipalClaims) -> Result<Vec<ConversationSummary>> {
        let doctor = require_doctor(claims)?;
        let convs: Vec<_> = self.conversations.read().unwrap().values().cloned().collect();
        let mut out: Vec<ConversationSummary> = convs
            .iter()
            .filter_map(|c| {
                let log = c.lock().unwrap();
                (log.doctor_id == doctor).then(|| ConversationSummary {
                    conversation_id: log.conversation_id.clone(),
                    first_turn_preview: log
                        .turns
                        .first()
                        .map(|t| t.content.chars().take(PREVIEW_CHARS).collect())
                        .unwrap_or_default(),
                    created_at: log.created_at,
                })
            })
            .collect();
        out.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then_with(|| a.conversation_id.cmp(&b.conversation_id))
        });
        Ok(out)
    }

    pub fn get_conversation(&self, claims: &PrincipalClaims, id: &ConversationId) -> Result<ConversationLog> {
        let conv = self.owned_conversation(claims, id)?;
        let log = conv.lock().unwrap().clone();
        Ok(log)
    }

    // ----- reports ------------------------------------------------------

    /// Builds the five-section report for one visit. If the generator is
    /// down the report is still produced with the recommendations section
    /// marked unavailable.
    pub fn generate_report(
        &self,
        claims: &PrincipalClaims,
        patient: &PatientProfile,
        record: &ResolvedRecord,
        visit_id: &VisitId,
    ) -> Result<MedicalReport> {
        let visit = record
            .visits
            .iter()
            .find(|v| &v.visit_id == visit_id)
            .ok_or_else(|| Error::NotFound(format!("visit {visit_id}")))?;
        let allowed = if claims.is_service() {
            claims.has_scope(scopes::REPORT_GENERATE)
        } else {
            claims.has_role(Role::Doctor) && visit.doctor_id.as_str() == claims.subject
        };
        if !allowed {
            return Err(Error::Forbidden(
                "only the visit's doctor may generate its report".into(),
            ));
        }
        let now = self.clock.now();
        let id = ReportId(self.ids.next("rep"));
        let report = report::build(
            id,
            patient,
            record,
            visit,
            now,
            self.prompts.version,
            |facts| {
                self.generator
                    .generate(&self.prompts.report_recommender, &[ChatMessage::user(facts)])
            },
            |doc| self.blobs.put("text/plain; charset=utf-8", doc.into_bytes()),
        )?;
        self.reports
            .write()
            .unwrap()
            .insert(report.report_id.clone(), report.clone());
        Ok(report)
    }

    pub fn report(&self, id: &ReportId) -> Option<MedicalReport> {
        self.reports.read().unwrap().get(id).cloned()
    }

    // ----- x-ray --------------------------------------------------------

    pub fn classify_xray(
        &self,
        claims: &PrincipalClaims,
        patient: &PatientId,
        image: &[u8],
        format: ImageFormatTag,
        file_name: Option<&str>,
    ) -> Result<XrayResult> {
        require_doctor(claims)?;
        let prepared = prepare_image(image, format, file_name)?;
        let c = check_classification(self.classifier.classify(&prepared)?)?;
        let image_ref = self.blobs.put(format.content_type(), image.to_vec())?;
        let result = XrayResult {
            result_id: XrayResultId(self.ids.next("xr")),
            patient_id: patient.clone(),
            image_ref,
            label: c.label,
            confidence: c.confidence,
            reviewer_verdict: ReviewVerdict::Pending,
            reviewer_id: None,
            final_label: None,
            created_at: self.clock.now(),
            reviewed_at: None,
        };
        self.xrays
            .write()
            .unwrap()
            .insert(result.result_id.clone(), result.clone());
        Ok(result)
    }

    pub fn xray_result(&self, id: &XrayResultId) -> Option<XrayResult> {
        self.xrays.read().unwrap().get(id).cloned()
    }

    /// The patient's X-ray results in creation order.
    pub fn xray_history(&self, patient: &PatientId) -> Vec<XrayResult> {
        self.xrays
            .read()
            .unwrap()
            .values()
            .filter(|r| &r.patient_id == patient)
            .cloned()
            .collect()
    }

    /// Records the doctor's decision. `confirmed` keeps the model label;
    /// `modified` and `overridden` need an explicit final label, and an
    /// override must disagree with the model.
    pub fn review_xray(
        &self,
        claims: &PrincipalClaims,
        id: &XrayResultId,
        verdict: ReviewVerdict,
        final_label: Option<XrayLabel>,
    ) -> Result<XrayResult> {
        let doctor = require_doctor(claims)?;
        let mut xrays = self.xrays.write().unwrap();
        let r = xrays
            .get_mut(id)
            .ok_or_else(|| Error::NotFound(format!("x-ray result {id}")))?;
        if r.reviewer_verdict != ReviewVerdict::Pending {
            return Err(Error::Conflict(format!("{id} was already reviewed")));
        }
        let label = match (verdict, final_label) {
            (ReviewVerdict::Pending, _) => return Err(Error::field("verdict", "a review cannot be pending")),
            (ReviewVerdict::Confirmed, None) => r.label,
            (ReviewVerdict::Confirmed, Some(l)) if l == r.label => l,
            (ReviewVerdict::Confirmed, Some(_)) => {
                return Err(Error::field("final_label", "confirming keeps the model's label"))
            }
            (ReviewVerdict::Modified, Some(l)) => l,
            (ReviewVerdict::Overridden, Some(l)) if l != r.label => l,
            (ReviewVerdict::Overridden, Some(_)) => {
                return Err(Error::field("final_label", "an override must change the label"))
            }
            (_, None) => return Err(Error::field("final_label", "required for this verdict")),
        };
        r.reviewer_verdict = verdict;
        r.reviewer_id = Some(doctor);
        r.final_label = Some(label);
        r.reviewed_at = Some(self.clock.now());
        Ok(r.clone())
    }
}

#[cfg(test)]
mod tests;
