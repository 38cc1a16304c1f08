use std::sync::Arc;

use chrono::NaiveDate;

use super::*;
use crate::blob::MemoryBlobStore;
use crate::clock::ManualClock;
use crate::gateway::CacheTtls;
use crate::records::{ExaminationType, Measurement, MedicalRecord, Visit};

const T0: i64 = 1_738_340_572;

type Gen = RecordingGenerator<Switchable<ReferenceGenerator>>;

struct Fixture {
    clock: Arc<ManualClock>,
    generator: Arc<Gen>,
    cache: Arc<TtlCache>,
    ai: AiService,
}

fn fixture() -> Fixture {
    let clock = Arc::new(ManualClock::new(T0));
    let generator = Arc::new(RecordingGenerator::new(Switchable::new(ReferenceGenerator)));
    let cache = Arc::new(TtlCache::new(clock.clone(), CacheTtls::default()));
    let ai = AiService::new(
        generator.clone(),
        Arc::new(ReferenceClassifier),
        PromptSet::builtin(),
        cache.clone(),
        Arc::new(MemoryBlobStore::new()),
        clock.clone(),
    );
    Fixture {
        clock,
        generator,
        cache,
        ai,
    }
}

fn visit(id: &str, doctor: &str) -> Visit {
    Visit {
        visit_id: VisitId::from(id),
        record_id: RecordId::from("rec-000001"),
        examination_type: ExaminationType::Routine,
        date: NaiveDate::from_ymd_opt(2025, 1, 10).unwrap(),
        doctor_id: DoctorId::from(doctor),
        complaints: "cough".into(),
        symptoms: vec!["fever".into()],
        diagnosis: "bronchitis".into(),
        treatments: vec![],
        notes: String::new(),
        vitals: [(
            "heart_rate".to_owned(),
            Measurement {
                value: 72.0,
                unit: "bpm".into(),
            },
        )]
        .into(),
        attachments: vec![],
        created_at: T0,
    }
}

fn record(version: u64) -> ResolvedRecord {
    ResolvedRecord {
        record: MedicalRecord {
            record_id: RecordId::from("rec-000001"),
            patient_id: PatientId::from("pat-000001"),
            condition_ids: vec![],
            medication_ids: vec![],
            allergy_ids: vec![],
            surgery_ids: vec![],
            immunization_ids: vec![],
            lifestyle: None,
            visit_ids: vec![VisitId::from("vis-000001")],
            version,
            created_at: T0,
            updated_at: T0,
        },
        conditions: vec![],
        medications: vec![],
        allergies: vec![],
        surgeries: vec![],
        immunizations: vec![],
        visits: vec![visit("vis-000001", "doc-000001")],
    }
}

struct Fixed(std::sync::Mutex<u64>);

impl RecordSource for Fixed {
    fn fetch_record(&self, _: &PatientId) -> Result<ResolvedRecord> {
        Ok(record(*self.0.lock().unwrap()))
    }
}

fn svc() -> PrincipalClaims {
    PrincipalClaims::service("ai-orchestrator", &[scopes::RECORD_READ], T0, 3600)
}

fn doctor(id: &str) -> PrincipalClaims {
    PrincipalClaims::user(id, Role::Doctor, T0, 3600)
}

#[test]
fn summary_is_cached_per_record_version() {
    let f = fixture();
    let src = Fixed(std::sync::Mutex::new(1));
    let p = PatientId::from("pat-000001");
    let a = f.ai.summarize_history(&svc(), &p, &src).unwrap();
    let b = f.ai.summarize_history(&svc(), &p, &src).unwrap();
    assert_eq!(a, b);
    assert_eq!(f.generator.call_count(), 1);
    *src.0.lock().unwrap() = 2;
    let c = f.ai.summarize_history(&svc(), &p, &src).unwrap();
    assert_eq!(c.source_record_version, 2);
    assert_eq!(f.generator.call_count(), 2);
    // expiry forces regeneration as well
    f.clock.advance(301);
    f.ai.summarize_history(&svc(), &p, &src).unwrap();
    assert_eq!(f.generator.call_count(), 3);
}

#[test]
fn summary_failure_caches_nothing() {
    let f = fixture();
    let src = Fixed(std::sync::Mutex::new(1));
    let p = PatientId::from("pat-000001");
    f.generator.inner().set_available(false);
    let err = f.ai.summarize_history(&svc(), &p, &src).unwrap_err();
    assert_eq!(err.kind(), crate::ErrorKind::BadGateway);
    assert!(f.cache.get(&summary_key("pat-000001")).is_none());
    assert!(f.ai.latest_summary(&p).is_none());
}

#[test]
fn summary_requires_service_read_scope() {
    let f = fixture();
    let src = Fixed(std::sync::Mutex::new(1));
    let p = PatientId::from("pat-000001");
    assert!(f.ai.summarize_history(&doctor("doc-000001"), &p, &src).is_err());
    let weak = PrincipalClaims::service("x", &[scopes::AUDIT_READ], T0, 60);
    assert!(f.ai.summarize_history(&weak, &p, &src).is_err());
}

#[test]
fn chat_sends_full_history_each_turn() {
    let f = fixture();
    let d = doctor("doc-000001");
    let first = f.ai.chat_initiate(&d, "What are the symptoms of asthma?").unwrap();
    for i in 0..5 {
        f.ai.chat_continue(&d, &first.conversation_id, &format!("follow-up {i}"))
            .unwrap();
    }
    let calls = f.generator.calls();
    assert_eq!(calls.len(), 6);
    let log = f.ai.get_conversation(&d, &first.conversation_id).unwrap();
    assert_eq!(log.turns.len(), 12);
    for (k, (system, msgs)) in calls.iter().enumerate() {
        assert_eq!(system, &f.ai.prompts().chatbot);
        assert_eq!(msgs.len(), 2 * k + 1);
        let expected: Vec<ChatMessage> = log.turns[..2 * k + 1].iter().map(Turn::as_message).collect();
        assert_eq!(msgs, &expected);
    }
}

#[test]
fn chat_rejects_strangers_and_empty_input() {
    let f = fixture();
    let d = doctor("doc-000001");
    let c = f.ai.chat_initiate(&d, "hello").unwrap();
    let other = doctor("doc-000002");
    assert_eq!(
        f.ai.chat_continue(&other, &c.conversation_id, "hi").unwrap_err().kind(),
        crate::ErrorKind::Forbidden
    );
    assert_eq!(
        f.ai.chat_continue(&d, &ConversationId::from("conv-999999"), "hi")
            .unwrap_err()
            .kind(),
        crate::ErrorKind::NotFound
    );
    assert!(f.ai.chat_initiate(&d, "   ").is_err());
    let patient = PrincipalClaims::user("pat-000001", Role::Patient, T0, 60);
    assert!(f.ai.chat_initiate(&patient, "hello").is_err());
    assert!(f.ai.list_conversations(&other).unwrap().is_empty());
    assert_eq!(f.ai.list_conversations(&d).unwrap()[0].first_turn_preview, "hello");
}

#[test]
fn failed_turn_leaves_conversation_untouched() {
    let f = fixture();
    let d = doctor("doc-000001");
    let c = f.ai.chat_initiate(&d, "hello").unwrap();
    f.generator.inner().set_available(false);
    assert!(f.ai.chat_continue(&d, &c.conversation_id, "again").is_err());
    assert_eq!(f.ai.get_conversation(&d, &c.conversation_id).unwrap().turns.len(), 2);
    assert!(f.ai.chat_initiate(&d, "new").is_err());
    assert_eq!(f.ai.list_conversations(&d).unwrap().len(), 1);
}

fn profile() -> PatientProfile {
    PatientProfile {
        patient_id: PatientId::from("pat-000001"),
        national_id: "29001011234567".into(),
        name: "Mona Adel".into(),
        contact: String::new(),
        registered_at: T0,
    }
}

#[test]
fn report_has_five_sections_and_degrades() {
    let f = fixture();
    let d = doctor("doc-000001");
    let v = VisitId::from("vis-000001");
    let r = f.ai.generate_report(&d, &profile(), &record(1), &v).unwrap();
    let keys: Vec<_> = r.sections.iter().map(|s| s.key).collect();
    assert_eq!(keys, SectionKey::ORDER);
    assert!(!r.degraded);
    assert!(r
        .section(SectionKey::VitalsAndLabResults)
        .unwrap()
        .body
        .contains("heart_rate: 72 bpm"));

    f.generator.inner().set_available(false);
    let r = f.ai.generate_report(&d, &profile(), &record(1), &v).unwrap();
    assert!(r.degraded);
    assert_eq!(
        r.section(SectionKey::AiRecommendations).unwrap().body,
        report::DEGRADED_RECOMMENDATIONS
    );

    assert_eq!(
        f.ai.generate_report(&doctor("doc-000002"), &profile(), &record(1), &v)
            .unwrap_err()
            .kind(),
        crate::ErrorKind::Forbidden
    );
}

#[test]
fn report_without_vitals_says_so() {
    let f = fixture();
    let mut rec = record(1);
    rec.visits[0].vitals.clear();
    let r =
        f.ai.generate_report(&doctor("doc-000001"), &profile(), &rec, &VisitId::from("vis-000001"))
            .unwrap();
    assert!(r
        .section(SectionKey::VitalsAndLabResults)
        .unwrap()
        .body
        .contains("no vitals recorded"));
}

fn png(shade: u8) -> Vec<u8> {
    let img = image::GrayImage::from_pixel(32, 32, image::Luma([shade]));
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

#[test]
fn xray_review_transitions() {
    let f = fixture();
    let d = doctor("doc-000001");
    let p = PatientId::from("pat-000001");
    let r =
        f.ai.classify_xray(&d, &p, &png(10), ImageFormatTag::Png, Some("pneumonia_1.png"))
            .unwrap();
    assert_eq!(r.label, XrayLabel::Pneumonia);
    assert_eq!(r.confidence, REFERENCE_PNEUMONIA_CONFIDENCE);
    assert_eq!(r.reviewer_verdict, ReviewVerdict::Pending);

    let bad =
        f.ai.review_xray(&d, &r.result_id, ReviewVerdict::Overridden, Some(XrayLabel::Pneumonia));
    assert!(bad.is_err());
    let ok =
        f.ai.review_xray(&d, &r.result_id, ReviewVerdict::Overridden, Some(XrayLabel::Normal))
            .unwrap();
    assert_eq!(ok.final_label, Some(XrayLabel::Normal));
    assert_eq!(ok.label, XrayLabel::Pneumonia);
    assert_eq!(
        f.ai.review_xray(&d, &r.result_id, ReviewVerdict::Confirmed, None)
            .unwrap_err()
            .kind(),
        crate::ErrorKind::Conflict
    );

    let r2 =
        f.ai.classify_xray(&d, &p, &png(240), ImageFormatTag::Png, None)
            .unwrap();
    let c =
        f.ai.review_xray(&d, &r2.result_id, ReviewVerdict::Confirmed, None)
            .unwrap();
    assert_eq!(c.final_label, Some(r2.label));
    assert_eq!(f.ai.xray_history(&p).len(), 2);
}

#[test]
fn corrupt_image_is_rejected() {
    let f = fixture();
    let err =
        f.ai.classify_xray(
            &doctor("doc-000001"),
            &PatientId::from("pat-000001"),
            b"nope",
            ImageFormatTag::Png,
            None,
        )
        .unwrap_err();
    assert_eq!(err.kind(), crate::ErrorKind::ValidationError);
    assert!(f.ai.xray_history(&PatientId::from("pat-000001")).is_empty());
}
