use std::collections::HashSet;

use chrono::NaiveDate;
use serde_json::json;

use super::*;

struct Fixed {
    patients: HashSet<String>,
}

impl CareRelations for Fixed {
    fn patient_exists(&self, p: &PatientId) -> bool {
        self.patients.contains(p.as_str())
    }

    fn has_active_admission(&self, _: &str, _: &PatientId) -> bool {
        true
    }

    fn doctor_name(&self, d: &DoctorId) -> Option<String> {
        Some(format!("Dr. {}", d.as_str()))
    }
}

fn service() -> RecordService {
    RecordService::new(Arc::new(Fixed {
        patients: ["p1", "p2"].into_iter().map(String::from).collect(),
    }))
}

fn ok_gate() -> impl FnMut(&Effect) -> Result<()> {
    |_| Ok(())
}

fn p1() -> PatientId {
    PatientId::from("p1")
}

fn run(s: &RecordService, op: RecordOperation, payload: Value, now: i64) -> Result<RecordOutput> {
    s.execute(&op, &p1(), &payload, "d1", now, &mut ok_gate())
}

fn visit(date: &str) -> Value {
    json!({"examination_type": "follow_up", "date": date, "diagnosis": "asthma"})
}

#[test]
fn one_record_per_patient() {
    let s = service();
    let r = s.create_record(&p1(), 10, &mut ok_gate()).unwrap();
    assert_eq!(r.version, 0);
    assert!(r.visit_ids.is_empty() && r.lifestyle.is_none());
    assert_eq!(
        s.create_record(&p1(), 11, &mut ok_gate()).unwrap_err().kind(),
        crate::ErrorKind::Conflict
    );
    assert_eq!(
        s.create_record(&PatientId::from("ghost"), 11, &mut ok_gate())
            .unwrap_err()
            .kind(),
        crate::ErrorKind::NotFound
    );
}

#[test]
fn concurrent_creates_have_one_winner() {
    let s = Arc::new(service());
    let wins: usize = std::thread::scope(|sc| {
        let hs: Vec<_> = (0..16)
            .map(|_| {
                let s = s.clone();
                sc.spawn(move || s.create_record(&p1(), 1, &mut ok_gate()).is_ok() as usize)
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).sum()
    });
    assert_eq!(wins, 1);
}

#[test]
fn allergy_added_and_referenced() {
    let s = service();
    s.create_record(&p1(), 1, &mut ok_gate()).unwrap();
    let out = run(
        &s,
        RecordOperation::CreateEntity(EntityKind::Allergy),
        json!({"allergen": "penicillin", "category": "drug", "severity": "severe"}),
        2,
    )
    .unwrap();
    let RecordOutput::Entity(id) = out else { panic!() };
    let r = s.snapshot(&p1()).unwrap();
    assert_eq!(r.record.allergy_ids, std::slice::from_ref(&id));
    assert_eq!(r.allergies[0].record_id, r.record.record_id);
    assert_eq!(r.allergies[0].severity, Severity::Severe);
    assert!(s.integrity_violations().is_empty());
}

#[test]
fn missing_entities_are_not_found() {
    let s = service();
    s.create_record(&p1(), 1, &mut ok_gate()).unwrap();
    let ghost = EntityId::from("med-999999");
    for op in [
        RecordOperation::DeleteEntity(EntityKind::Medication, ghost.clone()),
        RecordOperation::DeleteEntity(EntityKind::Lifestyle, ghost.clone()),
        RecordOperation::DeleteVisit(VisitId::from("vis-1")),
    ] {
        assert_eq!(
            run(&s, op, Value::Null, 2).unwrap_err().kind(),
            crate::ErrorKind::NotFound
        );
    }
    let upd = RecordOperation::UpdateEntity(EntityKind::Medication, ghost);
    let body = json!({"name": "x", "dosage": "1 mg", "frequency": "daily", "active": true});
    assert_eq!(run(&s, upd, body, 2).unwrap_err().kind(), crate::ErrorKind::NotFound);
    assert_eq!(s.version(&p1()), Some(0));
}

#[test]
fn visits_listed_newest_first() {
    let s = service();
    s.create_record(&p1(), 1, &mut ok_gate()).unwrap();
    let RecordOutput::Visits(empty) = run(&s, RecordOperation::ListVisits, Value::Null, 1).unwrap() else {
        panic!()
    };
    assert!(empty.is_empty());
    for d in ["2024-03-01", "2024-05-01", "2024-01-01"] {
        run(&s, RecordOperation::CreateVisit, visit(d), 2).unwrap();
    }
    let RecordOutput::Visits(rows) = run(&s, RecordOperation::ListVisits, Value::Null, 3).unwrap() else {
        panic!()
    };
    let dates: Vec<_> = rows.iter().map(|r| r.date.to_string()).collect();
    assert_eq!(dates, ["2024-05-01", "2024-03-01", "2024-01-01"]);
    assert_eq!(rows[0].doctor_name, "Dr. d1");
}

#[test]
fn every_mutation_bumps_version_and_time() {
    let s = service();
    s.create_record(&p1(), 100, &mut ok_gate()).unwrap();
    let mut last = (0, 100);
    for (i, now) in [(1, 150), (2, 150), (3, 90), (4, 400)] {
        run(&s, RecordOperation::CreateVisit, visit("2024-01-01"), now).unwrap();
        let r = s.snapshot(&p1()).unwrap().record;
        assert_eq!(r.version, i);
        assert!(r.updated_at >= last.1);
        last = (r.version, r.updated_at);
    }
    assert_eq!(last, (4, 400));
}

#[test]
fn refused_commit_leaves_no_change() {
    let s = service();
    s.create_record(&p1(), 1, &mut ok_gate()).unwrap();
    let before = s.snapshot(&p1()).unwrap();
    let mut refuse = |_: &Effect| Err(Error::Internal("audit down".into()));
    let err = s
        .execute(
            &RecordOperation::CreateVisit,
            &p1(),
            &visit("2024-01-01"),
            "d1",
            5,
            &mut refuse,
        )
        .unwrap_err();
    assert_eq!(err.kind(), crate::ErrorKind::Internal);
    assert_eq!(s.snapshot(&p1()).unwrap(), before);
}

#[test]
fn effects_name_collection_and_action() {
    let s = service();
    let mut seen = Vec::new();
    let mut gate = |e: &Effect| {
        seen.push((e.collection.clone(), e.action, e.reason.clone()));
        Ok(())
    };
    s.create_record(&p1(), 1, &mut gate).unwrap();
    s.execute(&RecordOperation::GetRecord, &p1(), &Value::Null, "d1", 2, &mut gate)
        .unwrap();
    assert_eq!(
        seen,
        [
            (
                "medical_records".into(),
                AuditAction::Create,
                "Medical Record Created".into()
            ),
            (
                "medical_records".into(),
                AuditAction::View,
                "Medical Record Viewed".into()
            ),
        ]
    );
}

#[test]
fn lifestyle_is_a_singleton() {
    let s = service();
    s.create_record(&p1(), 1, &mut ok_gate()).unwrap();
    let body = json!({"smoking": "former", "alcohol": "none", "exercise": "3x weekly"});
    run(
        &s,
        RecordOperation::CreateEntity(EntityKind::Lifestyle),
        body.clone(),
        5,
    )
    .unwrap();
    run(&s, RecordOperation::CreateEntity(EntityKind::Lifestyle), body, 6).unwrap();
    let l = s.snapshot(&p1()).unwrap().record.lifestyle.unwrap();
    assert_eq!((l.smoking, l.updated_at), (Smoking::Former, 6));
    run(
        &s,
        RecordOperation::DeleteEntity(EntityKind::Lifestyle, EntityId::from("lifestyle")),
        Value::Null,
        7,
    )
    .unwrap();
    assert!(s.snapshot(&p1()).unwrap().record.lifestyle.is_none());
}

#[test]
fn resolved_record_round_trips() {
    let s = service();
    s.create_record(&p1(), 1, &mut ok_gate()).unwrap();
    run(
        &s,
        RecordOperation::CreateEntity(EntityKind::Condition),
        json!({"name": "diabetes", "chronic": true, "onset_date": "2019-06-01"}),
        2,
    )
    .unwrap();
    let mut v = visit("2024-02-02");
    v["vitals"] = json!({"heart_rate": {"value": 72.5, "unit": "bpm"}});
    run(&s, RecordOperation::CreateVisit, v, 3).unwrap();
    let r = s.snapshot(&p1()).unwrap();
    let text = serde_json::to_string(&r).unwrap();
    let back: ResolvedRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
    assert_eq!(r.conditions[0].onset_date, NaiveDate::from_ymd_opt(2019, 6, 1));
}

#[test]
fn entity_permissions_follow_vocabulary() {
    use Permission as P;
    let op = RecordOperation::DeleteEntity(EntityKind::Allergy, EntityId::from("x"));
    assert_eq!(op.accepted_permissions(), [P::DeleteAllergy]);
    let op = RecordOperation::CreateEntity(EntityKind::Immunization);
    assert_eq!(op.accepted_permissions(), [P::CreateRecord]);
    assert_eq!(
        RecordOperation::DeleteVisit(VisitId::from("v")).accepted_permissions(),
        [P::DeleteVisit]
    );
    assert_eq!(RecordOperation::GetRecord.required_scope(), scopes::RECORD_READ);
    assert_eq!(RecordOperation::CreateVisit.required_scope(), scopes::RECORD_WRITE);
}
