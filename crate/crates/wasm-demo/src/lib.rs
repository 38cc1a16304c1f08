//! Three browser-callable entry points over the core crates. Each returns a
//! JSON string so the page needs no generated type bindings.

use std::sync::Arc;

use ehr_core::clock::ManualClock;
use ehr_core::directory::{NewDoctor, NewPatient};
use ehr_core::identity::{PrincipalClaims, Role};
use ehr_core::load::StagePlan;
use ehr_core::pipeline::RequestContext;
use ehr_core::platform::Platform;
use ehr_core::records::RecordOperation;
use ehr_metrics::{rouge_l, rouge_n, semantic_score, tokenize, HashedTrigramEmbedder, ScoreTriple};
use serde::Serialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const DEMO_NOW: i64 = 1_738_340_572;

#[derive(Debug, Serialize)]
pub struct Scores {
    pub rouge1: Option<ScoreTriple>,
    pub rouge2: Option<ScoreTriple>,
    pub rouge_l: Option<ScoreTriple>,
    pub semantic: Option<ScoreTriple>,
}

/// Scores `generated` against `reference`. A metric that is undefined for
/// the inputs (e.g. ROUGE-2 on a one-word reference) comes back as null.
pub fn score(reference: &str, generated: &str) -> Scores {
    let (r, g) = (tokenize(reference), tokenize(generated));
    Scores {
        rouge1: rouge_n(&r, &g, 1).ok(),
        rouge2: rouge_n(&r, &g, 2).ok(),
        rouge_l: rouge_l(&r, &g).ok(),
        semantic: semantic_score(&r, &g, &HashedTrigramEmbedder).ok(),
    }
}

#[derive(Debug, Serialize, PartialEq)]
pub struct CurvePoint {
    pub t: f64,
    pub target: f64,
    pub active: u32,
}

/// Samples the scheduled virtual-user count of a stage plan such as
/// `"1m:50,2m:50,1m:0"` every `step_secs` seconds, end point included.
pub fn vu_curve(stages: &str, step_secs: f64) -> Result<Vec<CurvePoint>, String> {
    let plan: StagePlan = stages.parse().map_err(|e| format!("{e}"))?;
    if !step_secs.is_finite() || step_secs <= 0.0 {
        return Err("step must be positive".into());
    }
    let total = plan.total_secs() as f64;
    let steps = (total / step_secs).ceil() as usize;
    Ok((0..=steps)
        .map(|i| {
            let t = (i as f64 * step_secs).min(total);
            CurvePoint {
                t,
                target: plan.target_at(t),
                active: plan.active_at(t),
            }
        })
        .collect())
}

#[derive(Debug, Serialize, PartialEq)]
pub struct AccessRow {
    pub role: &'static str,
    pub admission: &'static str,
    pub target: &'static str,
    pub read: bool,
    pub add_visit: bool,
    pub read_denied_at: Option<&'static str>,
}

const ADMISSIONS: [&str; 3] = ["none", "active", "discharged"];

/// Runs every (role, admission state, target) case through a fresh
/// in-memory platform and reports what the request pipeline decided.
pub fn access_table() -> Vec<AccessRow> {
    let mut rows = Vec::new();
    for role in [Role::Admin, Role::Doctor, Role::Patient] {
        for admission in ADMISSIONS {
            for target in ["own", "other"] {
                rows.push(access_case(role, admission, target));
            }
        }
    }
    rows
}

fn access_case(role: Role, admission: &'static str, target: &'static str) -> AccessRow {
    let clock = Arc::new(ManualClock::new(DEMO_NOW));
    let p = Platform::in_memory(clock.clone());
    let demo = p.seed_demo(0, "demo").expect("seeding an empty platform");
    let admin = PrincipalClaims::user(demo.admin.as_str(), Role::Admin, DEMO_NOW, 3600);
    let patient = |nid: &str| {
        p.directory
            .register_patient(
                Some(&admin),
                NewPatient {
                    national_id: nid.into(),
                    name: nid.into(),
                    contact: String::new(),
                },
            )
            .expect("registering demo patient")
    };
    let doctor = |name: &str| {
        p.directory
            .seed_doctor(NewDoctor {
                name: name.into(),
                specialty: "general".into(),
                hospital_ids: Default::default(),
            })
            .expect("seeding demo doctor")
    };
    let (own, other) = (patient("29001010000001"), patient("29001010000002"));
    let (d, e) = (doctor("Dr. Own"), doctor("Dr. Other"));
    p.directory.admit(&admin, &other, &e).expect("admitting");
    for x in [&own, &other] {
        p.records
            .create_record(x, DEMO_NOW, &mut |_| Ok(()))
            .expect("creating record");
    }
    if admission != "none" {
        let a = p.directory.admit(&admin, &own, &d).expect("admitting");
        if admission == "discharged" {
            clock.advance(60);
            p.directory.discharge(&admin, &a.admission_id).expect("discharging");
        }
    }
    let subject = match role {
        Role::Admin => demo.admin.to_string(),
        Role::Doctor => d.to_string(),
        _ => own.to_string(),
    };
    let token = p
        .identity
        .issue_user_token(&subject, role, 3600)
        .expect("issuing token")
        .0;
    let patient_id = if target == "own" { own } else { other };

    let read = p.record_request(
        RequestContext::new(RecordOperation::GetRecord)
            .token(&token)
            .patient(patient_id.clone()),
    );
    let visit = json!({"examination_type": "routine", "date": "2025-01-31", "diagnosis": "checked"});
    let write = p.record_request(
        RequestContext::new(RecordOperation::CreateVisit)
            .token(&token)
            .patient(patient_id)
            .payload(visit),
    );
    AccessRow {
        role: match role {
            Role::Admin => "admin",
            Role::Doctor => "doctor",
            _ => "patient",
        },
        admission,
        target,
        read: read.result.is_ok(),
        add_visit: write.result.is_ok(),
        read_denied_at: read.result.err().and_then(|e| e.layer).map(|l| l.as_str()),
    }
}

fn to_js(v: Value) -> String {
    v.to_string()
}

#[wasm_bindgen(js_name = scoreTexts)]
pub fn score_texts(reference: &str, generated: &str) -> String {
    to_js(json!(score(reference, generated)))
}

#[wasm_bindgen(js_name = vuTrajectory)]
pub fn vu_trajectory(stages: &str, step_secs: f64) -> Result<String, JsError> {
    vu_curve(stages, step_secs)
        .map(|c| to_js(json!(c)))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = accessTruthTable)]
pub fn access_truth_table() -> String {
    to_js(json!(access_table()))
}
