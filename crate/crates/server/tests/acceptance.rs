//! Release acceptance checks. Each criterion prints one PASS/FAIL line and
//! the binary exits non-zero if any fails. Pass substrings as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- rouge`.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::{Method, StatusCode};
use common::*;
use ehr_core::ai::{ChatMessage, SectionKey, TurnAuthor, XrayLabel};
use ehr_core::audit::{AccessType, AuditAction, AuditDraft, AuditFilter, AuditLog, AuditStatus, Page};
use ehr_core::clock::{ManualClock, SystemClock};
use ehr_core::directory::{NewDoctor, NewPatient};
use ehr_core::gateway::{Limited, RateDecision, RateLimiter, RateLimits};
use ehr_core::identity::{scopes, PrincipalClaims, Role, TokenSigner, DEFAULT_ISSUER};
use ehr_core::ids::{EntityId, PatientId, VisitId};
use ehr_core::load::{check_thresholds, StagePlan, ThresholdSpec};
use ehr_core::pipeline::{Layer, LayerVerdict, RequestContext};
use ehr_core::platform::Platform;
use ehr_core::records::{EntityKind, RecordOperation};
use ehr_core::time::parse_iso;
use ehr_metrics::{
    evaluate_corpus, lcs_length, rouge_l, rouge_n, semantic_score, tokenize, HashedTrigramEmbedder, MetricKind,
    SummaryPair, TokenSequence, TRIGRAM_DIMENSION,
};
use ehr_server::loadtest::{run_scenario, Scenario};
use ehr_server::ServerConfig;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, TestRunner};
use serde_json::{json, Value};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------------------
// access-control truth table

#[derive(Debug, Clone, Copy, PartialEq)]
enum Adm {
    None,
    Active,
    Discharged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    Own,
    Other,
}

/// (role, admission between the doctor and P, target) -> (may read, may add a visit).
/// For a patient subject "own" is the patient's own record; for a doctor it
/// is the record of the patient the admission refers to.
const TABLE: [(Role, Adm, Target, bool, bool); 18] = [
    (Role::Admin, Adm::None, Target::Own, false, false),
    (Role::Admin, Adm::None, Target::Other, false, false),
    (Role::Admin, Adm::Active, Target::Own, false, false),
    (Role::Admin, Adm::Active, Target::Other, false, false),
    (Role::Admin, Adm::Discharged, Target::Own, false, false),
    (Role::Admin, Adm::Discharged, Target::Other, false, false),
    (Role::Doctor, Adm::None, Target::Own, false, false),
    (Role::Doctor, Adm::None, Target::Other, false, false),
    (Role::Doctor, Adm::Active, Target::Own, true, true),
    (Role::Doctor, Adm::Active, Target::Other, false, false),
    (Role::Doctor, Adm::Discharged, Target::Own, false, false),
    (Role::Doctor, Adm::Discharged, Target::Other, false, false),
    (Role::Patient, Adm::None, Target::Own, true, false),
    (Role::Patient, Adm::None, Target::Other, false, false),
    (Role::Patient, Adm::Active, Target::Own, true, false),
    (Role::Patient, Adm::Active, Target::Other, false, false),
    (Role::Patient, Adm::Discharged, Target::Own, true, false),
    (Role::Patient, Adm::Discharged, Target::Other, false, false),
];

fn truth_case(role: Role, adm: Adm, target: Target) -> (bool, bool) {
    let clock = Arc::new(ManualClock::new(T0));
    let p = Platform::in_memory(clock.clone());
    let demo = p.seed_demo(0, PASSWORD).unwrap();
    let admin = PrincipalClaims::user(demo.admin.as_str(), Role::Admin, T0, 3600);
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
            .unwrap()
    };
    let doctor = |name: &str| {
        p.directory
            .seed_doctor(NewDoctor {
                name: name.into(),
                specialty: "gp".into(),
                hospital_ids: Default::default(),
            })
            .unwrap()
    };
    let (pp, q) = (patient("29001010000001"), patient("29001010000002"));
    let (d, e) = (doctor("D"), doctor("E"));
    p.directory.admit(&admin, &q, &e).unwrap();
    for x in [&pp, &q] {
        p.records.create_record(x, T0, &mut |_| Ok(())).unwrap();
    }
    match adm {
        Adm::None => {}
        Adm::Active => {
            p.directory.admit(&admin, &pp, &d).unwrap();
        }
        Adm::Discharged => {
            let a = p.directory.admit(&admin, &pp, &d).unwrap();
            clock.advance(60);
            p.directory.discharge(&admin, &a.admission_id).unwrap();
        }
    }
    let subject = match role {
        Role::Admin => demo.admin.to_string(),
        Role::Doctor => d.to_string(),
        _ => pp.to_string(),
    };
    let token = p.identity.issue_user_token(&subject, role, 3600).unwrap().0;
    let target = match target {
        Target::Own => pp,
        Target::Other => q,
    };
    let read = p
        .record_request(
            RequestContext::new(RecordOperation::GetRecord)
                .token(&token)
                .patient(target.clone()),
        )
        .result
        .is_ok();
    let visit = json!({"examination_type": "routine", "date": "2025-01-31", "diagnosis": "checked"});
    let write = p
        .record_request(
            RequestContext::new(RecordOperation::CreateVisit)
                .token(&token)
                .patient(target)
                .payload(visit),
        )
        .result
        .is_ok();
    (read, write)
}

fn truth_table() -> Check {
    let started = Instant::now();
    let mut mismatches = Vec::new();
    for (role, adm, target, read, write) in TABLE {
        let got = truth_case(role, adm, target);
        if got != (read, write) {
            mismatches.push(format!(
                "{role:?}/{adm:?}/{target:?}: got {got:?}, want {:?}",
                (read, write)
            ));
        }
    }
    let elapsed = started.elapsed();
    ensure!(mismatches.is_empty(), "{}", mismatches.join("; "));
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!(
        "18 cases x (read, write) match, {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

// ---------------------------------------------------------------------------
// pipeline ordering under fault injection

#[derive(Debug, Clone)]
struct Injected {
    token: usize,
    op: usize,
    target: usize,
    valid_payload: bool,
    audit_up: bool,
    pick: usize,
}

fn injected() -> impl Strategy<Value = Injected> {
    (
        0usize..10,
        0usize..10,
        0usize..4,
        any::<bool>(),
        prop::bool::weighted(0.9),
        any::<usize>(),
    )
        .prop_map(|(token, op, target, valid_payload, audit_up, pick)| Injected {
            token,
            op,
            target,
            valid_payload,
            audit_up,
            pick,
        })
}

fn build_request(h: &Harness, r: &Injected) -> RequestContext {
    let now = h.platform.now();
    let signer = h.platform.identity.signer();
    let doctor = |i: usize| h.demo.doctors[i].to_string();
    let token = match r.token {
        0 => None,
        1 => Some("not-a-token".to_owned()),
        2 => Some(
            signer
                .sign(&PrincipalClaims::user(&doctor(0), Role::Doctor, now - 7200, 3600))
                .0,
        ),
        3 => Some(
            TokenSigner::new(b"someone else".to_vec(), DEFAULT_ISSUER)
                .sign(&PrincipalClaims::user(&doctor(0), Role::Doctor, now, 3600))
                .0,
        ),
        4 => Some(h.admin()),
        5 => Some(h.doctor(0).1),
        6 => Some(h.doctor(1).1),
        7 => Some(h.patient(0).1),
        8 => Some(
            signer
                .sign(&PrincipalClaims::service("svc-read", &[scopes::RECORD_READ], now, 600))
                .0,
        ),
        _ => Some(
            signer
                .sign(&PrincipalClaims::service(
                    "svc-write",
                    &[scopes::RECORD_WRITE],
                    now,
                    600,
                ))
                .0,
        ),
    };
    let target = match r.target {
        3 => PatientId::from("pat-999999"),
        i => h.demo.patients[i].clone(),
    };
    let snapshot = h.platform.records.snapshot(&target);
    let visit_id = snapshot
        .as_ref()
        .and_then(|s| (!s.visits.is_empty()).then(|| s.visits[r.pick % s.visits.len()].visit_id.clone()))
        .unwrap_or_else(|| VisitId::from("vis-999999"));
    let allergy_id = snapshot
        .as_ref()
        .and_then(|s| (!s.allergies.is_empty()).then(|| s.allergies[r.pick % s.allergies.len()].allergy_id.clone()))
        .unwrap_or_else(|| EntityId::from("alg-999999"));
    let visit = if r.valid_payload {
        json!({"examination_type": "follow_up", "date": "2025-01-20", "diagnosis": "asthma"})
    } else {
        json!({"examination_type": "séance", "date": "tomorrow"})
    };
    let allergy = if r.valid_payload {
        json!({"allergen": "latex", "category": "environmental", "severity": "mild"})
    } else {
        json!({"allergen": "", "category": "gravity", "severity": 3})
    };
    let (op, payload) = match r.op {
        0 => (RecordOperation::GetRecord, Value::Null),
        1 => (RecordOperation::ListVisits, Value::Null),
        2 | 3 => (RecordOperation::CreateVisit, visit),
        4 => (RecordOperation::UpdateVisit(visit_id), visit),
        5 => (RecordOperation::DeleteVisit(visit_id), Value::Null),
        6 => (RecordOperation::CreateEntity(EntityKind::Allergy), allergy),
        7 => (RecordOperation::UpdateEntity(EntityKind::Allergy, allergy_id), allergy),
        8 => (
            RecordOperation::DeleteEntity(EntityKind::Allergy, allergy_id),
            Value::Null,
        ),
        _ => (RecordOperation::CreateRecord, json!({"patient_id": target})),
    };
    let mut ctx = RequestContext::new(op)
        .patient(target)
        .payload(payload)
        .origin("10.1.1.1", "acceptance");
    ctx.raw_token = token;
    ctx
}

/// Checks one request; returns whether it reached the handler and succeeded.
fn check_request(h: &Harness, r: &Injected) -> Result<bool, TestCaseError> {
    h.audit_up.store(r.audit_up, Ordering::SeqCst);
    let ctx = build_request(h, r);
    let versions: Vec<_> = h.demo.patients.iter().map(|p| h.platform.records.version(p)).collect();
    let before = h.platform.audit.len();
    let out = h.platform.record_request(ctx);
    h.audit_up.store(true, Ordering::SeqCst);
    let after = h.platform.audit.len();

    let layers: Vec<Layer> = out.trace.iter().map(|t| t.layer).collect();
    prop_assert!(!layers.is_empty());
    prop_assert_eq!(&layers[..], &Layer::ORDER[..layers.len()]);
    let (last, rest) = out.trace.split_last().unwrap();
    prop_assert!(rest.iter().all(|t| t.verdict == LayerVerdict::Pass), "{:?}", out.trace);
    match &out.result {
        Ok(_) => prop_assert!(layers.len() == 5 && last.verdict == LayerVerdict::Pass),
        Err(e) => match e.layer {
            Some(l) => prop_assert!(
                last.layer == l && last.verdict == LayerVerdict::Fail,
                "{:?} {:?}",
                e,
                out.trace
            ),
            None => prop_assert!(layers.len() == 5, "{:?}", out.trace),
        },
    }
    if r.audit_up {
        prop_assert_eq!(after, before + 1, "exactly one audit entry per request");
        let last_entry = h.platform.audit.snapshot().pop();
        prop_assert_eq!(out.audit.as_ref(), last_entry.as_ref());
        let entry = out.audit.as_ref().unwrap();
        prop_assert_eq!(entry.status == AuditStatus::Success, out.result.is_ok());
    } else {
        prop_assert_eq!(after, before);
        prop_assert!(out.result.is_err());
        let now: Vec<_> = h.demo.patients.iter().map(|p| h.platform.records.version(p)).collect();
        prop_assert_eq!(now, versions, "a write without its audit entry became visible");
    }
    Ok(out.result.is_ok())
}

fn pipeline_prefix() -> Check {
    let h = harness(3);
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let count = std::cell::Cell::new((0u32, 0u32));
    runner
        .run(&injected(), |r| {
            let ok = check_request(&h, &r)?;
            let (n, s) = count.get();
            count.set((n + 1, s + u32::from(ok)));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let (n, s) = count.get();
    ensure!(n >= 10_000, "only {n} requests ran");
    ensure!(
        s > 0,
        "no request ever succeeded; the generator is too hostile to be meaningful"
    );
    Ok(format!("{n} requests, 0 violations ({s} succeeded)"))
}

// ---------------------------------------------------------------------------
// rate limiting

fn rate_limits() -> Check {
    let limits = RateLimits::default();
    ensure!(
        (limits.per_user, limits.per_ip, limits.window_secs) == (100, 1000, 60),
        "defaults {limits:?}"
    );
    let w = (T0 / 60 + 1) * 60;

    let l = RateLimiter::new(limits);
    for i in 0..100 {
        let ip = format!("10.0.0.{}", i % 5);
        ensure!(
            l.check_rate(&ip, Some("doc-1"), w + i as i64 % 60).is_allowed(),
            "user request {} denied",
            i + 1
        );
    }
    let d = l.check_rate("10.0.0.99", Some("doc-1"), w + 59);
    ensure!(
        matches!(
            d,
            RateDecision::Deny {
                limited: Limited::User,
                retry_after: 1
            }
        ),
        "101st user request: {d:?}"
    );
    ensure!(
        l.check_rate("10.0.0.99", Some("doc-2"), w + 59).is_allowed(),
        "other user throttled"
    );
    ensure!(
        l.check_rate("10.0.0.1", Some("doc-1"), w + 60).is_allowed(),
        "rollover did not restore the user"
    );

    let l = RateLimiter::new(limits);
    for i in 0..1000 {
        ensure!(
            l.check_rate("10.9.9.9", None, w + i as i64 % 60).is_allowed(),
            "ip request {} denied",
            i + 1
        );
    }
    let d = l.check_rate("10.9.9.9", None, w + 30);
    ensure!(
        matches!(
            d,
            RateDecision::Deny {
                limited: Limited::Ip,
                retry_after: 30
            }
        ),
        "1001st ip request: {d:?}"
    );
    let d = l.check_rate("10.9.9.9", Some("doc-3"), w + 30);
    ensure!(
        matches!(
            d,
            RateDecision::Deny {
                limited: Limited::Ip,
                ..
            }
        ),
        "token bypassed the ip limit: {d:?}"
    );
    ensure!(
        l.check_rate("10.9.9.8", None, w + 30).is_allowed(),
        "other ip throttled"
    );
    ensure!(
        l.check_rate("10.9.9.9", None, w + 60).is_allowed(),
        "rollover did not restore the ip"
    );

    // the same numbers through the HTTP gateway
    let h = harness(1);
    h.clock.set(w);
    let (_, t) = h.doctor(0);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let statuses: Vec<StatusCode> = rt.block_on(async {
        let mut s = Vec::new();
        for _ in 0..101 {
            s.push(h.get("/api/user/profile", &t).await.status);
        }
        h.clock.advance(60);
        s.push(h.get("/api/user/profile", &t).await.status);
        s
    });
    ensure!(
        statuses[..100].iter().all(|s| *s == StatusCode::OK),
        "gateway denied within the limit"
    );
    ensure!(
        statuses[100] == StatusCode::TOO_MANY_REQUESTS,
        "gateway 101st: {}",
        statuses[100]
    );
    ensure!(
        statuses[101] == StatusCode::OK,
        "gateway after rollover: {}",
        statuses[101]
    );
    Ok("user 100/101, ip 1000/1001, rollover restores; gateway agrees".into())
}

// ---------------------------------------------------------------------------
// ROUGE against brute force

fn all_sequences(max_len: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::<String>::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for sym in ["a", "b", "c"] {
                let mut t = s.clone();
                t.push(sym.to_owned());
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// (matched, reference n-grams, generated n-grams) by greedy removal.
fn brute_counts(reference: &[String], generated: &[String], n: usize) -> (usize, usize, usize) {
    let grams = |t: &[String]| -> Vec<Vec<String>> {
        (0..t.len().saturating_sub(n - 1))
            .filter(|i| i + n <= t.len())
            .map(|i| t[i..i + n].to_vec())
            .collect()
    };
    let r = grams(reference);
    let mut pool = grams(generated);
    let g = pool.len();
    let mut matched = 0;
    for gram in &r {
        if let Some(pos) = pool.iter().position(|x| x == gram) {
            pool.swap_remove(pos);
            matched += 1;
        }
    }
    (matched, r.len(), g)
}

fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let picked: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if picked.len() > best {
            let mut it = b.iter();
            if picked.iter().all(|p| it.any(|x| x == *p)) {
                best = picked.len();
            }
        }
    }
    best
}

fn oracle_triple(matched: usize, rt: usize, gt: usize) -> (f64, f64, f64) {
    let r = matched as f64 / rt as f64;
    let p = if gt == 0 { 0.0 } else { matched as f64 / gt as f64 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (r, p, f)
}

fn rouge_pair(a: &[String], b: &[String]) -> Result<(), String> {
    let (sa, sb) = (
        TokenSequence::from_tokens(a.iter()),
        TokenSequence::from_tokens(b.iter()),
    );
    for n in 1..=2 {
        let got = rouge_n(&sa, &sb, n);
        if a.len() < n {
            if got.is_ok() {
                return Err(format!("rouge-{n} {a:?} {b:?}: expected undefined"));
            }
            continue;
        }
        let got = got.map_err(|e| e.to_string())?;
        let (m, rt, gt) = brute_counts(a, b, n);
        let (r, p, f) = oracle_triple(m, rt, gt);
        if (got.recall.to_bits(), got.precision.to_bits(), got.f1.to_bits()) != (r.to_bits(), p.to_bits(), f.to_bits())
        {
            return Err(format!("rouge-{n} {a:?} {b:?}: {got:?} vs ({r}, {p}, {f})"));
        }
    }
    let l = brute_lcs(a, b);
    if lcs_length(&sa, &sb) != l {
        return Err(format!("lcs {a:?} {b:?}: {} vs {l}", lcs_length(&sa, &sb)));
    }
    Ok(())
}

fn rouge_oracle() -> Check {
    let started = Instant::now();
    let seqs = all_sequences(6);
    ensure!(seqs.len() == 1093, "{} sequences", seqs.len());
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get());
    let chunk = seqs.len().div_ceil(threads);
    let results: Vec<Result<usize, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = seqs
            .chunks(chunk)
            .map(|rows| {
                let seqs = &seqs;
                s.spawn(move || {
                    let mut n = 0;
                    for a in rows {
                        for b in seqs {
                            rouge_pair(a, b)?;
                            n += 1;
                        }
                    }
                    Ok(n)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut pairs = 0;
    for r in results {
        pairs += r?;
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{pairs} pairs bit-exact (rouge-1, rouge-2, lcs), {:.1} s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// worked metric fixtures

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn worked_fixtures() -> Check {
    let r = tokenize("Patient has diabetes.");
    let g = tokenize("Patient has chronic diabetes.");
    let want = [
        ("rouge1", rouge_n(&r, &g, 1), (1.0, 0.75, 6.0 / 7.0)),
        ("rougeL", rouge_l(&r, &g), (1.0, 0.75, 6.0 / 7.0)),
        ("rouge2", rouge_n(&r, &g, 2), (0.5, 1.0 / 3.0, 0.4)),
    ];
    for (name, got, (wr, wp, wf)) in want {
        let got = got.map_err(|e| e.to_string())?;
        ensure!(
            close(got.recall, wr) && close(got.precision, wp) && close(got.f1, wf),
            "{name}: {got:?}, want ({wr}, {wp}, {wf})"
        );
    }

    // padded summaries: every reference word is kept in order and filler is
    // added, so recall must dominate precision
    let words = [
        "fever", "cough", "insulin", "dose", "blood", "pressure", "stable", "asthma", "daily", "review",
    ];
    let filler = ["the", "patient", "was", "noted", "overall", "also"];
    let pairs: Vec<SummaryPair> = (0..40)
        .map(|i| {
            let len = 3 + i % 6;
            let reference: Vec<&str> = (0..len).map(|k| words[(i * 3 + k * 7) % words.len()]).collect();
            let mut generated = Vec::new();
            for (k, w) in reference.iter().enumerate() {
                generated.push(*w);
                if (i + k) % 2 == 0 {
                    generated.push(filler[(i + k) % filler.len()]);
                }
            }
            generated.push(filler[i % filler.len()]);
            SummaryPair::new(reference.join(" "), generated.join(" "))
        })
        .collect();
    let stats = evaluate_corpus(&pairs, &MetricKind::ALL, &HashedTrigramEmbedder).map_err(|e| e.to_string())?;
    ensure!(stats.evaluated == pairs.len(), "{} excluded", stats.excluded.len());
    let mut notes = Vec::new();
    for (kind, m) in &stats.metrics {
        ensure!(
            m.recall.mean > m.precision.mean,
            "{kind}: recall {} <= precision {}",
            m.recall.mean,
            m.precision.mean
        );
        notes.push(format!("{kind} R {:.3} > P {:.3}", m.recall.mean, m.precision.mean));
    }
    for row in &stats.per_pair {
        for (kind, s) in &row.scores {
            ensure!(s.recall >= s.precision, "pair {} {kind}: {s:?}", row.index);
        }
    }
    Ok(format!(
        "diabetes pair to 1e-9; padded corpus of 40: {}",
        notes.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// semantic score

/// Independent trigram embedding: same recipe, separate code.
fn oracle_embed(token: &str) -> Vec<f64> {
    let chars: Vec<char> = format!("#{token}#").chars().collect();
    let mut v = vec![0.0; TRIGRAM_DIMENSION];
    for w in chars.windows(3) {
        let gram: String = w.iter().collect();
        let mut h: u64 = 14_695_981_039_346_656_037;
        for b in gram.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(1_099_511_628_211);
        }
        v[(h % TRIGRAM_DIMENSION as u64) as usize] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn oracle_semantic(reference: &str, generated: &str) -> (f64, f64, f64) {
    let r: Vec<Vec<f64>> = tokenize(reference).tokens().iter().map(|t| oracle_embed(t)).collect();
    let g: Vec<Vec<f64>> = tokenize(generated).tokens().iter().map(|t| oracle_embed(t)).collect();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(0.0, 1.0)
    };
    let mut recall = 0.0;
    for a in &r {
        let mut best: f64 = 0.0;
        for b in &g {
            best = best.max(cos(a, b));
        }
        recall += best;
    }
    let mut precision = 0.0;
    for b in &g {
        let mut best: f64 = 0.0;
        for a in &r {
            best = best.max(cos(a, b));
        }
        precision += best;
    }
    let (rr, pp) = (recall / r.len() as f64, precision / g.len() as f64);
    let f = if rr + pp > 0.0 { 2.0 * rr * pp / (rr + pp) } else { 0.0 };
    (rr, pp, f)
}

const SEMANTIC_PAIRS: [(&str, &str); 20] = [
    ("patient has diabetes", "patient has chronic diabetes"),
    ("blood pressure is elevated", "elevated blood pressure noted"),
    ("no known drug allergies", "allergies none known"),
    ("started metformin 500 mg twice daily", "metformin 500mg bid started"),
    (
        "chest x-ray shows consolidation",
        "consolidation seen on chest radiograph",
    ),
    ("follow up in two weeks", "return visit after 14 days"),
    ("asthma well controlled on inhaler", "inhaler keeps asthma controlled"),
    (
        "fever and productive cough for three days",
        "three day history of cough with fever",
    ),
    ("appendectomy in 2015", "appendix removed 2015"),
    ("smoker one pack per day", "smokes a pack daily"),
    ("hemoglobin a1c 8.2 percent", "hba1c of 8.2"),
    ("no chest pain or shortness of breath", "denies dyspnea and chest pain"),
    ("penicillin allergy causes rash", "rash after penicillin"),
    ("knee pain worse with stairs", "stairs aggravate the knee pain"),
    ("vaccinated against influenza this year", "flu shot given this season"),
    ("lungs clear on auscultation", "clear breath sounds bilaterally"),
    ("referred to cardiology", "cardiology referral placed"),
    ("weight loss of five kilograms", "lost 5 kg"),
    ("mild dehydration treated with fluids", "fluids given for dehydration"),
    ("sleeping poorly due to anxiety", "anxiety disturbing sleep"),
];

fn disjoint_tokens() -> (String, String) {
    let candidates: Vec<String> = (0..400).map(|i| format!("q{i}z")).collect();
    let support = |t: &str| -> BTreeSet<usize> {
        oracle_embed(t)
            .iter()
            .enumerate()
            .filter(|(_, x)| **x > 0.0)
            .map(|(i, _)| i)
            .collect()
    };
    for a in &candidates {
        for b in &candidates {
            if support(a).is_disjoint(&support(b)) {
                return (a.clone(), b.clone());
            }
        }
    }
    panic!("no orthogonal token pair among candidates");
}

fn semantic() -> Check {
    for (r, _) in SEMANTIC_PAIRS {
        let s = semantic_score(&tokenize(r), &tokenize(r), &HashedTrigramEmbedder).map_err(|e| e.to_string())?;
        ensure!(
            close(s.recall, 1.0) && close(s.precision, 1.0) && close(s.f1, 1.0),
            "identity {r:?}: {s:?}"
        );
    }
    let (a, b) = disjoint_tokens();
    let s = semantic_score(&tokenize(&format!("{a} {a}")), &tokenize(&b), &HashedTrigramEmbedder)
        .map_err(|e| e.to_string())?;
    ensure!(
        s.recall == 0.0 && s.precision == 0.0 && s.f1 == 0.0,
        "orthogonal {a}/{b}: {s:?}"
    );

    for t in ["diabetes", "x", "8.2", "naïve"] {
        let mine = oracle_embed(t);
        let theirs = HashedTrigramEmbedder::embed_token(t);
        ensure!(
            mine.iter().zip(&theirs).all(|(x, y)| close(*x, *y)),
            "embedding of {t:?} differs"
        );
    }
    let mut worst: f64 = 0.0;
    for (r, g) in SEMANTIC_PAIRS {
        let got = semantic_score(&tokenize(r), &tokenize(g), &HashedTrigramEmbedder).map_err(|e| e.to_string())?;
        let (wr, wp, wf) = oracle_semantic(r, g);
        for (x, y) in [(got.recall, wr), (got.precision, wp), (got.f1, wf)] {
            worst = worst.max((x - y).abs());
        }
        ensure!(
            close(got.recall, wr) && close(got.precision, wp) && close(got.f1, wf),
            "{r:?}: {got:?} vs ({wr}, {wp}, {wf})"
        );
    }
    Ok(format!(
        "identity 20/20, orthogonal {a}/{b} = 0, oracle max |diff| {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// chatbot state

fn chat_parity() -> Check {
    let h = harness(1);
    let d = PrincipalClaims::user(h.demo.doctors[0].as_str(), Role::Doctor, T0, 3600);
    let system = h.platform.ai.prompts().chatbot.clone();
    let mut calls_checked = 0;
    for n in 0..=50usize {
        let before = h.generator.call_count();
        let first = h
            .platform
            .ai
            .chat_initiate(&d, &format!("question {n}"))
            .map_err(|e| e.to_string())?;
        for k in 0..n {
            h.platform
                .ai
                .chat_continue(&d, &first.conversation_id, &format!("follow-up {n}.{k}"))
                .map_err(|e| e.to_string())?;
        }
        let log = h
            .platform
            .ai
            .get_conversation(&d, &first.conversation_id)
            .map_err(|e| e.to_string())?;
        ensure!(log.turns.len() == 2 * (n + 1), "n={n}: {} turns", log.turns.len());
        let calls = h.generator.calls();
        ensure!(
            calls.len() - before == n + 1,
            "n={n}: {} generator calls",
            calls.len() - before
        );
        for (k, (sys, msgs)) in calls[before..].iter().enumerate() {
            let expected: Vec<ChatMessage> = log.turns[..2 * k + 1]
                .iter()
                .map(|t| match t.author {
                    TurnAuthor::User => ChatMessage::user(t.content.clone()),
                    TurnAuthor::Assistant => ChatMessage::assistant(t.content.clone()),
                })
                .collect();
            ensure!(sys == &system, "n={n} call {k}: system role differs");
            ensure!(
                msgs == &expected,
                "n={n} call {k}: prompt is not history plus the new turn"
            );
            calls_checked += 1;
        }
    }
    Ok(format!(
        "n = 0..=50, {calls_checked} prompts equal persisted history + new turn"
    ))
}

// ---------------------------------------------------------------------------
// audit immutability

fn audit_immutability() -> Check {
    let h = harness(3);
    let mut rng = TestRunner::deterministic();
    let strategy = injected();
    let mut issued = 0;
    while issued < 1000 {
        let mut r = strategy.new_tree(&mut rng).map_err(|e| e.to_string())?.current();
        r.audit_up = true;
        check_request(&h, &r).map_err(|e| e.to_string())?;
        issued += 1;
    }
    let len = h.platform.audit.len();
    let hash = h.platform.audit.stream_hash(len);
    let snapshot = h.platform.audit.snapshot();
    ensure!(len >= 1000, "{len} entries");

    // reads of every kind
    let admin = PrincipalClaims::user(h.demo.admin.as_str(), Role::Admin, T0, 3600);
    for f in [
        AuditFilter::default(),
        AuditFilter {
            action: Some(AuditAction::View),
            ..Default::default()
        },
        AuditFilter {
            patient_id: Some(h.demo.patients[0].clone()),
            ..Default::default()
        },
        AuditFilter {
            from: Some(T0),
            to: Some(T0 + 1),
            ..Default::default()
        },
    ] {
        h.platform
            .audit
            .query(
                &admin,
                &f,
                Page {
                    offset: 0,
                    limit: 10_000,
                },
            )
            .map_err(|e| e.to_string())?;
        h.platform.audit.select(&f, Page::default());
    }
    h.platform
        .audit
        .export_ndjson(std::io::sink())
        .map_err(|e| e.to_string())?;
    h.platform.audit.retention_check(T0);
    let token = h.admin();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let mutations = rt.block_on(async {
        for path in ["/api/audit?limit=1000", "/api/audit/export", "/api/audit/retention"] {
            assert_eq!(h.get(path, &token).await.status, StatusCode::OK, "{path}");
        }
        let mut statuses = Vec::new();
        let first = snapshot[0].entry_id.clone();
        for path in [
            "/api/audit".to_owned(),
            format!("/api/audit/{first}"),
            "/api/audit/export".to_owned(),
        ] {
            for m in [Method::PUT, Method::PATCH, Method::DELETE, Method::POST] {
                statuses.push((
                    m.to_string(),
                    path.clone(),
                    h.call(m, &path, Some(&token), Some(json!({}))).await.status,
                ));
            }
        }
        statuses
    });
    for (m, path, s) in &mutations {
        ensure!(
            *s == StatusCode::METHOD_NOT_ALLOWED || *s == StatusCode::NOT_FOUND,
            "{m} {path} answered {s}"
        );
    }
    ensure!(h.platform.audit.len() == len, "reads appended entries");
    ensure!(
        h.platform.audit.stream_hash(len) == hash,
        "stream hash changed under reads"
    );
    ensure!(h.platform.audit.snapshot() == snapshot, "entries changed under reads");

    // record reads append VIEW entries; the existing prefix must not move
    let (_, doc) = h.doctor(0);
    let ctx = RequestContext::new(RecordOperation::GetRecord)
        .token(doc)
        .patient(h.demo.patients[0].clone());
    ensure!(h.platform.record_request(ctx).result.is_ok(), "doctor read failed");
    ensure!(h.platform.audit.len() == len + 1, "view not audited");
    ensure!(
        h.platform.audit.stream_hash(len) == hash,
        "prefix hash changed after append"
    );

    retention_boundary()?;
    Ok(format!(
        "{len} entries, hash {}… stable; {} mutation attempts refused; retention cut exact",
        &hash[..12],
        mutations.len()
    ))
}

fn retention_boundary() -> Result<(), String> {
    let iso = |s: &str| parse_iso(s).ok_or_else(|| format!("bad fixture time {s}"));
    // (now, entries with their expected due flag)
    let cases = [
        (
            "2031-06-15T12:00:00Z",
            vec![
                ("2026-06-15T11:59:59Z", true),
                ("2026-06-15T12:00:00Z", false),
                ("2026-06-15T12:00:01Z", false),
                ("2020-01-01T00:00:00Z", true),
                ("2031-06-15T12:00:00Z", false),
            ],
        ),
        (
            // leap day: five years back there is no 29 February
            "2032-02-29T00:00:00Z",
            vec![
                ("2027-02-27T23:59:59Z", true),
                ("2027-02-28T00:00:00Z", false),
                ("2027-03-01T00:00:00Z", false),
            ],
        ),
    ];
    for (now, entries) in cases {
        let now = iso(now)?;
        let log = AuditLog::in_memory(Arc::new(ManualClock::new(now)));
        let mut due = Vec::new();
        for (t, is_due) in &entries {
            let e = log
                .append_at(
                    AuditDraft {
                        collection_name: "medical_records".into(),
                        document_id: (*t).to_owned(),
                        patient_id: None,
                        action: AuditAction::View,
                        actor_id: "fixture".into(),
                        ip_address: "127.0.0.1".into(),
                        user_agent: String::new(),
                        reason: "aged fixture".into(),
                        access_type: AccessType::Regular,
                        status: AuditStatus::Success,
                        failed_layer: None,
                        error_kind: None,
                    },
                    iso(t)?,
                )
                .map_err(|e| e.to_string())?;
            if *is_due {
                due.push(e.document_id);
            }
        }
        let got: Vec<String> = log.retention_check(now).into_iter().map(|e| e.document_id).collect();
        ensure!(got == due, "retention at {now}: {got:?}, want {due:?}");
        ensure!(log.len() == entries.len(), "retention check removed entries");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// load scenario

fn load_scenario() -> Check {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(async {
        let cfg = ServerConfig {
            trust_forwarded_for: true,
            ..ServerConfig::default()
        };
        let platform = Arc::new(
            Platform::new(cfg.platform_options(), Arc::new(SystemClock), Default::default())
                .map_err(|e| e.to_string())?,
        );
        let demo = platform.seed_demo(50, PASSWORD).map_err(|e| e.to_string())?;
        let tokens = demo
            .doctors
            .iter()
            .map(|d| platform.login(d.as_str(), PASSWORD).map(|(t, _)| t))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let d = ehr_server::build(platform, &cfg);
        let (addr, server) = ehr_server::spawn(d.router, "127.0.0.1:0".parse().unwrap())
            .await
            .map_err(|e| e.to_string())?;

        let plan = StagePlan::standard();
        ensure!(plan.to_string() == "60s:50,120s:50,60s:0", "plan {plan}");
        let mut scenario = Scenario::new(format!("http://{addr}"), plan, tokens);
        scenario.forwarded_ips = true;
        scenario.think_time = Duration::from_secs(1);
        let out = run_scenario(&scenario).await.map_err(|e| e.to_string())?;
        server.abort();

        let r = &out.report;
        let total: u64 = out.iterations.iter().sum();
        ensure!(
            total == r.requests && r.requests == out.samples.len() as u64,
            "iterations {total} vs samples {}",
            r.requests
        );
        let peak = out.series.iter().map(|p| p.scheduled).max().unwrap_or(0);
        ensure!(peak == 50, "peak scheduled VUs {peak}");
        let verdict = check_thresholds(r, &ThresholdSpec::default()).map_err(|e| e.to_string())?;
        ensure!(r.failure_rate < 0.01, "failure rate {:.4}", r.failure_rate);
        ensure!(r.p95_ms < 500.0, "p95 {:.1} ms", r.p95_ms);
        ensure!(verdict.passed(), "{:?}", verdict.violations);
        Ok(format!(
            "{} requests over {:.0} s, failure rate {:.4}, p50 {:.1} ms, p95 {:.1} ms, p99 {:.1} ms",
            r.requests, r.elapsed_secs, r.failure_rate, r.p50_ms, r.p95_ms, r.p99_ms
        ))
    })
}

// ---------------------------------------------------------------------------
// AI golden files

const GOLDEN_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");
const XRAY_FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/chest_xray.png");

fn ai_outputs() -> Result<Vec<(&'static str, Vec<u8>)>, String> {
    let h = harness(1);
    let d = PrincipalClaims::user(h.demo.doctors[0].as_str(), Role::Doctor, T0, 3600);
    let p = h.demo.patients[0].clone();
    let pretty = |v: &dyn erased::Json| -> Vec<u8> { v.bytes() };
    let summary = h.platform.summarize(&d, &p).map_err(|e| e.to_string())?;
    let visit = h.platform.records.snapshot(&p).unwrap().visits[0].visit_id.clone();
    let report = h.platform.generate_report(&d, &p, &visit).map_err(|e| e.to_string())?;
    let keys: Vec<SectionKey> = report.sections.iter().map(|s| s.key).collect();
    ensure!(keys == SectionKey::ORDER, "section order {keys:?}");
    ensure!(!report.degraded, "report degraded");
    let text = h
        .platform
        .blobs
        .get(&report.storage_ref)
        .ok_or("report blob missing")?
        .bytes;
    let image = std::fs::read(XRAY_FIXTURE).map_err(|e| format!("{XRAY_FIXTURE}: {e}"))?;
    let xray = h
        .platform
        .classify_xray(
            &d,
            &p,
            &image,
            ehr_core::ai::ImageFormatTag::Png,
            Some("chest_xray.png"),
        )
        .map_err(|e| e.to_string())?;
    ensure!(
        xray.label == XrayLabel::Pneumonia && xray.confidence == 0.92,
        "x-ray fixture gave {:?} {}",
        xray.label,
        xray.confidence
    );
    Ok(vec![
        ("summary.json", pretty(&summary)),
        ("report.json", pretty(&report)),
        ("report.txt", text),
        ("xray.json", pretty(&xray)),
    ])
}

mod erased {
    pub trait Json {
        fn bytes(&self) -> Vec<u8>;
    }

    impl<T: serde::Serialize> Json for T {
        fn bytes(&self) -> Vec<u8> {
            let mut v = serde_json::to_vec_pretty(self).expect("serializable");
            v.push(b'\n');
            v
        }
    }
}

fn ai_golden() -> Check {
    let bless = std::env::var_os("EHR_BLESS").is_some();
    if bless && !std::path::Path::new(XRAY_FIXTURE).exists() {
        std::fs::create_dir_all(std::path::Path::new(XRAY_FIXTURE).parent().unwrap()).map_err(|e| e.to_string())?;
        std::fs::write(XRAY_FIXTURE, png(128, 180)).map_err(|e| e.to_string())?;
    }
    let first = ai_outputs()?;
    let second = ai_outputs()?;
    ensure!(first == second, "two runs produced different bytes");
    for (name, bytes) in &first {
        let path = format!("{GOLDEN_DIR}/{name}");
        if bless {
            std::fs::create_dir_all(GOLDEN_DIR).map_err(|e| e.to_string())?;
            std::fs::write(&path, bytes).map_err(|e| e.to_string())?;
        }
        let golden = std::fs::read(&path).map_err(|e| format!("{path}: {e}"))?;
        ensure!(&golden == bytes, "{name} differs from the golden file");
    }
    Ok(format!(
        "{} golden files byte-identical across 2 runs; x-ray {{Pneumonia, 0.92}}",
        first.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        ("access-control truth table", truth_table),
        ("pipeline layer prefix and one audit entry per request", pipeline_prefix),
        ("rate limits per user and per ip with rollover", rate_limits),
        ("rouge oracle equivalence", rouge_oracle),
        ("worked metric fixtures and recall over precision", worked_fixtures),
        ("semantic score identity, orthogonality and cosine oracle", semantic),
        ("chatbot history parity", chat_parity),
        ("audit immutability and retention boundary", audit_immutability),
        ("staged load scenario thresholds", load_scenario),
        ("ai workflow golden files", ai_golden),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
