mod common;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use common::*;
use ehr_core::gateway::{RateLimits, Upstream};
use ehr_server::ServerConfig;
use serde_json::json;

fn visit() -> serde_json::Value {
    json!({"examination_type": "follow_up", "date": "2025-01-20", "diagnosis": "asthma"})
}

#[tokio::test]
async fn health_answers_and_unknown_paths_are_404() {
    let h = harness(1);
    let r = h.call(Method::GET, "/health", None, None).await;
    assert_eq!((r.status, r.body["status"].as_str()), (StatusCode::OK, Some("ok")));
    let r = h.call(Method::GET, "/api/nowhere", None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.body["error_kind"], "not_found");
    // prefix matching respects segment boundaries
    let r = h.call(Method::GET, "/api/recordsX/1", None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn user_limit_denies_request_101_until_the_window_rolls() {
    let h = harness(1);
    let (_, t) = h.doctor(0);
    for i in 0..100 {
        let r = h.get("/api/user/profile", &t).await;
        assert_eq!(r.status, StatusCode::OK, "request {}", i + 1);
    }
    let r = h.get("/api/user/profile", &t).await;
    assert_eq!(r.status, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(r.body["error_kind"], "rate_limited");
    let retry: u64 = r.headers["retry-after"].to_str().unwrap().parse().unwrap();
    assert!((1..=60).contains(&retry));
    // another principal from the same address is unaffected
    let (_, other) = h.patient(0);
    assert_eq!(h.get("/api/user/profile", &other).await.status, StatusCode::OK);

    h.clock.advance(retry as i64);
    assert_eq!(h.get("/api/user/profile", &t).await.status, StatusCode::OK);
}

#[tokio::test]
async fn forwarded_address_is_used_only_when_trusted() {
    let cfg = ServerConfig {
        trust_forwarded_for: true,
        rate_limits: RateLimits {
            per_ip: 3,
            ..RateLimits::default()
        },
        ..ServerConfig::default()
    };
    let h = harness_with(1, &cfg);
    let hit = |ip: &'static str| {
        Request::builder()
            .uri("/api/hospitals")
            .header("x-forwarded-for", ip)
            .body(Body::empty())
            .unwrap()
    };
    for _ in 0..3 {
        assert_eq!(h.send(hit("10.0.0.1")).await.status, StatusCode::UNAUTHORIZED);
    }
    assert_eq!(h.send(hit("10.0.0.1")).await.status, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(h.send(hit("10.0.0.2, 10.9.9.9")).await.status, StatusCode::UNAUTHORIZED);
    let log = h.gateway.access_log();
    assert_eq!(log.last().unwrap().client_ip, "10.0.0.2");
    assert_eq!(log.len(), 5);
}

#[tokio::test]
async fn unavailable_upstream_is_retried_once_then_502() {
    let h = harness(1);
    let (_, t) = h.doctor(0);
    let up = h.gateway.upstream(Upstream::UserDirectory).unwrap().clone();
    up.set_available(false);
    let before = up.attempts();
    let r = h.get("/api/user/profile", &t).await;
    assert_eq!(r.status, StatusCode::BAD_GATEWAY);
    assert_eq!(r.body["error_kind"], "bad_gateway");
    assert_eq!(up.attempts() - before, 2);

    up.set_available(true);
    let before = up.attempts();
    assert_eq!(h.get("/api/user/profile", &t).await.status, StatusCode::OK);
    assert_eq!(up.attempts() - before, 1);
    // other upstreams were never touched by the outage
    assert_eq!(h.gateway.upstream(Upstream::AuditLog).unwrap().attempts(), 0);
}

#[tokio::test]
async fn login_and_client_credentials() {
    let h = harness(1);
    let d = h.demo.doctors[0].to_string();
    let r = h
        .call(
            Method::POST,
            "/auth/login",
            None,
            Some(json!({"principal_id": d, "password": PASSWORD})),
        )
        .await;
    assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
    assert_eq!(r.body["role"], "doctor");
    let token = r.body["access_token"].as_str().unwrap().to_owned();
    let p = h.get("/api/user/profile", &token).await;
    assert_eq!(
        (p.body["role"].as_str(), p.body["doctor_id"].as_str()),
        (Some("doctor"), Some(d.as_str()))
    );

    let r = h
        .call(
            Method::POST,
            "/api/auth/login",
            None,
            Some(json!({"principal_id": d, "password": "nope"})),
        )
        .await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);

    let body = json!({"grant_type": "client_credentials", "client_id": "ai-orchestrator",
                      "client_secret": h.platform.options().ai_client_secret, "scope": "record:read"});
    let r = h.call(Method::POST, "/auth/token", None, Some(body.clone())).await;
    assert_eq!(
        (r.status, r.body["scope"].as_str()),
        (StatusCode::OK, Some("record:read"))
    );
    let mut wider = body;
    wider["scope"] = json!("record:read audit:read");
    assert_ne!(
        h.call(Method::POST, "/auth/token", None, Some(wider)).await.status,
        StatusCode::OK
    );

    let r = h
        .call(Method::POST, "/auth/login", None, Some(json!({"principal_id": 5})))
        .await;
    assert_eq!(
        (r.status, r.body["error_kind"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("validation_error"))
    );
}

#[tokio::test]
async fn record_errors_name_the_failing_layer() {
    let h = harness(2);
    let (_, doc) = h.doctor(0);
    let (p0, pat) = h.patient(0);
    let p1 = h.demo.patients[1].to_string();
    let visits = format!("/api/records/{p0}/visits");

    let r = h.call(Method::POST, &visits, None, Some(visit())).await;
    assert_eq!(
        (r.status, r.body["layer"].as_str()),
        (StatusCode::UNAUTHORIZED, Some("authentication"))
    );
    assert_eq!(r.body["detail"], "Unauthorized");

    let r = h.post(&visits, &pat, visit()).await;
    assert_eq!(
        (r.status, r.body["layer"].as_str()),
        (StatusCode::FORBIDDEN, Some("authorization"))
    );

    let mut bad = visit();
    bad.as_object_mut().unwrap().remove("diagnosis");
    let r = h.post(&visits, &doc, bad).await;
    assert_eq!(
        (r.status, r.body["layer"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("validation"))
    );
    assert!(r.body["fields"].to_string().contains("diagnosis"), "{}", r.body);

    let r = h.post(&format!("/api/records/{p1}/visits"), &doc, visit()).await;
    assert_eq!(
        (r.status, r.body["layer"].as_str()),
        (StatusCode::FORBIDDEN, Some("access_control"))
    );
    assert_eq!(r.body["error_kind"], "access_denied");

    let r = h.post(&visits, &doc, visit()).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);

    let r = h.get(&visits, &pat).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body.as_array().unwrap().len(), 2);

    let r = h.post(&format!("/api/records/{p0}/tattoos"), &doc, json!({})).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let allergy = json!({"allergen": "penicillin", "category": "drug", "severity": "severe"});
    let r = h.post(&format!("/api/records/{p0}/allergies"), &doc, allergy).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    let r = h
        .call(
            Method::DELETE,
            &format!("/api/records/{p0}/allergies/alg-999999"),
            Some(&doc),
            None,
        )
        .await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert!(r.body.get("layer").is_none(), "{}", r.body);

    let r = h.call(Method::POST, &visits, Some(&doc), None).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn audit_outage_rejects_the_write() {
    let h = harness(1);
    let (_, doc) = h.doctor(0);
    let p0 = h.demo.patients[0].clone();
    let version = h.platform.records.version(&p0);
    h.audit_up.store(false, std::sync::atomic::Ordering::SeqCst);
    let r = h.post(&format!("/api/records/{p0}/visits"), &doc, visit()).await;
    assert_eq!(
        (r.status, r.body["layer"].as_str()),
        (StatusCode::INTERNAL_SERVER_ERROR, Some("audit"))
    );
    assert_eq!(h.platform.records.version(&p0), version);
}

#[tokio::test]
async fn admissions_gate_record_reads_over_http() {
    let h = harness(1);
    let admin = h.admin();
    let (d0, doc) = h.doctor(0);
    let p0 = h.demo.patients[0].to_string();
    let record = format!("/api/records/{p0}");
    assert_eq!(h.get(&record, &doc).await.status, StatusCode::OK);
    assert_eq!(h.get(&record, &admin).await.status, StatusCode::FORBIDDEN);

    let list = h.get(&format!("/api/admissions?doctor_id={d0}"), &doc).await;
    let id = list.body[0]["admission_id"].as_str().unwrap().to_owned();
    let r = h
        .call(
            Method::POST,
            &format!("/api/admissions/{id}/discharge"),
            Some(&admin),
            None,
        )
        .await;
    assert_eq!(
        (r.status, r.body["state"].as_str()),
        (StatusCode::OK, Some("discharged"))
    );
    let r = h.get(&record, &doc).await;
    assert_eq!(
        (r.status, r.body["layer"].as_str()),
        (StatusCode::FORBIDDEN, Some("access_control"))
    );

    let r = h
        .post("/api/admissions", &admin, json!({"patient_id": p0, "doctor_id": d0}))
        .await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(h.get(&record, &doc).await.status, StatusCode::OK);
}

#[tokio::test]
async fn approved_data_addition_lands_in_the_record() {
    let h = harness(1);
    let admin = h.admin();
    let (d0, doc) = h.doctor(0);
    let (p0, pat) = h.patient(0);
    let r = h
        .post(
            "/api/requests/data-addition",
            &pat,
            json!({"data_type": "diagnosis", "issuance_date": "2025-01-02", "document_ref": "scan-17", "description": "hypertension"}),
        )
        .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    let id = r.body["request_id"].as_str().unwrap().to_owned();

    let resolve = format!("/api/requests/data-addition/{id}/resolve");
    let r = h.post(&resolve, &doc, json!({"verdict": "approved"})).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);

    let r = h
        .post(
            &format!("/api/requests/data-addition/{id}/forward"),
            &admin,
            json!({"doctor_id": d0}),
        )
        .await;
    assert_eq!(r.body["state"], "forwarded");
    let r = h.post(&resolve, &doc, json!({"verdict": "approved"})).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    assert_eq!(r.body["applied"].as_array().unwrap().len(), 1);
    assert_eq!(
        h.post(&resolve, &doc, json!({"verdict": "approved"})).await.status,
        StatusCode::CONFLICT
    );

    let rec = h.get(&format!("/api/records/{p0}"), &pat).await;
    assert_eq!(rec.body["conditions"][0]["name"], "hypertension", "{}", rec.body);
}

#[tokio::test]
async fn registration_contacts_and_examinations() {
    let h = harness(2);
    let admin = h.admin();
    let r = h
        .call(
            Method::POST,
            "/api/patients",
            None,
            Some(json!({"national_id": "29912311234567", "name": "Self Registered"})),
        )
        .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    let dup = h
        .call(
            Method::POST,
            "/api/patients",
            None,
            Some(json!({"national_id": "29912311234567", "name": "Again"})),
        )
        .await;
    assert_eq!(dup.status, StatusCode::CONFLICT);

    let (_, pat) = h.patient(0);
    let c = json!({"name": "Sara", "phone": "+20 100 000 0000"});
    let a = h.post("/api/contacts", &pat, c.clone()).await;
    let b = h.post("/api/contacts", &pat, c).await;
    assert_eq!(a.body["contact_id"], b.body["contact_id"]);
    assert_eq!(h.get("/api/contacts", &pat).await.body.as_array().unwrap().len(), 1);
    assert_eq!(h.get("/api/contacts", &admin).await.status, StatusCode::FORBIDDEN);

    let r = h
        .post(
            "/api/requests/examination",
            &pat,
            json!({"requested_type": "cardiology"}),
        )
        .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    let id = r.body["request_id"].as_str().unwrap().to_owned();
    let d1 = h.demo.doctors[1].to_string();
    let r = h
        .post(
            &format!("/api/requests/examination/{id}/schedule"),
            &admin,
            json!({"doctor_id": d1}),
        )
        .await;
    assert_eq!(r.body["request"]["state"], "scheduled", "{}", r.body);
    assert_eq!(h.get("/api/hospitals", &pat).await.body.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn chat_over_http_keeps_history() {
    let h = harness(1);
    let (_, doc) = h.doctor(0);
    let r = h
        .post("/chat/initiate/", &doc, json!({"user_input": "What is asthma?"}))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    let id = r.body["conversation_id"].as_str().unwrap().to_owned();
    let r = h
        .post(
            "/chat/continue",
            &doc,
            json!({"conversation_id": id, "user_input": "And treatment?"}),
        )
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    let log = h.get(&format!("/chat/{id}"), &doc).await;
    assert_eq!(log.body["turns"].as_array().unwrap().len(), 4);
    let list = h.get("/chats/", &doc).await;
    assert_eq!(list.body[0]["first_turn_preview"], "What is asthma?");

    let (_, other) = h.patient(0);
    assert_eq!(
        h.get(&format!("/chat/{id}"), &other).await.status,
        StatusCode::FORBIDDEN
    );
    h.generator.inner().set_available(false);
    let r = h
        .post(
            "/chat/continue/",
            &doc,
            json!({"conversation_id": id, "user_input": "still there?"}),
        )
        .await;
    assert_eq!(r.status, StatusCode::BAD_GATEWAY);
    assert_eq!(
        h.get(&format!("/chat/{id}"), &doc).await.body["turns"]
            .as_array()
            .unwrap()
            .len(),
        4
    );
}

#[tokio::test]
async fn summary_report_and_xray_over_http() {
    let h = harness(2);
    let (_, doc) = h.doctor(0);
    let p0 = h.demo.patients[0].to_string();
    let p1 = h.demo.patients[1].to_string();

    let r = h.post(&format!("/api/ai/summarize/{p0}"), &doc, json!({})).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    assert!(!r.body["summary_text"].as_str().unwrap().is_empty());
    let r = h.post(&format!("/api/ai/summarize/{p1}"), &doc, json!({})).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    // the record fetch behind the summary is audited under the service
    let audit = h
        .get(
            &format!("/api/audit?actor_id=ai-orchestrator&patient_id={p0}"),
            &h.admin(),
        )
        .await;
    assert_eq!(audit.body.as_array().unwrap().len(), 1, "{}", audit.body);

    let visit = h.platform.records.snapshot(&h.demo.patients[0]).unwrap().visits[0]
        .visit_id
        .to_string();
    let r = h.post(&format!("/api/ai/report/{p0}/{visit}"), &doc, json!({})).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    assert_eq!(r.body["sections"].as_array().unwrap().len(), 5);
    let id = r.body["report_id"].as_str().unwrap().to_owned();
    assert_eq!(h.get(&format!("/api/ai/reports/{id}"), &doc).await.body, r.body);

    let (ct, body) = multipart("pneumonia_case.png", &png(64, 40), None);
    let req = Request::builder()
        .method(Method::POST)
        .uri(format!("/api/ai/xray/{p0}"))
        .header("authorization", format!("Bearer {doc}"))
        .header("content-type", ct)
        .body(Body::from(body))
        .unwrap();
    let r = h.send(req).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    assert_eq!(
        (r.body["label"].as_str(), r.body["confidence"].as_f64()),
        (Some("Pneumonia"), Some(0.92))
    );
    let xid = r.body["result_id"].as_str().unwrap().to_owned();

    let r = h
        .post(
            &format!("/api/ai/xray/{xid}/review"),
            &doc,
            json!({"verdict": "overridden", "final_label": "Normal"}),
        )
        .await;
    assert_eq!(
        (r.status, r.body["final_label"].as_str()),
        (StatusCode::OK, Some("Normal"))
    );
    let hist = h.get(&format!("/api/ai/xray/{p0}"), &doc).await;
    assert_eq!(hist.body.as_array().unwrap().len(), 1);

    let (ct, body) = multipart("scan.bin", b"garbage", None);
    let req = Request::builder()
        .method(Method::POST)
        .uri(format!("/api/ai/xray/{p0}"))
        .header("authorization", format!("Bearer {doc}"))
        .header("content-type", ct)
        .body(Body::from(body))
        .unwrap();
    assert_eq!(h.send(req).await.status, StatusCode::UNPROCESSABLE_ENTITY);

    h.generator.inner().set_available(false);
    let r = h.post(&format!("/api/ai/report/{p0}/{visit}"), &doc, json!({})).await;
    assert_eq!(
        (r.status, r.body["degraded"].as_bool()),
        (StatusCode::CREATED, Some(true))
    );
}

#[tokio::test]
async fn audit_is_read_only_and_admin_only() {
    let h = harness(1);
    let admin = h.admin();
    let (_, doc) = h.doctor(0);
    let p0 = h.demo.patients[0].to_string();
    h.get(&format!("/api/records/{p0}"), &doc).await;

    let r = h.get("/api/audit?action=VIEW", &admin).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body.as_array().unwrap().len(), 1);
    assert_eq!(h.get("/api/audit", &doc).await.status, StatusCode::FORBIDDEN);
    let r = h.get("/api/audit?from=yesterday", &admin).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = h.get("/api/audit/export", &admin).await;
    assert_eq!(r.headers["content-type"], "application/x-ndjson");
    assert_eq!(r.raw.iter().filter(|&&b| b == b'\n').count(), h.platform.audit.len());

    for m in [Method::PUT, Method::DELETE, Method::PATCH, Method::POST] {
        let r = h.call(m.clone(), "/api/audit", Some(&admin), Some(json!({}))).await;
        assert_eq!(r.status, StatusCode::METHOD_NOT_ALLOWED, "{m}");
    }
    let r = h.get("/api/audit/retention", &admin).await;
    assert_eq!(
        (
            r.body["retention_years"].as_u64(),
            r.body["entries_past_horizon"].as_u64()
        ),
        (Some(5), Some(0))
    );
}
