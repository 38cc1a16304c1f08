#![allow(dead_code)]

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use ehr_core::ai::{RecordingGenerator, ReferenceGenerator, Switchable};
use ehr_core::audit::{AuditEntry, AuditStore};
use ehr_core::clock::ManualClock;
use ehr_core::identity::Role;
use ehr_core::platform::{Backends, DemoPopulation, Platform};
use ehr_core::{Error, Result};
use ehr_server::gateway::Gateway;
use ehr_server::ServerConfig;
use serde_json::Value;
use tower::ServiceExt;

pub const T0: i64 = 1_738_340_572;
pub const PASSWORD: &str = "correct horse";

pub type Gen = RecordingGenerator<Switchable<ReferenceGenerator>>;

/// Audit store that refuses writes while switched off.
pub struct FlakyStore(pub Arc<AtomicBool>);

impl AuditStore for FlakyStore {
    fn append(&self, _: &AuditEntry) -> Result<()> {
        if self.0.load(Ordering::SeqCst) {
            Ok(())
        } else {
            Err(Error::Internal("audit store offline".into()))
        }
    }

    fn load(&self) -> Result<Vec<AuditEntry>> {
        Ok(Vec::new())
    }
}

pub struct Harness {
    pub clock: Arc<ManualClock>,
    pub platform: Arc<Platform>,
    pub gateway: Arc<Gateway>,
    pub router: Router,
    pub generator: Arc<Gen>,
    pub audit_up: Arc<AtomicBool>,
    pub demo: DemoPopulation,
}

pub fn harness_with(n: usize, config: &ServerConfig) -> Harness {
    let clock = Arc::new(ManualClock::new(T0));
    let generator = Arc::new(RecordingGenerator::new(Switchable::new(ReferenceGenerator)));
    let audit_up = Arc::new(AtomicBool::new(true));
    let backends = Backends {
        generator: generator.clone(),
        audit_store: Box::new(FlakyStore(audit_up.clone())),
        ..Backends::default()
    };
    let platform = Arc::new(Platform::new(config.platform_options(), clock.clone(), backends).unwrap());
    let demo = platform.seed_demo(n, PASSWORD).unwrap();
    let d = ehr_server::build(platform.clone(), config);
    Harness {
        clock,
        platform,
        gateway: d.gateway,
        router: d.router,
        generator,
        audit_up,
        demo,
    }
}

pub fn harness(n: usize) -> Harness {
    harness_with(n, &ServerConfig::default())
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Value,
    pub raw: Vec<u8>,
}

impl Harness {
    pub fn token(&self, id: &str, role: Role) -> String {
        self.platform.identity.issue_user_token(id, role, 3600).unwrap().0
    }

    pub fn doctor(&self, i: usize) -> (String, String) {
        let id = self.demo.doctors[i].to_string();
        let t = self.token(&id, Role::Doctor);
        (id, t)
    }

    pub fn patient(&self, i: usize) -> (String, String) {
        let id = self.demo.patients[i].to_string();
        let t = self.token(&id, Role::Patient);
        (id, t)
    }

    pub fn admin(&self) -> String {
        self.token(self.demo.admin.as_str(), Role::Admin)
    }

    pub async fn send(&self, req: Request<Body>) -> Reply {
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let raw = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
        let body = serde_json::from_slice(&raw).unwrap_or(Value::Null);
        Reply {
            status,
            headers,
            body,
            raw,
        }
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Reply {
        let mut b = Request::builder().method(method).uri(path);
        if let Some(t) = token {
            b = b.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(v) => b
                .header("content-type", "application/json")
                .body(Body::from(serde_json::to_vec(&v).unwrap())),
            None => b.body(Body::empty()),
        };
        self.send(req.unwrap()).await
    }

    pub async fn get(&self, path: &str, token: &str) -> Reply {
        self.call(Method::GET, path, Some(token), None).await
    }

    pub async fn post(&self, path: &str, token: &str, body: Value) -> Reply {
        self.call(Method::POST, path, Some(token), Some(body)).await
    }
}

/// Deterministic grey PNG: a diagonal gradient offset by `shade`.
pub fn png(side: u32, shade: u8) -> Vec<u8> {
    let img = image::GrayImage::from_fn(side, side, |x, y| {
        image::Luma([shade.saturating_add(((x + y) % 32) as u8)])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

pub fn multipart(file_name: &str, bytes: &[u8], format: Option<&str>) -> (String, Vec<u8>) {
    let boundary = "----ehr-test-boundary";
    let mut body = Vec::new();
    body.extend(format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"{file_name}\"\r\nContent-Type: application/octet-stream\r\n\r\n"
    ).bytes());
    body.extend_from_slice(bytes);
    body.extend(b"\r\n");
    if let Some(f) = format {
        body.extend(format!("--{boundary}\r\nContent-Disposition: form-data; name=\"format\"\r\n\r\n{f}\r\n").bytes());
    }
    body.extend(format!("--{boundary}--\r\n").bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}
