//! Entry point in front of the service routers: path routing, per-IP and
//! per-principal rate limits, bounded retry on unavailable upstreams, and
//! the access log.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{ConnectInfo, Request, State};
use axum::http::request::Parts;
use axum::response::Response;
use axum::routing::get;
use axum::{Json, Router};
use ehr_core::gateway::{route, RateDecision, RateLimiter, RateLimits, Upstream};
use ehr_core::platform::Platform;
use ehr_core::ErrorKind;
use serde::Serialize;
use serde_json::json;
use tower::ServiceExt;

use crate::error::{error_response, simple_error};
use crate::extract::{bearer, ClientIp};

const ACCESS_LOG_CAPACITY: usize = 50_000;

/// An in-process upstream. It can be switched off to simulate an outage.
pub struct LocalUpstream {
    kind: Upstream,
    router: Router,
    available: AtomicBool,
    attempts: AtomicU64,
}

#[derive(Debug)]
pub struct Unavailable;

impl LocalUpstream {
    pub fn new(kind: Upstream, router: Router) -> Self {
        Self {
            kind,
            router,
            available: AtomicBool::new(true),
            attempts: AtomicU64::new(0),
        }
    }

    pub fn kind(&self) -> Upstream {
        self.kind
    }

    pub fn set_available(&self, up: bool) {
        self.available.store(up, Ordering::SeqCst);
    }

    /// Calls forwarded to this upstream, including failed ones.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    async fn call(&self, req: Request) -> Result<Response, Unavailable> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        if !self.available.load(Ordering::SeqCst) {
            return Err(Unavailable);
        }
        Ok(self.router.clone().oneshot(req).await.unwrap_or_else(|e| match e {}))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccessRecord {
    pub method: String,
    pub path: String,
    pub status: u16,
    pub latency_ms: f64,
    pub client_ip: String,
    pub upstream: Option<&'static str>,
}

pub struct Gateway {
    platform: Arc<Platform>,
    limiter: RateLimiter,
    trust_forwarded_for: bool,
    upstreams: HashMap<Upstream, Arc<LocalUpstream>>,
    max_body: usize,
    access: Mutex<VecDeque<AccessRecord>>,
}

impl Gateway {
    pub fn new(
        platform: Arc<Platform>,
        limits: RateLimits,
        trust_forwarded_for: bool,
        upstreams: Vec<LocalUpstream>,
        max_body: usize,
    ) -> Self {
        Self {
            platform,
            limiter: RateLimiter::new(limits),
            trust_forwarded_for,
            upstreams: upstreams.into_iter().map(|u| (u.kind, Arc::new(u))).collect(),
            max_body,
            access: Mutex::default(),
        }
    }

    pub fn upstream(&self, kind: Upstream) -> Option<&Arc<LocalUpstream>> {
        self.upstreams.get(&kind)
    }

    pub fn limiter(&self) -> &RateLimiter {
        &self.limiter
    }

    /// Most recent access-log records, oldest first.
    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.access.lock().unwrap().iter().cloned().collect()
    }

    fn client_ip(&self, req: &Request, peer: Option<SocketAddr>) -> String {
        if self.trust_forwarded_for {
            let forwarded = req
                .headers()
                .get("x-forwarded-for")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.split(',').next())
                .map(str::trim)
                .filter(|v| !v.is_empty());
            if let Some(ip) = forwarded {
                return ip.to_owned();
            }
        }
        peer.map_or_else(|| "unknown".to_owned(), |p| p.ip().to_string())
    }

    pub async fn handle(&self, peer: Option<SocketAddr>, req: Request) -> Response {
        let started = Instant::now();
        let method = req.method().to_string();
        let path = req.uri().path().to_owned();
        let ip = self.client_ip(&req, peer);
        let (resp, upstream) = self.forward(ip.clone(), req).await;
        let record = AccessRecord {
            method,
            path,
            status: resp.status().as_u16(),
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
            client_ip: ip,
            upstream: upstream.map(Upstream::name),
        };
        tracing::info!(
            target: "access",
            method = %record.method,
            path = %record.path,
            status = record.status,
            latency_ms = record.latency_ms,
            client_ip = %record.client_ip,
        );
        let mut log = self.access.lock().unwrap();
        if log.len() == ACCESS_LOG_CAPACITY {
            log.pop_front();
        }
        log.push_back(record);
        resp
    }

    async fn forward(&self, ip: String, req: Request) -> (Response, Option<Upstream>) {
        let Some(kind) = route(req.uri().path()) else {
            return (simple_error(ErrorKind::NotFound, "no route for this path"), None);
        };
        let subject = bearer(req.headers())
            .and_then(|t| self.platform.identity.validate(&t).ok())
            .map(|c| c.subject);
        if let RateDecision::Deny { limited, retry_after } =
            self.limiter.check_rate(&ip, subject.as_deref(), self.platform.now())
        {
            let body = json!({
                "error_kind": ErrorKind::RateLimited,
                "detail": format!("{limited:?} rate limit exceeded").to_lowercase(),
                "retry_after": retry_after,
            });
            return (
                error_response(ErrorKind::RateLimited, body, Some(retry_after)),
                Some(kind),
            );
        }
        let Some(target) = self.upstreams.get(&kind) else {
            return (
                simple_error(ErrorKind::BadGateway, "upstream not configured"),
                Some(kind),
            );
        };
        let (mut parts, body) = req.into_parts();
        let bytes = match to_bytes(body, self.max_body).await {
            Ok(b) => b,
            Err(_) => {
                return (
                    simple_error(ErrorKind::ValidationError, "request body too large"),
                    Some(kind),
                )
            }
        };
        parts.extensions.insert(ClientIp(ip));
        // one retry at most, and only when the upstream could not be reached
        for _ in 0..2 {
            if let Ok(resp) = target.call(rebuild(&parts, bytes.clone())).await {
                return (resp, Some(kind));
            }
        }
        let detail = format!("{} is unavailable", kind.name());
        (simple_error(ErrorKind::BadGateway, &detail), Some(kind))
    }
}

fn rebuild(parts: &Parts, body: Bytes) -> Request {
    let mut req = Request::new(Body::from(body));
    *req.method_mut() = parts.method.clone();
    *req.uri_mut() = parts.uri.clone();
    *req.version_mut() = parts.version;
    *req.headers_mut() = parts.headers.clone();
    *req.extensions_mut() = parts.extensions.clone();
    req
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn dispatch(State(gw): State<Arc<Gateway>>, req: Request) -> Response {
    let peer = req.extensions().get::<ConnectInfo<SocketAddr>>().map(|c| c.0);
    gw.handle(peer, req).await
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/health", get(health))
        .fallback(dispatch)
        .with_state(gateway)
}
