//! Request extractors shared by the service routers.

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, FromRequestParts, Request};
use axum::http::header::{AUTHORIZATION, USER_AGENT};
use axum::http::request::Parts;
use axum::http::HeaderMap;
use axum::Json;
use ehr_core::identity::PrincipalClaims;
use ehr_core::platform::Origin;
use ehr_core::Error;
use serde::de::DeserializeOwned;

use crate::app::AppState;
use crate::error::ApiError;

/// Client address as resolved by the gateway.
#[derive(Debug, Clone)]
pub struct ClientIp(pub String);

pub fn bearer(headers: &HeaderMap) -> Option<String> {
    let v = headers.get(AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = v.split_once(' ')?;
    scheme
        .eq_ignore_ascii_case("bearer")
        .then(|| token.trim().to_owned())
        .filter(|t| !t.is_empty())
}

/// The raw bearer token, unvalidated. Record endpoints hand it to the
/// security pipeline, which authenticates it as its first layer.
pub struct RawToken(pub Option<String>);

impl<S: Send + Sync> FromRequestParts<S> for RawToken {
    type Rejection = std::convert::Infallible;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        Ok(RawToken(bearer(&parts.headers)))
    }
}

/// An authenticated caller; rejects with 401 otherwise.
pub struct Principal(pub PrincipalClaims);

impl FromRequestParts<AppState> for Principal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = bearer(&parts.headers);
        Ok(Principal(state.platform.authenticate(token.as_deref())?))
    }
}

/// A caller that may be anonymous. A token that is present must be valid.
pub struct MaybePrincipal(pub Option<PrincipalClaims>);

impl FromRequestParts<AppState> for MaybePrincipal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        match bearer(&parts.headers) {
            None => Ok(MaybePrincipal(None)),
            Some(t) => Ok(MaybePrincipal(Some(state.platform.authenticate(Some(&t))?))),
        }
    }
}

pub struct RequestOrigin(pub Origin);

impl<S: Send + Sync> FromRequestParts<S> for RequestOrigin {
    type Rejection = std::convert::Infallible;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        let ip = parts
            .extensions
            .get::<ClientIp>()
            .map_or_else(|| "unknown".to_owned(), |c| c.0.clone());
        let ua = parts
            .headers
            .get(USER_AGENT)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_owned();
        Ok(RequestOrigin(Origin::new(ip, ua)))
    }
}

/// `Json` whose rejections use the platform's error body.
pub struct ApiJson<T>(pub T);

impl<T, S> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|e: JsonRejection| Error::field("$", e.body_text()).into())
    }
}
