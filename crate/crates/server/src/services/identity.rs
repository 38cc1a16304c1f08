use std::collections::BTreeSet;

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use ehr_core::identity::Role;
use ehr_core::Error;
use serde::{Deserialize, Serialize};

use crate::app::AppState;
use crate::error::ApiError;
use crate::extract::ApiJson;

#[derive(Deserialize)]
struct LoginBody {
    principal_id: String,
    password: String,
}

#[derive(Serialize)]
struct LoginReply {
    access_token: String,
    token_type: &'static str,
    expires_in: i64,
    role: Role,
}

async fn login(State(s): State<AppState>, ApiJson(body): ApiJson<LoginBody>) -> Result<Json<LoginReply>, ApiError> {
    let (access_token, role) = s.platform.login(&body.principal_id, &body.password)?;
    Ok(Json(LoginReply {
        access_token,
        token_type: "Bearer",
        expires_in: s.platform.options().token_ttl_secs,
        role,
    }))
}

#[derive(Deserialize)]
struct TokenBody {
    grant_type: String,
    client_id: String,
    client_secret: String,
    #[serde(default)]
    scope: String,
}

#[derive(Serialize)]
struct TokenReply {
    access_token: String,
    token_type: &'static str,
    expires_in: i64,
    scope: String,
}

async fn token(State(s): State<AppState>, ApiJson(body): ApiJson<TokenBody>) -> Result<Json<TokenReply>, ApiError> {
    if body.grant_type != "client_credentials" {
        return Err(Error::field("grant_type", "only client_credentials is supported").into());
    }
    let scopes: BTreeSet<String> = body.scope.split_whitespace().map(str::to_owned).collect();
    let access_token = s
        .platform
        .client_credentials(&body.client_id, &body.client_secret, &scopes)?;
    Ok(Json(TokenReply {
        access_token,
        token_type: "Bearer",
        expires_in: s.platform.options().token_ttl_secs,
        scope: scopes.into_iter().collect::<Vec<_>>().join(" "),
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/auth/login", post(login))
        .route("/auth/token", post(token))
        .route("/api/auth/login", post(login))
        .route("/api/auth/token", post(token))
        .with_state(state)
}
