//! Token issuance and validation for users and services.
//!
//! The provider is a self-contained stand-in for an external identity
//! service: user tokens carry a role and the permission set derived from it,
//! service tokens (client-credentials grant) carry scopes and nothing else.

mod permissions;
mod token;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

pub use permissions::{role_permissions, scopes, Permission, Role};
pub use token::{GrantType, PrincipalClaims, SignedToken, TokenRejection, TokenSigner};

use crate::clock::Clock;

pub const DEFAULT_AUDIENCE: &str = "https://gateway-ehr-api.com";
pub const DEFAULT_ISSUER: &str = "https://ehr.local/";

/// Looks up which role a registered principal holds.
pub trait PrincipalDirectory: Send + Sync {
    fn role_of(&self, principal_id: &str) -> Option<Role>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("unknown principal {0}")]
    UnknownPrincipal(String),
    #[error("principal {principal} does not hold role {role}")]
    RoleMismatch { principal: String, role: Role },
    #[error("invalid ttl: must be positive")]
    InvalidTtl,
    #[error("service tokens are issued through the client-credentials grant")]
    ServiceRoleRejected,
    #[error("authentication failed")]
    BadCredentials,
    #[error("scope {0:?} is not allowed for this client")]
    ScopeNotAllowed(String),
}

impl From<IdentityError> for crate::Error {
    fn from(e: IdentityError) -> Self {
        match e {
            IdentityError::InvalidTtl => crate::Error::field("ttl", "must be positive"),
            IdentityError::ScopeNotAllowed(_) | IdentityError::ServiceRoleRejected => {
                crate::Error::Forbidden(e.to_string())
            }
            _ => crate::Error::Unauthorized(e.to_string()),
        }
    }
}

/// A registered machine client.
#[derive(Clone)]
pub struct ServiceCredential {
    pub client_id: String,
    pub client_secret: String,
    pub allowed_scopes: BTreeSet<String>,
}

impl fmt::Debug for ServiceCredential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServiceCredential")
            .field("client_id", &self.client_id)
            .field("client_secret", &"<redacted>")
            .field("allowed_scopes", &self.allowed_scopes)
            .finish()
    }
}

struct StoredClient {
    secret_digest: Vec<u8>,
    allowed_scopes: BTreeSet<String>,
    // serializes secret checks per client
    gate: Mutex<()>,
}

pub struct IdentityProvider {
    signer: TokenSigner,
    audiences: Vec<String>,
    clock: Arc<dyn Clock>,
    principals: Arc<dyn PrincipalDirectory>,
    clients: RwLock<HashMap<String, Arc<StoredClient>>>,
    passwords: RwLock<HashMap<String, Vec<u8>>>,
}

impl fmt::Debug for IdentityProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IdentityProvider")
            .field("signer", &self.signer)
            .field("audiences", &self.audiences)
            .finish_non_exhaustive()
    }
}

impl IdentityProvider {
    pub fn new(signer: TokenSigner, clock: Arc<dyn Clock>, principals: Arc<dyn PrincipalDirectory>) -> Self {
        Self {
            signer,
            audiences: vec![DEFAULT_AUDIENCE.to_owned()],
            clock,
            principals,
            clients: RwLock::default(),
            passwords: RwLock::default(),
        }
    }

    pub fn with_audiences(mut self, audiences: Vec<String>) -> Self {
        self.audiences = audiences;
        self
    }

    pub fn signer(&self) -> &TokenSigner {
        &self.signer
    }

    pub fn audience(&self) -> &str {
        self.audiences.first().map(String::as_str).unwrap_or(DEFAULT_AUDIENCE)
    }

    pub fn register_client(&self, credential: ServiceCredential) {
        let stored = StoredClient {
            secret_digest: self.signer.keyed_digest(&[
                b"client",
                credential.client_id.as_bytes(),
                credential.client_secret.as_bytes(),
            ]),
            allowed_scopes: credential.allowed_scopes,
            gate: Mutex::new(()),
        };
        self.clients
            .write()
            .unwrap()
            .insert(credential.client_id, Arc::new(stored));
    }

    /// Stores a login secret for a directory principal.
    pub fn set_password(&self, principal_id: &str, password: &str) {
        let digest = self
            .signer
            .keyed_digest(&[b"user", principal_id.as_bytes(), password.as_bytes()]);
        self.passwords.write().unwrap().insert(principal_id.to_owned(), digest);
    }

    pub fn issue_user_token(&self, principal_id: &str, role: Role, ttl: i64) -> Result<SignedToken, IdentityError> {
        if ttl <= 0 {
            return Err(IdentityError::InvalidTtl);
        }
        if role == Role::Service {
            return Err(IdentityError::ServiceRoleRejected);
        }
        match self.principals.role_of(principal_id) {
            None => return Err(IdentityError::UnknownPrincipal(principal_id.to_owned())),
            Some(r) if r != role => {
                return Err(IdentityError::RoleMismatch {
                    principal: principal_id.to_owned(),
                    role,
                })
            }
            Some(_) => {}
        }
        let now = self.clock.now();
        let claims = PrincipalClaims {
            subject: principal_id.to_owned(),
            roles: [role].into(),
            permissions: role_permissions(role),
            audiences: self.audiences.clone(),
            issued_at: now,
            expires_at: now + ttl,
            scopes: BTreeSet::new(),
            grant_type: GrantType::Password,
        };
        Ok(self.signer.sign(&claims))
    }

    /// Password login for a directory principal; the role comes from the
    /// directory.
    pub fn login(&self, principal_id: &str, password: &str, ttl: i64) -> Result<(SignedToken, Role), IdentityError> {
        let expected = self
            .passwords
            .read()
            .unwrap()
            .get(principal_id)
            .cloned()
            .ok_or(IdentityError::BadCredentials)?;
        if !self
            .signer
            .keyed_verify(&[b"user", principal_id.as_bytes(), password.as_bytes()], &expected)
        {
            return Err(IdentityError::BadCredentials);
        }
        let role = self
            .principals
            .role_of(principal_id)
            .ok_or_else(|| IdentityError::UnknownPrincipal(principal_id.to_owned()))?;
        Ok((self.issue_user_token(principal_id, role, ttl)?, role))
    }

    pub fn issue_service_token(
        &self,
        client_id: &str,
        client_secret: &str,
        requested_scopes: &BTreeSet<String>,
        ttl: i64,
    ) -> Result<SignedToken, IdentityError> {
        if ttl <= 0 {
            return Err(IdentityError::InvalidTtl);
        }
        let client = self
            .clients
            .read()
            .unwrap()
            .get(client_id)
            .cloned()
            .ok_or(IdentityError::BadCredentials)?;
        {
            let _gate = client.gate.lock().unwrap();
            if !self.signer.keyed_verify(
                &[b"client", client_id.as_bytes(), client_secret.as_bytes()],
                &client.secret_digest,
            ) {
                return Err(IdentityError::BadCredentials);
            }
        }
        if let Some(s) = requested_scopes.iter().find(|s| !client.allowed_scopes.contains(*s)) {
            return Err(IdentityError::ScopeNotAllowed(s.clone()));
        }
        let now = self.clock.now();
        let claims = PrincipalClaims {
            subject: client_id.to_owned(),
            roles: [Role::Service].into(),
            permissions: BTreeSet::new(),
            audiences: self.audiences.clone(),
            issued_at: now,
            expires_at: now + ttl,
            scopes: requested_scopes.clone(),
            grant_type: GrantType::ClientCredentials,
        };
        Ok(self.signer.sign(&claims))
    }

    pub fn validate_token(
        &self,
        token: &str,
        expected_audience: &str,
        now: i64,
    ) -> Result<PrincipalClaims, TokenRejection> {
        self.signer.verify(token, expected_audience, now)
    }

    /// Validates against the provider's own audience and clock.
    pub fn validate(&self, token: &str) -> Result<PrincipalClaims, TokenRejection> {
        self.validate_token(token, self.audience(), self.clock.now())
    }
}
