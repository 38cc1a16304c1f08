use std::collections::BTreeSet;
use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::{Permission, Role};

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrantType {
    Password,
    ClientCredentials,
}

/// Decoded payload of a signed bearer token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrincipalClaims {
    pub subject: String,
    pub roles: BTreeSet<Role>,
    pub permissions: BTreeSet<Permission>,
    pub audiences: Vec<String>,
    pub issued_at: i64,
    pub expires_at: i64,
    pub scopes: BTreeSet<String>,
    pub grant_type: GrantType,
}

impl PrincipalClaims {
    /// Claims for a human principal with the role's full permission set.
    pub fn user(subject: &str, role: Role, issued_at: i64, ttl: i64) -> Self {
        Self {
            subject: subject.to_owned(),
            roles: [role].into(),
            permissions: super::role_permissions(role),
            audiences: vec![super::DEFAULT_AUDIENCE.to_owned()],
            issued_at,
            expires_at: issued_at + ttl,
            scopes: BTreeSet::new(),
            grant_type: GrantType::Password,
        }
    }

    /// Claims for a machine client holding `scopes` and no permissions.
    pub fn service(client_id: &str, scopes: &[&str], issued_at: i64, ttl: i64) -> Self {
        Self {
            subject: client_id.to_owned(),
            roles: [Role::Service].into(),
            permissions: BTreeSet::new(),
            audiences: vec![super::DEFAULT_AUDIENCE.to_owned()],
            issued_at,
            expires_at: issued_at + ttl,
            scopes: scopes.iter().map(|s| (*s).to_owned()).collect(),
            grant_type: GrantType::ClientCredentials,
        }
    }

    pub fn has_role(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }

    pub fn has_permission(&self, permission: Permission) -> bool {
        self.permissions.contains(&permission)
    }

    pub fn has_scope(&self, scope: &str) -> bool {
        self.scopes.contains(scope)
    }

    pub fn is_service(&self) -> bool {
        self.grant_type == GrantType::ClientCredentials || self.has_role(Role::Service)
    }

    /// The role that decides relationship checks. Tokens carry one role in
    /// practice; if several are present the most privileged clinical role wins.
    pub fn primary_role(&self) -> Option<Role> {
        [Role::Service, Role::Doctor, Role::Admin, Role::Patient]
            .into_iter()
            .find(|r| self.roles.contains(r))
    }
}

/// Wire payload. Field names follow the common identity-provider layout.
#[derive(Debug, Serialize, Deserialize)]
struct WirePayload {
    iss: String,
    sub: String,
    #[serde(default)]
    user_roles: Vec<Role>,
    aud: Vec<String>,
    iat: i64,
    exp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scope: Option<String>,
    gty: GrantType,
    #[serde(default)]
    permissions: Vec<Permission>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireHeader {
    alg: String,
    typ: String,
}

/// `header.payload.signature`, each part base64url without padding.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignedToken(pub String);

impl SignedToken {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for SignedToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: String = self.0.chars().take(12).collect();
        write!(f, "SignedToken({head}…)")
    }
}

impl fmt::Display for SignedToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Why a token was refused. Callers only ever see "unauthorized"; the
/// reason is kept for the audit trail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRejection {
    Missing,
    Malformed,
    BadSignature,
    UntrustedIssuer,
    Expired,
    AudienceMismatch,
}

impl fmt::Display for TokenRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenRejection::Missing => "missing token",
            TokenRejection::Malformed => "malformed token",
            TokenRejection::BadSignature => "bad signature",
            TokenRejection::UntrustedIssuer => "untrusted issuer",
            TokenRejection::Expired => "token expired",
            TokenRejection::AudienceMismatch => "audience mismatch",
        };
        f.write_str(s)
    }
}

const ALG: &str = "HS256";

/// HMAC-SHA256 signer and verifier over a single symmetric key.
#[derive(Clone)]
pub struct TokenSigner {
    key: Vec<u8>,
    issuer: String,
}

impl fmt::Debug for TokenSigner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenSigner")
            .field("issuer", &self.issuer)
            .finish_non_exhaustive()
    }
}

impl TokenSigner {
    pub fn new(key: impl Into<Vec<u8>>, issuer: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            issuer: issuer.into(),
        }
    }

    pub fn issuer(&self) -> &str {
        &self.issuer
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.key).expect("HMAC accepts keys of any length")
    }

    /// Keyed digest of arbitrary bytes, used for secret storage.
    pub(crate) fn keyed_digest(&self, parts: &[&[u8]]) -> Vec<u8> {
        let mut mac = self.mac();
        for p in parts {
            mac.update(&(p.len() as u64).to_be_bytes());
            mac.update(p);
        }
        mac.finalize().into_bytes().to_vec()
    }

    /// Constant-time check of `expected` against the keyed digest of `parts`.
    pub(crate) fn keyed_verify(&self, parts: &[&[u8]], expected: &[u8]) -> bool {
        let mut mac = self.mac();
        for p in parts {
            mac.update(&(p.len() as u64).to_be_bytes());
            mac.update(p);
        }
        mac.verify_slice(expected).is_ok()
    }

    pub fn sign(&self, claims: &PrincipalClaims) -> SignedToken {
        let header = WireHeader {
            alg: ALG.into(),
            typ: "JWT".into(),
        };
        let payload = WirePayload {
            iss: self.issuer.clone(),
            sub: claims.subject.clone(),
            user_roles: claims.roles.iter().copied().collect(),
            aud: claims.audiences.clone(),
            iat: claims.issued_at,
            exp: claims.expires_at,
            scope: (!claims.scopes.is_empty()).then(|| claims.scopes.iter().cloned().collect::<Vec<_>>().join(" ")),
            gty: claims.grant_type,
            permissions: claims.permissions.iter().copied().collect(),
        };
        let h = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&header).expect("header serializes"));
        let p = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&payload).expect("payload serializes"));
        let signing_input = format!("{h}.{p}");
        let mut mac = self.mac();
        mac.update(signing_input.as_bytes());
        let sig = URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes());
        SignedToken(format!("{signing_input}.{sig}"))
    }

    /// Checks signature, issuer, expiry (`now < exp`) and audience, in that
    /// order, and returns the decoded claims.
    pub fn verify(&self, token: &str, expected_audience: &str, now: i64) -> Result<PrincipalClaims, TokenRejection> {
        let mut parts = token.split('.');
        let (Some(h), Some(p), Some(s), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(TokenRejection::Malformed);
        };
        let sig = URL_SAFE_NO_PAD.decode(s).map_err(|_| TokenRejection::Malformed)?;
        let mut mac = self.mac();
        mac.update(h.as_bytes());
        mac.update(b".");
        mac.update(p.as_bytes());
        mac.verify_slice(&sig).map_err(|_| TokenRejection::BadSignature)?;

        let header: WireHeader = URL_SAFE_NO_PAD
            .decode(h)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .ok_or(TokenRejection::Malformed)?;
        if header.alg != ALG {
            return Err(TokenRejection::Malformed);
        }
        let payload: WirePayload = URL_SAFE_NO_PAD
            .decode(p)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .ok_or(TokenRejection::Malformed)?;

        if payload.iss != self.issuer {
            return Err(TokenRejection::UntrustedIssuer);
        }
        if payload.exp <= payload.iat {
            return Err(TokenRejection::Malformed);
        }
        if now >= payload.exp {
            return Err(TokenRejection::Expired);
        }
        if !payload.aud.iter().any(|a| a == expected_audience) {
            return Err(TokenRejection::AudienceMismatch);
        }

        Ok(PrincipalClaims {
            subject: payload.sub,
            roles: payload.user_roles.into_iter().collect(),
            permissions: payload.permissions.into_iter().collect(),
            audiences: payload.aud,
            issued_at: payload.iat,
            expires_at: payload.exp,
            scopes: payload
                .scope
                .map(|s| s.split_whitespace().map(str::to_owned).collect())
                .unwrap_or_default(),
            grant_type: payload.gty,
        })
    }

    /// Decodes the payload without verifying anything. For diagnostics only.
    pub fn peek_payload(token: &str) -> Option<serde_json::Value> {
        let p = token.split('.').nth(1)?;
        serde_json::from_slice(&URL_SAFE_NO_PAD.decode(p).ok()?).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::role_permissions;

    const AUD: &str = "https://gateway-ehr-api.com";

    fn doctor_claims() -> PrincipalClaims {
        PrincipalClaims {
            subject: "doc-000001".into(),
            roles: [Role::Doctor].into(),
            permissions: role_permissions(Role::Doctor),
            audiences: vec![AUD.into(), "https://ehr.example/userinfo".into()],
            issued_at: 1_738_340_572,
            expires_at: 1_738_426_972,
            scopes: BTreeSet::new(),
            grant_type: GrantType::Password,
        }
    }

    fn signer() -> TokenSigner {
        TokenSigner::new(b"test-key".to_vec(), "https://issuer.test/")
    }

    #[test]
    fn round_trip() {
        let c = doctor_claims();
        let t = signer().sign(&c);
        assert_eq!(signer().verify(t.as_str(), AUD, c.issued_at).unwrap(), c);
    }

    #[test]
    fn wire_payload_uses_expected_field_names() {
        let t = signer().sign(&doctor_claims());
        let v = TokenSigner::peek_payload(t.as_str()).unwrap();
        for key in ["user_roles", "permissions", "aud", "iat", "exp", "gty", "sub", "iss"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v.get("scope").is_none());
        assert_eq!(v["user_roles"][0], "doctor");
        assert_eq!(v["gty"], "password");
    }

    #[test]
    fn every_flipped_payload_byte_is_rejected() {
        let t = signer().sign(&doctor_claims()).0;
        let dot1 = t.find('.').unwrap();
        let dot2 = t.rfind('.').unwrap();
        for i in dot1 + 1..dot2 {
            let mut bytes = t.clone().into_bytes();
            bytes[i] = if bytes[i] == b'A' { b'B' } else { b'A' };
            let tampered = String::from_utf8(bytes).unwrap();
            if tampered == t {
                continue;
            }
            assert!(signer().verify(&tampered, AUD, 1_738_340_600).is_err(), "byte {i}");
        }
    }

    #[test]
    fn expiry_boundary() {
        let c = doctor_claims();
        let t = signer().sign(&c);
        assert!(signer().verify(t.as_str(), AUD, c.expires_at - 1).is_ok());
        assert_eq!(
            signer().verify(t.as_str(), AUD, c.expires_at),
            Err(TokenRejection::Expired)
        );
    }

    #[test]
    fn other_key_or_audience_rejected() {
        let c = doctor_claims();
        let t = signer().sign(&c);
        let other = TokenSigner::new(b"other-key".to_vec(), "https://issuer.test/");
        assert_eq!(
            other.verify(t.as_str(), AUD, c.issued_at),
            Err(TokenRejection::BadSignature)
        );
        assert_eq!(
            signer().verify(t.as_str(), "https://elsewhere", c.issued_at),
            Err(TokenRejection::AudienceMismatch)
        );
        let foreign_issuer = TokenSigner::new(b"test-key".to_vec(), "https://evil/");
        assert_eq!(
            foreign_issuer.verify(t.as_str(), AUD, c.issued_at),
            Err(TokenRejection::UntrustedIssuer)
        );
    }

    #[test]
    fn garbage_is_malformed() {
        assert_eq!(signer().verify("abc", AUD, 0), Err(TokenRejection::Malformed));
        assert_eq!(signer().verify("a.b.c.d", AUD, 0), Err(TokenRejection::Malformed));
    }
}
