use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use ehr_core::gateway::{CacheTtls, RateLimits};
use ehr_core::platform::PlatformOptions;
use serde::{Deserialize, Serialize};

/// Settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub url: String,
    pub model: String,
    #[serde(default = "default_generator_timeout")]
    pub timeout_secs: u64,
}

fn default_generator_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Take the client address from `X-Forwarded-For` instead of the socket.
    /// Only enable behind a proxy you control.
    pub trust_forwarded_for: bool,
    pub rate_limits: RateLimits,
    pub cache_ttls: CacheTtls,
    pub token_ttl_secs: i64,
    pub signing_key: String,
    pub ai_client_secret: String,
    /// Append-only NDJSON audit file. In-memory when unset.
    pub audit_log_path: Option<PathBuf>,
    pub audit_retention_years: u32,
    pub max_upload_bytes: usize,
    /// Uses the deterministic reference generator when unset.
    pub generator: Option<GeneratorConfig>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        let p = PlatformOptions::default();
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            trust_forwarded_for: false,
            rate_limits: RateLimits::default(),
            cache_ttls: p.cache_ttls,
            token_ttl_secs: p.token_ttl_secs,
            signing_key: String::from_utf8(p.signing_key).expect("ascii default key"),
            ai_client_secret: p.ai_client_secret,
            audit_log_path: None,
            audit_retention_years: p.audit_retention_years,
            max_upload_bytes: 16 * 1024 * 1024,
            generator: None,
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn platform_options(&self) -> PlatformOptions {
        PlatformOptions {
            signing_key: self.signing_key.as_bytes().to_vec(),
            token_ttl_secs: self.token_ttl_secs,
            cache_ttls: self.cache_ttls,
            audit_retention_years: self.audit_retention_years,
            ai_client_secret: self.ai_client_secret.clone(),
        }
    }
}
