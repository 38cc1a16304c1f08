//! Text generation over an OpenAI-compatible chat-completions endpoint.

use std::time::Duration;

use ehr_core::ai::{ChatMessage, GeneratorClient};
use ehr_core::{Error, Result};
use serde::{Deserialize, Serialize};
use tokio::runtime::Handle;

use crate::config::GeneratorConfig;

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

/// Blocking adapter over an async client. Call it from a blocking-pool
/// thread, never from inside an async task.
pub struct HttpGenerator {
    client: reqwest::Client,
    runtime: Handle,
    url: String,
    model: String,
}

impl HttpGenerator {
    pub fn new(config: &GeneratorConfig, runtime: Handle) -> Result<Self> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Internal(format!("generator client: {e}")))?;
        Ok(Self {
            client,
            runtime,
            url: config.url.clone(),
            model: config.model.clone(),
        })
    }

    async fn complete(&self, system_role: &str, messages: &[ChatMessage]) -> Result<String> {
        let mut wire = vec![WireMessage {
            role: "system",
            content: system_role,
        }];
        wire.extend(messages.iter().map(|m| WireMessage {
            role: match m.role {
                ehr_core::ai::ChatRole::System => "system",
                ehr_core::ai::ChatRole::User => "user",
                ehr_core::ai::ChatRole::Assistant => "assistant",
            },
            content: &m.content,
        }));
        let body = CompletionRequest {
            model: &self.model,
            messages: wire,
        };
        let upstream = |e: reqwest::Error| Error::Upstream(format!("generator: {e}"));
        let resp = self.client.post(&self.url).json(&body).send().await.map_err(upstream)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::Upstream(format!("generator returned {status}")));
        }
        let reply: CompletionReply = resp.json().await.map_err(upstream)?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .ok_or_else(|| Error::Upstream("generator returned no content".into()))
    }
}

impl GeneratorClient for HttpGenerator {
    fn generate(&self, system_role: &str, messages: &[ChatMessage]) -> Result<String> {
        self.runtime.block_on(self.complete(system_role, messages))
    }
}
