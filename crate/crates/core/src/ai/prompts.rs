use std::collections::BTreeMap;

use serde::Deserialize;

use crate::{Error, Result};

const BUILTIN: &str = include_str!("../../assets/prompts.toml");

#[derive(Debug, Clone, Deserialize)]
struct RoleText {
    text: String,
}

#[derive(Debug, Clone, Deserialize)]
struct PromptFile {
    version: u32,
    roles: BTreeMap<String, RoleText>,
}

/// Versioned system-role texts for the three generator workflows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub version: u32,
    pub summarizer: String,
    pub chatbot: String,
    pub report_recommender: String,
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN).expect("bundled prompt asset is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: PromptFile = toml::from_str(text).map_err(|e| Error::Internal(format!("prompt asset: {e}")))?;
        let take = |name: &str| {
            file.roles
                .get(name)
                .map(|r| r.text.trim().to_owned())
                .filter(|t| !t.is_empty())
                .ok_or_else(|| Error::Internal(format!("prompt asset lacks role {name:?}")))
        };
        Ok(Self {
            version: file.version,
            summarizer: take("summarizer")?,
            chatbot: take("chatbot")?,
            report_recommender: take("report_recommender")?,
        })
    }
}
