//! Pluggable chat-completion provider: a deterministic scripted replay for
//! tests and offline runs, and a generic HTTP chat-completion client.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    /// Pure replay from `<dir>/<role_tag>/<zero-padded ordinal>.txt`.
    Scripted { scripted_dir: PathBuf },
    /// Chat-completion endpoint speaking the usual wire shape.
    Http {
        endpoint_url: String,
        model_name: String,
        api_key_env_var: String,
        /// Overrides the per-role default temperatures when set.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        temperature: Option<f64>,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
        #[serde(default = "default_timeout_seconds")]
        timeout_seconds: u64,
    },
}

fn default_max_retries() -> u32 {
    3
}

fn default_timeout_seconds() -> u64 {
    120
}

/// Idea roles run warm, code and critic roles run cold.
pub fn role_temperature(role_tag: &str) -> f64 {
    match role_tag {
        "code_agent" | "code_critic" | "idea_critic" => 0.2,
        _ => 0.7,
    }
}

/// One completed provider call, kept for the iteration transcript dump.
#[derive(Debug, Clone)]
pub struct TranscriptEntry {
    pub role_tag: String,
    pub ordinal: u32,
    pub prompt: String,
    pub reply: String,
}

/// Stateful provider handle: owns the per-role call ordinals so that
/// scripted replay and resume stay aligned.
pub struct Provider {
    config: ProviderConfig,
    ordinals: BTreeMap<String, u32>,
    log: Vec<TranscriptEntry>,
}

impl Provider {
    pub fn new(config: ProviderConfig) -> Self {
        Provider {
            config,
            ordinals: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn ordinals(&self) -> &BTreeMap<String, u32> {
        &self.ordinals
    }

    pub fn restore_ordinals(&mut self, ordinals: BTreeMap<String, u32>) {
        self.ordinals = ordinals;
    }

    /// Drains the calls made since the last drain.
    pub fn take_log(&mut self) -> Vec<TranscriptEntry> {
        std::mem::take(&mut self.log)
    }

    /// Sends one completion request tagged with the calling role and
    /// returns the raw assistant text.
    pub fn complete(
        &mut self,
        messages: &[ChatMessage],
        role_tag: &str,
    ) -> Result<String, AgentError> {
        let ordinal = *self.ordinals.get(role_tag).unwrap_or(&0);
        let reply = match &self.config {
            ProviderConfig::Scripted { scripted_dir } => {
                let path = scripted_dir
                    .join(role_tag)
                    .join(format!("{ordinal:03}.txt"));
                std::fs::read_to_string(&path).map_err(|_| AgentError::ScriptExhausted {
                    role_tag: role_tag.to_string(),
                    ordinal,
                })?
            }
            ProviderConfig::Http {
                endpoint_url,
                model_name,
                api_key_env_var,
                temperature,
                max_retries,
                timeout_seconds,
            } => http_complete(
                endpoint_url,
                model_name,
                api_key_env_var,
                temperature.unwrap_or_else(|| role_temperature(role_tag)),
                *max_retries,
                *timeout_seconds,
                messages,
            )?,
        };
        self.ordinals.insert(role_tag.to_string(), ordinal + 1);
        let prompt = messages
            .iter()
            .map(|m| format!("[{:?}]\n{}", m.role, m.content))
            .collect::<Vec<_>>()
            .join("\n\n");
        self.log.push(TranscriptEntry {
            role_tag: role_tag.to_string(),
            ordinal,
            prompt,
            reply: reply.clone(),
        });
        Ok(reply)
    }
}

fn http_complete(
    endpoint_url: &str,
    model_name: &str,
    api_key_env_var: &str,
    temperature: f64,
    max_retries: u32,
    timeout_seconds: u64,
    messages: &[ChatMessage],
) -> Result<String, AgentError> {
    let api_key = std::env::var(api_key_env_var).map_err(|_| {
        AgentError::Transport(format!(
            "api key environment variable {api_key_env_var} is not set"
        ))
    })?;
    let body = serde_json::json!({
        "model": model_name,
        "messages": messages,
        "temperature": temperature,
    })
    .to_string();

    let attempts = max_retries.max(1);
    let mut last_err = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            // Exponential backoff: 100ms, 200ms, 400ms, ...
            std::thread::sleep(Duration::from_millis(100 << (attempt - 1).min(6)));
        }
        let result = ureq::post(endpoint_url)
            .timeout(Duration::from_secs(timeout_seconds))
            .set("Authorization", &format!("Bearer {api_key}"))
            .set("Content-Type", "application/json")
            .send_string(&body);
        match result {
            Ok(resp) => {
                let text = resp
                    .into_string()
                    .map_err(|e| AgentError::Transport(format!("reading response body: {e}")))?;
                return extract_content(&text);
            }
            Err(ureq::Error::Status(code, resp)) if code >= 500 => {
                last_err = format!(
                    "http {code}: {}",
                    resp.into_string()
                        .unwrap_or_default()
                        .chars()
                        .take(200)
                        .collect::<String>()
                );
            }
            Err(ureq::Error::Status(code, resp)) => {
                // Client errors are not retryable.
                return Err(AgentError::Transport(format!(
                    "http {code}: {}",
                    resp.into_string()
                        .unwrap_or_default()
                        .chars()
                        .take(200)
                        .collect::<String>()
                )));
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(AgentError::Transport(format!(
        "{attempts} attempts failed, last error: {last_err}"
    )))
}

fn extract_content(body: &str) -> Result<String, AgentError> {
    let v: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| AgentError::Transport(format!("malformed completion response: {e}")))?;
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| {
            AgentError::Transport("completion response lacks choices[0].message.content".into())
        })
}
