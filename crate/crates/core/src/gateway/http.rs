//! Live HTTP transport speaking a single chat-completion wire schema.
//!
//! Request body:
//! ```json
//! {"model": "...", "temperature": 0.0, "max_tokens": 2048,
//!  "messages": [{"role": "user", "content": "<prompt>"}]}
//! ```
//! Response body (first choice wins):
//! ```json
//! {"choices": [{"message": {"content": "<completion>"}}]}
//! ```
//! The model identity is configuration, never a code dependency. An auth
//! token, when needed, is read from the environment variable named in the
//! endpoint config and sent as a bearer token.

use super::PromptRequest;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::time::Duration;

/// A transport fault; `transient` faults are retried, others surface
/// immediately.
#[derive(Debug, Clone)]
pub struct TransportFault {
    pub transient: bool,
    pub detail: String,
}

/// Raw completion transport: prompt in, completion text out.
pub trait Transport: Send + Sync {
    fn send(&self, request: &PromptRequest) -> Result<String, TransportFault>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Full URL of the chat-completion endpoint.
    pub base_url: String,
    /// Model name forwarded verbatim in the request body.
    pub model: String,
    /// Name of the environment variable holding the bearer token; no auth
    /// header is sent when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
}

pub struct HttpTransport {
    endpoint: EndpointConfig,
    agent: ureq::Agent,
}

const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

impl HttpTransport {
    pub fn new(endpoint: EndpointConfig) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(REQUEST_TIMEOUT))
            .build();
        HttpTransport {
            endpoint,
            agent: config.new_agent(),
        }
    }

    fn bearer_token(&self) -> Result<Option<String>, TransportFault> {
        match &self.endpoint.token_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(token) => Ok(Some(token)),
                Err(_) => Err(TransportFault {
                    transient: false,
                    detail: format!("auth token environment variable `{var}` is not set"),
                }),
            },
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &PromptRequest) -> Result<String, TransportFault> {
        let body = json!({
            "model": self.endpoint.model,
            "temperature": request.temperature,
            "max_tokens": request.max_output,
            "messages": [{"role": "user", "content": request.text}],
        });

        let mut builder = self
            .agent
            .post(&self.endpoint.base_url)
            .header("content-type", "application/json");
        if let Some(token) = self.bearer_token()? {
            builder = builder.header("authorization", format!("Bearer {token}"));
        }

        let mut response =
            builder
                .send(body.to_string().as_bytes())
                .map_err(|e| TransportFault {
                    transient: true,
                    detail: format!("request failed: {e}"),
                })?;

        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportFault {
                transient: true,
                detail: format!("failed reading response body: {e}"),
            })?;

        if !(200..300).contains(&status) {
            let transient = status == 429 || (500..600).contains(&status);
            return Err(TransportFault {
                transient,
                detail: format!(
                    "endpoint returned status {status}: {}",
                    truncate(&text, 300)
                ),
            });
        }

        extract_completion(&text).ok_or_else(|| TransportFault {
            transient: false,
            detail: format!(
                "response body has no choices[0].message.content: {}",
                truncate(&text, 300)
            ),
        })
    }
}

fn extract_completion(body: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(body).ok()?;
    value
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

fn truncate(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}
