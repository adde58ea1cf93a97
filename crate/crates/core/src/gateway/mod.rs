//! Chat-completion gateway.
//!
//! Every LLM call in the pipeline goes through [`Gateway`], which validates
//! the request, bounds the number of in-flight requests, retries retryable
//! transport failures with exponential backoff and keeps request tallies.
//! The backend behind it is either a live HTTP endpoint or a replay fixture
//! directory keyed by the SHA-256 digest of the prompt text.

mod backends;
pub mod parse;
pub mod template;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use backends::{HttpChat, RecordingChat, ReplayChat, ScriptedChat};
pub use parse::{
    format_string_list, format_triplet, format_triplet_list, parse_definitions, parse_mcq_answer,
    parse_string_list, parse_triplet_list, McqChoice, Parsed, ParsedDefinitions,
};
pub use template::{FewShotExample, PromptTemplate};

use crate::backend::{Limiter, RetryPolicy, DEFAULT_MAX_IN_FLIGHT};
use crate::error::{BackendError, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_tag: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::Precondition("chat request has no messages".into()));
        }
        match self.messages.iter().find(|m| m.role != Role::System) {
            Some(m) if m.role == Role::User => {}
            _ => {
                return Err(Error::Precondition(
                    "first non-system message must come from the user".into(),
                ))
            }
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| m.role != Role::System && m.content.trim().is_empty())
        {
            return Err(Error::Precondition(format!(
                "empty {:?} message content",
                m.role
            )));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Precondition("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::Precondition(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The text replay fixtures are keyed by: message contents joined by a
    /// blank line. For the single-message prompts the pipeline sends this is
    /// exactly the rendered prompt.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// The backend stopped because it hit the output token limit.
    pub truncated: bool,
}

impl Completion {
    pub fn new(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            truncated: false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    /// Stable identifier recorded in run manifests.
    fn id(&self) -> String;

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError>;

    /// Fixture digests served so far (replay backends only).
    fn used_fixtures(&self) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub model_tag: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            model_tag: "default".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: usize,
    pub retries: usize,
    pub truncated: usize,
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    config: GatewayConfig,
    retry: RetryPolicy,
    limiter: Limiter,
    requests: AtomicUsize,
    retries: AtomicUsize,
    truncated: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, config: GatewayConfig) -> Self {
        let limiter = Limiter::new(config.max_in_flight);
        Gateway {
            backend,
            config,
            retry: RetryPolicy::default(),
            limiter,
            requests: AtomicUsize::new(0),
            retries: AtomicUsize::new(0),
            truncated: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn used_fixtures(&self) -> Vec<String> {
        self.backend.used_fixtures()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.requests.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            truncated: self.truncated.load(Ordering::Relaxed),
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        request.validate()?;
        let _permit = self.limiter.acquire();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let completion = self.retry.run(
            || self.backend.complete(request),
            |_| {
                self.retries.fetch_add(1, Ordering::Relaxed);
            },
        )?;
        if completion.truncated {
            self.truncated.fetch_add(1, Ordering::Relaxed);
        }
        Ok(completion)
    }

    /// Sends a single user prompt with the configured sampling settings.
    pub fn ask(&self, prompt: &str) -> Result<Completion> {
        self.complete(&ChatRequest {
            messages: vec![ChatMessage::user(prompt)],
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
            model_tag: self.config.model_tag.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn request(messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            messages,
            temperature: 0.0,
            max_output_tokens: 16,
            model_tag: "m".into(),
        }
    }

    #[test]
    fn request_validation() {
        assert!(request(vec![]).validate().is_err());
        assert!(request(vec![ChatMessage::system("s")]).validate().is_err());
        assert!(request(vec![ChatMessage::user("  ")]).validate().is_err());
        let assistant_first = ChatMessage {
            role: Role::Assistant,
            content: "hi".into(),
        };
        assert!(request(vec![assistant_first]).validate().is_err());
        assert!(
            request(vec![ChatMessage::system(""), ChatMessage::user("q")])
                .validate()
                .is_ok()
        );
    }

    #[test]
    fn prompt_text_joins_contents() {
        let r = request(vec![ChatMessage::system("a"), ChatMessage::user("b")]);
        assert_eq!(r.prompt_text(), "a\n\nb");
    }

    #[test]
    fn gateway_retries_transport_failures() {
        use std::sync::atomic::AtomicUsize;
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let backend = ScriptedChat::new("flaky", move |_prompt: &str| {
            if c.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(BackendError::Status {
                    status: 429,
                    body: "slow down".into(),
                })
            } else {
                Ok("[]".to_string())
            }
        });
        let gw =
            Gateway::new(Arc::new(backend), GatewayConfig::default()).with_retry(RetryPolicy {
                max_retries: 3,
                initial_backoff: Duration::from_millis(1),
                max_backoff: Duration::from_millis(2),
            });
        assert_eq!(gw.ask("q").unwrap().text, "[]");
        assert_eq!(gw.stats().retries, 2);
        assert_eq!(gw.stats().requests, 1);
    }
}
