//! Prompt rendering and completion backends.
//!
//! A backend is anything implementing [`LanguageModel`]. Three ship with the
//! crate: [`ScriptedMock`] replays canned responses, [`FnModel`] wraps a
//! closure, and (with the `remote` feature) [`ChatClient`] talks to a
//! chat-completions endpoint.

mod mock;
pub mod prompts;
#[cfg(feature = "remote")]
mod remote;

use serde::{Deserialize, Serialize};

pub use mock::{ScriptEntry, ScriptedMock};
pub use prompts::PromptTemplates;
#[cfg(feature = "remote")]
pub use remote::{ChatClient, LLM_TOKEN_ENV, LLM_URL_ENV};

use crate::error::GatewayError;
use crate::model::GenerationParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Checks that a conversation is well formed and ready for a completion:
/// an optional leading system message, then strictly alternating
/// user/assistant turns with non-empty content, ending on a user turn.
pub fn validate_messages(messages: &[ChatMessage]) -> Result<(), GatewayError> {
    let body = match messages.first() {
        None => return Err(GatewayError::InvalidRequest("no messages".into())),
        Some(m) if m.role == Role::System => &messages[1..],
        Some(_) => messages,
    };
    if body.is_empty() {
        return Err(GatewayError::InvalidRequest("no user message".into()));
    }
    for (i, m) in body.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
        if m.role != expected {
            return Err(GatewayError::InvalidRequest(format!(
                "message {i} has role {:?}, expected {expected:?}",
                m.role
            )));
        }
        if m.content.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(format!("message {i} is empty")));
        }
    }
    if body.len() % 2 == 0 {
        return Err(GatewayError::InvalidRequest(
            "conversation must end with a user message".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
    pub n_samples: usize,
}

impl GenerationRequest {
    pub fn new(messages: Vec<ChatMessage>, params: &GenerationParams) -> Self {
        GenerationRequest {
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            stop_sequences: params.stop_sequences.clone(),
            n_samples: 1,
        }
    }

    pub fn sampled(mut self, n_samples: usize, temperature: f64) -> Self {
        self.n_samples = n_samples;
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        validate_messages(&self.messages)?;
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens < 1 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if self.n_samples < 1 {
            return Err(GatewayError::InvalidRequest("n_samples must be >= 1".into()));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

pub trait LanguageModel: Send + Sync {
    /// Returns `request.n_samples` completions.
    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, GatewayError>;

    /// A handle for one trajectory. Stateless backends return themselves;
    /// stateful ones (scripts) return an independent copy so that
    /// concurrently running trajectories cannot observe each other.
    fn session(&self) -> Box<dyn LanguageModel + '_>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, GatewayError> {
        (**self).complete(request)
    }

    fn session(&self) -> Box<dyn LanguageModel + '_> {
        (**self).session()
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, GatewayError> {
        (**self).complete(request)
    }

    fn session(&self) -> Box<dyn LanguageModel + '_> {
        (**self).session()
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, GatewayError> {
        (**self).complete(request)
    }

    fn session(&self) -> Box<dyn LanguageModel + '_> {
        (**self).session()
    }
}

/// Sends a validated request and insists on getting `n_samples` back.
pub fn generate(
    backend: &dyn LanguageModel,
    request: &GenerationRequest,
) -> Result<Vec<String>, GatewayError> {
    request.validate()?;
    let out = backend.complete(request)?;
    if out.len() != request.n_samples {
        return Err(GatewayError::Protocol(format!(
            "expected {} completion(s), got {}",
            request.n_samples,
            out.len()
        )));
    }
    Ok(out)
}

/// Adapts a closure into a stateless backend.
pub struct FnModel<F>(pub F);

impl<F> LanguageModel for FnModel<F>
where
    F: Fn(&GenerationRequest) -> Result<Vec<String>, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, GatewayError> {
        (self.0)(request)
    }

    fn session(&self) -> Box<dyn LanguageModel + '_> {
        Box::new(self)
    }
}
