use serde::{Deserialize, Serialize};

use super::{ChatMessage, GenerationRequest, LanguageModel};
use crate::error::GatewayError;
use crate::http::{HttpFailure, JsonClient, RetryPolicy};

pub const LLM_URL_ENV: &str = "AUTORAG_LLM_URL";
pub const LLM_TOKEN_ENV: &str = "AUTORAG_LLM_TOKEN";

/// Client for an OpenAI-style chat-completions endpoint.
pub struct ChatClient {
    url: String,
    token: Option<String>,
    model: String,
    client: JsonClient,
}

#[derive(Serialize)]
struct Body<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    n: usize,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct Reply {
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

impl ChatClient {
    pub fn new(url: impl Into<String>, token: Option<String>, model: impl Into<String>) -> Self {
        Self::with_policy(url, token, model, RetryPolicy::default())
    }

    pub fn with_policy(
        url: impl Into<String>,
        token: Option<String>,
        model: impl Into<String>,
        policy: RetryPolicy,
    ) -> Self {
        ChatClient {
            url: url.into(),
            token,
            model: model.into(),
            client: JsonClient::new(policy),
        }
    }

    /// Endpoint and token from `AUTORAG_LLM_URL` / `AUTORAG_LLM_TOKEN`.
    pub fn from_env(model: impl Into<String>) -> Option<Self> {
        let url = std::env::var(LLM_URL_ENV).ok().filter(|u| !u.is_empty())?;
        let token = std::env::var(LLM_TOKEN_ENV).ok();
        Some(ChatClient::new(url, token, model))
    }

    fn request_once(
        &self,
        request: &GenerationRequest,
        n: usize,
    ) -> Result<Vec<String>, GatewayError> {
        let body = Body {
            model: &self.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            n,
            stop: &request.stop_sequences,
        };
        let value = self
            .client
            .post(&self.url, self.token.as_deref(), &body)
            .map_err(|f| match f {
                HttpFailure::Network { attempts, message } => {
                    GatewayError::Network { attempts, message }
                }
                HttpFailure::Protocol(m) => GatewayError::Protocol(m),
            })?;
        let reply: Reply = serde_json::from_value(value)
            .map_err(|e| GatewayError::Protocol(format!("bad completion response: {e}")))?;
        Ok(reply
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }
}

impl LanguageModel for ChatClient {
    /// Endpoints that ignore `n` are topped up with further requests.
    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, GatewayError> {
        let want = request.n_samples;
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            let got = self.request_once(request, want - out.len())?;
            if got.is_empty() {
                return Err(GatewayError::Protocol("response has no choices".into()));
            }
            out.extend(got);
        }
        out.truncate(want);
        Ok(out)
    }

    fn session(&self) -> Box<dyn LanguageModel + '_> {
        Box::new(self)
    }
}
