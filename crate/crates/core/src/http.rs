//! Blocking JSON-over-HTTP with bounded exponential backoff.

use std::time::Duration;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1` after `n` failures: base · 2^(n−1).
    pub fn delay_after(&self, failures: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(failures.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum HttpFailure {
    Network { attempts: u32, message: String },
    Protocol(String),
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    policy: RetryPolicy,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl JsonClient {
    pub(crate) fn new(policy: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(policy.timeout))
            .build()
            .into();
        JsonClient { agent, policy }
    }

    /// POSTs `body` and parses the reply as JSON, retrying transport
    /// failures, 429 and 5xx responses.
    pub(crate) fn post<B: Serialize>(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &B,
    ) -> Result<serde_json::Value, HttpFailure> {
        let attempts = self.policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.once(url, bearer, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(m)) => return Err(HttpFailure::Protocol(m)),
                Err(Attempt::Retry(m)) => last = m,
            }
            if attempt < attempts {
                std::thread::sleep(self.policy.delay_after(attempt));
            }
        }
        Err(HttpFailure::Network {
            attempts,
            message: last,
        })
    }

    fn once<B: Serialize>(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &B,
    ) -> Result<serde_json::Value, Attempt> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer.filter(|t| !t.is_empty()) {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(classify)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(format!("reading body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(format!("HTTP {status}: {}", snippet(&text))));
        }
        serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(format!("invalid JSON ({e}): {}", snippet(&text))))
    }
}

fn classify(e: ureq::Error) -> Attempt {
    match e {
        ureq::Error::BadUri(_) | ureq::Error::Http(_) | ureq::Error::Json(_) => {
            Attempt::Fatal(e.to_string())
        }
        other => Attempt::Retry(other.to_string()),
    }
}

fn snippet(s: &str) -> String {
    s.chars().take(200).collect()
}
