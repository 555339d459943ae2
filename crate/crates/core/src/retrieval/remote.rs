use serde::{Deserialize, Serialize};

use super::{sort_results, RetrievalResult, Retriever};
use crate::error::RetrievalError;
use crate::http::{HttpFailure, JsonClient, RetryPolicy};
use crate::model::Document;

/// Client for a retrieval service speaking
/// `POST {"query", "k"} -> {"results": [{"id", "title", "text", "score"}]}`.
pub struct RemoteRetriever {
    endpoint: String,
    client: JsonClient,
}

#[derive(Serialize)]
struct SearchRequest<'a> {
    query: &'a str,
    k: usize,
}

#[derive(Deserialize)]
struct SearchResponse {
    results: Vec<Hit>,
}

#[derive(Deserialize)]
struct Hit {
    id: String,
    #[serde(default)]
    title: String,
    text: String,
    score: f64,
}

impl RemoteRetriever {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self::with_policy(endpoint, RetryPolicy::default())
    }

    pub fn with_policy(endpoint: impl Into<String>, policy: RetryPolicy) -> Self {
        RemoteRetriever {
            endpoint: endpoint.into(),
            client: JsonClient::new(policy),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Retriever for RemoteRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let value = self
            .client
            .post(&self.endpoint, None, &SearchRequest { query, k })
            .map_err(|f| match f {
                HttpFailure::Network { attempts, message } => {
                    RetrievalError::Network { attempts, message }
                }
                HttpFailure::Protocol(m) => RetrievalError::Protocol(m),
            })?;
        let parsed: SearchResponse = serde_json::from_value(value)
            .map_err(|e| RetrievalError::Protocol(format!("bad search response: {e}")))?;
        let mut results: Vec<RetrievalResult> = parsed
            .results
            .into_iter()
            .map(|h| RetrievalResult {
                document: Document {
                    id: h.id,
                    title: h.title,
                    text: h.text,
                },
                score: h.score,
            })
            .collect();
        sort_results(&mut results);
        results.truncate(k);
        Ok(results)
    }
}
