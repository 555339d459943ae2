//! Ranked passage retrieval: an in-memory BM25 index and, with the `remote`
//! feature, a client for an external retrieval service.

mod bm25;
#[cfg(feature = "remote")]
mod remote;

use std::cmp::Ordering;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

pub use bm25::{CorpusIndex, Posting, BM25_B, BM25_K1};
#[cfg(feature = "remote")]
pub use remote::RemoteRetriever;

use crate::error::RetrievalError;
use crate::jsonl::{read_jsonl, JsonlError};
use crate::model::Document;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub document: Document,
    pub score: f64,
}

/// Anything that can return the top `k` passages for a query.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError>;
}

impl<R: Retriever + ?Sized> Retriever for &R {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        (**self).retrieve(query, k)
    }
}

impl<R: Retriever + ?Sized> Retriever for std::sync::Arc<R> {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        (**self).retrieve(query, k)
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Score descending, ties by ascending document id.
pub fn rank_order(a: &RetrievalResult, b: &RetrievalResult) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.document.id.cmp(&b.document.id))
}

pub fn sort_results(results: &mut [RetrievalResult]) {
    results.sort_by(rank_order);
}

/// Reads a corpus file: one `{"id", "title", "text"}` object per line.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>, JsonlError> {
    read_jsonl(reader)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(
            tokenize("Coolie No. 1 (1995 Film)"),
            vec!["coolie", "no", "1", "1995", "film"]
        );
        assert!(tokenize(" ,.;").is_empty());
        assert_eq!(tokenize("Ünïcode-Straße"), vec!["ünïcode", "straße"]);
    }

    #[test]
    fn ties_break_by_id() {
        let mk = |id: &str, s: f64| RetrievalResult {
            document: Document::new(id, "", "x"),
            score: s,
        };
        let mut v = vec![mk("b", 1.0), mk("a", 1.0), mk("c", 2.0)];
        sort_results(&mut v);
        let ids: Vec<_> = v.iter().map(|r| r.document.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }
}
