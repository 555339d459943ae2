//! Okapi BM25 over an in-memory inverted index.
//!
//! score(D, Q) = Σ_{t ∈ distinct(Q)} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|D|/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//!
//! The `1 +` inside the logarithm keeps idf positive for terms that occur in
//! more than half of the corpus. Documents are indexed on title plus text.

use std::collections::{BTreeSet, HashMap};

use super::{sort_results, tokenize, RetrievalResult, Retriever};
use crate::error::RetrievalError;
use crate::model::Document;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: usize,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct CorpusIndex {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
}

impl CorpusIndex {
    pub fn build(documents: impl IntoIterator<Item = Document>) -> Result<Self, RetrievalError> {
        let mut docs = Vec::new();
        let mut by_id = HashMap::new();
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::new();
        for doc in documents {
            let slot = docs.len();
            if by_id.insert(doc.id.clone(), slot).is_some() {
                return Err(RetrievalError::DuplicateId(doc.id));
            }
            let tokens = tokenize(&doc.contents());
            doc_lengths.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: slot,
                    tf: count,
                });
            }
            docs.push(doc);
        }
        if docs.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let avg_doc_length = doc_lengths.iter().sum::<usize>() as f64 / docs.len() as f64;
        Ok(CorpusIndex {
            documents: docs,
            by_id,
            postings,
            doc_lengths,
            avg_doc_length,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn doc_length(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).map(|&i| self.doc_lengths[i])
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.documents.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 top-`k`. Only documents sharing at least one term with the
    /// query are returned.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        if terms.is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let mut scores: Vec<Option<f64>> = vec![None; self.documents.len()];
        for term in &terms {
            let plist = self.postings(term);
            if plist.is_empty() {
                continue;
            }
            let idf = self.idf(plist.len());
            for p in plist {
                let tf = p.tf as f64;
                let dl = self.doc_lengths[p.doc] as f64;
                let norm = tf * (BM25_K1 + 1.0)
                    / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self.avg_doc_length));
                *scores[p.doc].get_or_insert(0.0) += idf * norm;
            }
        }
        let mut results: Vec<RetrievalResult> = scores
            .into_iter()
            .enumerate()
            .filter_map(|(i, s)| {
                s.map(|score| RetrievalResult {
                    document: self.documents[i].clone(),
                    score,
                })
            })
            .collect();
        sort_results(&mut results);
        results.truncate(k);
        Ok(results)
    }
}

impl Retriever for CorpusIndex {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        self.search(query, k)
    }
}
