//! Browser bindings. Every export takes plain strings and returns a JSON
//! string; failures come back as `{"error": "..."}` so the page never has
//! to catch exceptions.

use iterrag_core::evaluation::{accuracy_contains, exact_match, f1_score, normalize_answer};
use iterrag_core::model::DEFAULT_TRIGGER_TERMS;
use iterrag_core::parser;
use iterrag_core::retrieval::{read_corpus, CorpusIndex};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn respond<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| json!({"error": e.to_string()}).to_string()),
        Err(e) => json!({"error": e}).to_string(),
    }
}

fn trigger_list(csv: &str) -> Vec<String> {
    let terms: Vec<String> = csv
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    if terms.is_empty() {
        DEFAULT_TRIGGER_TERMS.iter().map(|s| s.to_string()).collect()
    } else {
        terms
    }
}

/// Splits one model turn into reasoning and marker values.
/// An empty `triggers` string means the default trigger terms.
#[wasm_bindgen]
pub fn parse_turn(raw: &str, triggers: &str) -> String {
    respond(parser::parse_turn(raw, &trigger_list(triggers)).map_err(|e| e.to_string()))
}

#[derive(Serialize)]
struct Hit {
    id: String,
    title: String,
    text: String,
    score: f64,
}

/// Indexes a JSONL corpus and returns the top `k` passages for `query`.
#[wasm_bindgen]
pub fn bm25_search(corpus_jsonl: &str, query: &str, k: usize) -> String {
    respond(search(corpus_jsonl, query, k))
}

fn search(corpus_jsonl: &str, query: &str, k: usize) -> Result<Vec<Hit>, String> {
    let docs = read_corpus(corpus_jsonl.as_bytes()).map_err(|e| e.to_string())?;
    let index = CorpusIndex::build(docs).map_err(|e| e.to_string())?;
    let hits = index.search(query, k).map_err(|e| e.to_string())?;
    Ok(hits
        .into_iter()
        .map(|h| Hit {
            id: h.document.id,
            title: h.document.title,
            text: h.document.text,
            score: h.score,
        })
        .collect())
}

/// Scores a prediction against golden aliases given as a JSON array
/// (a bare string is taken as a single alias).
#[wasm_bindgen]
pub fn score_answer(prediction: &str, golden_json: &str) -> String {
    respond(score(prediction, golden_json))
}

fn score(prediction: &str, golden_json: &str) -> Result<serde_json::Value, String> {
    let golden: Vec<String> = match serde_json::from_str::<serde_json::Value>(golden_json) {
        Ok(serde_json::Value::Array(items)) => items
            .into_iter()
            .map(|v| v.as_str().map(str::to_string).ok_or("aliases must be strings"))
            .collect::<Result<_, _>>()?,
        Ok(serde_json::Value::String(s)) => vec![s],
        _ => return Err("golden answers must be a JSON array of strings".into()),
    };
    if golden.is_empty() {
        return Err("at least one golden answer is required".into());
    }
    Ok(json!({
        "em": exact_match(prediction, &golden),
        "f1": f1_score(prediction, &golden),
        "accuracy": accuracy_contains(prediction, &golden),
        "normalized_prediction": normalize_answer(prediction),
        "normalized_golden": golden.iter().map(|g| normalize_answer(g)).collect::<Vec<_>>(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parsed(s: String) -> Value {
        serde_json::from_str(&s).unwrap()
    }

    #[test]
    fn parse_turn_reports_query_and_need() {
        let v = parsed(parse_turn("However, nothing yet.\n\nRefined Query: who", ""));
        assert_eq!(v["query"], "who");
        assert_eq!(v["has_information_need"], true);
        let v = parsed(parse_turn("nothing yet", "zebra"));
        assert_eq!(v["has_information_need"], false);
        assert!(parsed(parse_turn("   ", "")).get("error").is_some());
    }

    #[test]
    fn search_ranks_and_reports_errors() {
        let corpus = "{\"id\":\"a\",\"title\":\"\",\"text\":\"apple banana\"}\n{\"id\":\"b\",\"title\":\"\",\"text\":\"cherry\"}\n";
        let v = parsed(bm25_search(corpus, "banana", 5));
        assert_eq!(v.as_array().unwrap().len(), 1);
        assert_eq!(v[0]["id"], "a");
        assert!(parsed(bm25_search(corpus, "banana", 0)).get("error").is_some());
        assert!(parsed(bm25_search("not json", "banana", 1)).get("error").is_some());
    }

    #[test]
    fn score_answer_accepts_arrays_and_strings() {
        let v = parsed(score_answer("March 1955", "[\"12 March 1955\"]"));
        assert!((v["f1"].as_f64().unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(v["em"], 0.0);
        let v = parsed(score_answer("the Nile", "\"Nile\""));
        assert_eq!(v["em"], 1.0);
        assert!(parsed(score_answer("x", "[]")).get("error").is_some());
        assert!(parsed(score_answer("x", "{")).get("error").is_some());
    }
}
