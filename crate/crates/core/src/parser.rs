//! Splits a raw model turn into its reasoning and marker values, and flags
//! whether the reasoning still asks for more information.
//!
//! Markers are matched only at the start of a line (leading whitespace is
//! allowed) and case-sensitively. When a marker occurs on several lines the
//! last one wins. The parser reports both a query and a final answer when
//! both are present; deciding which one to act on is the engine's job.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::normalize_answer;
use crate::model::Document;

/// Query markers, longest first so that `Query:` never shadows the others.
pub const QUERY_MARKERS: [&str; 3] = ["Initial Query:", "Refined Query:", "Query:"];
pub const ANSWER_MARKER: &str = "Final Answer:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse an empty model turn")]
pub struct ParseError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub raw: String,
    pub reasoning: String,
    pub query: Option<String>,
    pub final_answer: Option<String>,
    pub has_information_need: bool,
}

enum MarkerLine<'a> {
    Query(&'a str),
    Answer(&'a str),
}

fn classify(line: &str) -> Option<MarkerLine<'_>> {
    let t = line.trim_start();
    if let Some(rest) = t.strip_prefix(ANSWER_MARKER) {
        return Some(MarkerLine::Answer(rest));
    }
    QUERY_MARKERS
        .iter()
        .find_map(|m| t.strip_prefix(m))
        .map(MarkerLine::Query)
}

fn clean_answer(value: &str) -> String {
    let v = value.trim();
    let v = v.strip_suffix('.').unwrap_or(v);
    v.trim_end().to_string()
}

pub fn parse_turn(raw: &str, trigger_terms: &[String]) -> Result<ParsedOutput, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError);
    }
    let mut query = None;
    let mut final_answer = None;
    let mut kept: Vec<&str> = Vec::new();
    for line in raw.lines() {
        match classify(line) {
            Some(MarkerLine::Query(v)) => {
                let v = v.trim();
                query = (!v.is_empty()).then(|| v.to_string());
            }
            Some(MarkerLine::Answer(v)) => {
                let v = clean_answer(v);
                final_answer = (!v.is_empty()).then_some(v);
            }
            None => kept.push(line.trim_end()),
        }
    }
    let reasoning = normalize_reasoning(&kept);
    let has_information_need = detect_information_need(&reasoning, trigger_terms);
    Ok(ParsedOutput {
        raw: raw.to_string(),
        reasoning,
        query,
        final_answer,
        has_information_need,
    })
}

/// The answer in a single-shot reply: the `Final Answer:` value when the
/// model used the marker, otherwise the whole reply minus a trailing period.
pub fn direct_answer(raw: &str) -> String {
    match parse_turn(raw, &[]) {
        Ok(ParsedOutput {
            final_answer: Some(a),
            ..
        }) => a,
        _ => clean_answer(raw),
    }
}

/// Drops blank-line runs down to a single paragraph break and trims the ends.
fn normalize_reasoning(lines: &[&str]) -> String {
    let mut out = String::new();
    let mut pending_break = false;
    for line in lines {
        if line.trim().is_empty() {
            pending_break = !out.is_empty();
            continue;
        }
        if !out.is_empty() {
            out.push_str(if pending_break { "\n\n" } else { "\n" });
        }
        out.push_str(line);
        pending_break = false;
    }
    out
}

/// True iff any trigger term occurs case-insensitively in `reasoning`.
pub fn detect_information_need(reasoning: &str, trigger_terms: &[String]) -> bool {
    let hay = reasoning.to_lowercase();
    trigger_terms
        .iter()
        .map(|t| t.trim().to_lowercase())
        .any(|t| !t.is_empty() && hay.contains(&t))
}

/// Sub-answers whose normalized form occurs in some document's normalized
/// text, in the order they were given.
pub fn extract_subanswer_hits(documents: &[Document], sub_answers: &[String]) -> Vec<String> {
    let texts: Vec<String> = documents
        .iter()
        .map(|d| normalize_answer(&d.contents()))
        .collect();
    sub_answers
        .iter()
        .filter(|sub| {
            let needle = normalize_answer(sub);
            !needle.is_empty() && texts.iter().any(|t| t.contains(&needle))
        })
        .cloned()
        .collect()
}
