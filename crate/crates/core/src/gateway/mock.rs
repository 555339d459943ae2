use std::io::BufRead;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{GenerationRequest, LanguageModel};
use crate::error::GatewayError;
use crate::jsonl::{read_jsonl, JsonlError};

/// One line of a mock script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Substring looked for in the last user message.
    #[serde(rename = "match")]
    pub pattern: String,
    pub responses: Vec<String>,
}

impl ScriptEntry {
    pub fn new(pattern: impl Into<String>, responses: &[&str]) -> Self {
        ScriptEntry {
            pattern: pattern.into(),
            responses: responses.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Deterministic backend that replays a script.
///
/// Each call picks the first entry (in script order) whose pattern occurs
/// in the last user message and that still has unread responses, then
/// consumes `n_samples` responses from it in order.
#[derive(Debug)]
pub struct ScriptedMock {
    entries: Vec<ScriptEntry>,
    cursors: Mutex<Vec<usize>>,
}

impl Clone for ScriptedMock {
    /// The clone starts from the beginning of the script.
    fn clone(&self) -> Self {
        ScriptedMock::new(self.entries.clone())
    }
}

impl ScriptedMock {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let cursors = Mutex::new(vec![0; entries.len()]);
        ScriptedMock { entries, cursors }
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, JsonlError> {
        Ok(ScriptedMock::new(read_jsonl(reader)?))
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    /// Total responses consumed so far.
    pub fn consumed(&self) -> usize {
        self.cursors.lock().unwrap().iter().sum()
    }
}

impl LanguageModel for ScriptedMock {
    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, GatewayError> {
        let prompt = request.last_user_message();
        let mut cursors = self.cursors.lock().unwrap();
        let pick = self.entries.iter().enumerate().find(|(i, e)| {
            prompt.contains(&e.pattern) && cursors[*i] < e.responses.len()
        });
        let Some((i, entry)) = pick else {
            return Err(exhausted(prompt));
        };
        let start = cursors[i];
        let end = start + request.n_samples;
        if end > entry.responses.len() {
            return Err(exhausted(prompt));
        }
        cursors[i] = end;
        Ok(entry.responses[start..end].to_vec())
    }

    fn session(&self) -> Box<dyn LanguageModel + '_> {
        Box::new(self.clone())
    }
}

fn exhausted(prompt: &str) -> GatewayError {
    let tail: String = {
        let chars: Vec<char> = prompt.chars().collect();
        chars[chars.len().saturating_sub(80)..].iter().collect()
    };
    GatewayError::MockScriptExhausted(tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{generate, ChatMessage};
    use crate::model::GenerationParams;

    fn req(text: &str) -> GenerationRequest {
        GenerationRequest::new(vec![ChatMessage::user(text)], &GenerationParams::default())
    }

    #[test]
    fn passthrough() {
        let m = ScriptedMock::new(vec![ScriptEntry::new("", &["Analysis: x\nInitial Query: Q1"])]);
        assert_eq!(
            generate(&m, &req("anything")).unwrap(),
            vec!["Analysis: x\nInitial Query: Q1"]
        );
        assert!(matches!(
            generate(&m, &req("anything")),
            Err(GatewayError::MockScriptExhausted(_))
        ));
    }

    #[test]
    fn sampling_consumes_in_order() {
        let m = ScriptedMock::new(vec![ScriptEntry::new(
            "rewrite",
            &["Query: a", "Query: b", "Query: c", "Query: d", "Query: e"],
        )]);
        let out = generate(&m, &req("please rewrite").sampled(5, 0.7)).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out[4], "Query: e");

        let short = ScriptedMock::new(vec![ScriptEntry::new("rewrite", &["Query: a"])]);
        assert!(matches!(
            generate(&short, &req("rewrite").sampled(5, 0.7)),
            Err(GatewayError::MockScriptExhausted(_))
        ));
    }

    #[test]
    fn first_live_match_wins() {
        let m = ScriptedMock::new(vec![
            ScriptEntry::new("alpha", &["A1"]),
            ScriptEntry::new("alp", &["B1", "B2"]),
        ]);
        assert_eq!(generate(&m, &req("alpha")).unwrap(), ["A1"]);
        assert_eq!(generate(&m, &req("alpha")).unwrap(), ["B1"]);
        assert_eq!(generate(&m, &req("alps")).unwrap(), ["B2"]);
        assert_eq!(m.consumed(), 3);
    }

    #[test]
    fn sessions_are_independent() {
        let m = ScriptedMock::new(vec![ScriptEntry::new("x", &["only"])]);
        let s1 = m.session();
        let s2 = m.session();
        assert_eq!(s1.complete(&req("x")).unwrap(), ["only"]);
        assert_eq!(s2.complete(&req("x")).unwrap(), ["only"]);
        assert_eq!(m.consumed(), 0);
    }

    #[test]
    fn reads_script_file() {
        let text = "{\"match\": \"Question\", \"responses\": [\"r1\", \"r2\"]}\n";
        let m = ScriptedMock::from_jsonl(text.as_bytes()).unwrap();
        assert_eq!(m.entries()[0].responses, ["r1", "r2"]);
    }
}
