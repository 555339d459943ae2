//! Prompt templates and the renderers that fill them.
//!
//! Templates live as text assets under `templates/` and are compiled in as
//! defaults; [`PromptTemplates::from_dir`] swaps in edited copies at run
//! time. Placeholders are `{name}` and are substituted in a single pass, so
//! braces inside substituted values are never re-expanded.
//!
//! The dialogue surface produced here is shared with training export: the
//! same [`document_block`], [`query_turn`] and [`answer_turn`] build both the
//! live prompts and the exported instances.

use std::path::Path;
use std::sync::LazyLock;

use super::ChatMessage;
use crate::error::GatewayError;
use crate::model::{Document, IterationStep, PromptStyle, Question};

pub const INITIAL_QUERY_MARKER: &str = "Initial Query:";
pub const REFINED_QUERY_MARKER: &str = "Refined Query:";
pub const FINAL_ANSWER_MARKER: &str = "Final Answer:";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub reasoning_multihop: String,
    pub reasoning_singlehop: String,
    pub parametric_document: String,
    pub zero_shot_rewrite: String,
    pub naive_system: String,
    pub standard_rag_system: String,
    pub question: String,
    pub final_answer: String,
}

const FILES: [&str; 8] = [
    "reasoning_multihop.txt",
    "reasoning_singlehop.txt",
    "parametric_document.txt",
    "zero_shot_rewrite.txt",
    "naive_system.txt",
    "standard_rag_system.txt",
    "question.txt",
    "final_answer.txt",
];

fn asset(s: &str) -> String {
    s.trim_end_matches(['\n', '\r']).to_string()
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            reasoning_multihop: asset(include_str!("../../templates/reasoning_multihop.txt")),
            reasoning_singlehop: asset(include_str!("../../templates/reasoning_singlehop.txt")),
            parametric_document: asset(include_str!("../../templates/parametric_document.txt")),
            zero_shot_rewrite: asset(include_str!("../../templates/zero_shot_rewrite.txt")),
            naive_system: asset(include_str!("../../templates/naive_system.txt")),
            standard_rag_system: asset(include_str!("../../templates/standard_rag_system.txt")),
            question: asset(include_str!("../../templates/question.txt")),
            final_answer: asset(include_str!("../../templates/final_answer.txt")),
        }
    }
}

static DEFAULT_TEMPLATES: LazyLock<PromptTemplates> = LazyLock::new(PromptTemplates::default);

impl PromptTemplates {
    pub fn builtin() -> &'static PromptTemplates {
        &DEFAULT_TEMPLATES
    }

    /// Built-in templates with any same-named file in `dir` taking over.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = PromptTemplates::default();
        for name in FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = asset(&std::fs::read_to_string(&path)?);
            let slot = match name {
                "reasoning_multihop.txt" => &mut t.reasoning_multihop,
                "reasoning_singlehop.txt" => &mut t.reasoning_singlehop,
                "parametric_document.txt" => &mut t.parametric_document,
                "zero_shot_rewrite.txt" => &mut t.zero_shot_rewrite,
                "naive_system.txt" => &mut t.naive_system,
                "standard_rag_system.txt" => &mut t.standard_rag_system,
                "question.txt" => &mut t.question,
                _ => &mut t.final_answer,
            };
            *slot = text;
        }
        Ok(t)
    }

    fn reasoning_template(&self, style: PromptStyle) -> &str {
        match style {
            PromptStyle::MultiHop => &self.reasoning_multihop,
            PromptStyle::SingleHop => &self.reasoning_singlehop,
        }
    }

    /// Few-shot reasoning dialogue for `question` with `steps` completed or
    /// pending. Assistant turns are re-rendered from the recorded reasoning
    /// and queries; the last step's reasoning is not shown because the
    /// prompt is awaiting it.
    pub fn reasoning(
        &self,
        question: &Question,
        initial_reasoning: &str,
        steps: &[IterationStep],
        style: PromptStyle,
    ) -> Vec<ChatMessage> {
        let mut messages = vec![ChatMessage::user(fill(
            self.reasoning_template(style),
            &[("question", &question.text)],
        ))];
        for (i, step) in steps.iter().enumerate() {
            let prior = if i == 0 {
                initial_reasoning
            } else {
                &steps[i - 1].reasoning
            };
            messages.push(ChatMessage::assistant(query_turn(prior, step.index, &step.query)));
            messages.push(ChatMessage::user(document_block(step.index, &step.documents)));
        }
        messages
    }

    /// The reasoning dialogue closed by the last reasoning turn and a
    /// request for the final answer.
    pub fn final_answer(
        &self,
        question: &Question,
        initial_reasoning: &str,
        steps: &[IterationStep],
        style: PromptStyle,
    ) -> Vec<ChatMessage> {
        let mut messages = self.reasoning(question, initial_reasoning, steps, style);
        let last = steps
            .last()
            .map(|s| s.reasoning.as_str())
            .unwrap_or(initial_reasoning);
        let last = if last.trim().is_empty() { "Analysis:" } else { last };
        messages.push(ChatMessage::assistant(last));
        messages.push(ChatMessage::user(fill(
            &self.final_answer,
            &[("question", &question.text)],
        )));
        messages
    }

    pub fn zero_shot_rewrite(
        &self,
        question: &Question,
        analysis: &str,
    ) -> Result<Vec<ChatMessage>, GatewayError> {
        if analysis.trim().is_empty() {
            return Err(GatewayError::Precondition("analysis must be non-empty".into()));
        }
        Ok(vec![ChatMessage::user(fill(
            &self.zero_shot_rewrite,
            &[("question", &question.text), ("analysis", analysis)],
        ))])
    }

    pub fn parametric_document(
        &self,
        question: &Question,
        query: &str,
    ) -> Result<Vec<ChatMessage>, GatewayError> {
        if query.trim().is_empty() {
            return Err(GatewayError::Precondition("query must be non-empty".into()));
        }
        Ok(vec![ChatMessage::user(fill(
            &self.parametric_document,
            &[("question", &question.text), ("query", query)],
        ))])
    }

    pub fn naive(&self, question: &Question) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(self.naive_system.clone()),
            ChatMessage::user(fill(&self.question, &[("question", &question.text)])),
        ]
    }

    pub fn standard_rag(
        &self,
        question: &Question,
        documents: &[Document],
    ) -> Result<Vec<ChatMessage>, GatewayError> {
        if documents.is_empty() {
            return Err(GatewayError::Precondition(
                "standard RAG needs at least one document".into(),
            ));
        }
        let docs = documents
            .iter()
            .enumerate()
            .map(|(i, d)| format!("Doc {}(Title: {}) {}", i + 1, d.title, d.text))
            .collect::<Vec<_>>()
            .join("\n");
        Ok(vec![
            ChatMessage::system(fill(&self.standard_rag_system, &[("documents", &docs)])),
            ChatMessage::user(fill(&self.question, &[("question", &question.text)])),
        ])
    }
}

/// Replaces each `{name}` whose name is in `vars`; everything else is kept.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// `Retrieved Document_{t}: ` followed by every passage of the step,
/// separated by single spaces.
pub fn document_block(index: usize, documents: &[Document]) -> String {
    let body = documents
        .iter()
        .map(Document::contents)
        .collect::<Vec<_>>()
        .join(" ");
    format!("Retrieved Document_{index}: {body}")
}

fn join_turn(reasoning: &str, marker_line: String) -> String {
    let r = reasoning.trim();
    if r.is_empty() {
        marker_line
    } else {
        format!("{r}\n\n{marker_line}")
    }
}

/// Model turn that plans the retrieval for step `next_index`.
pub fn query_turn(reasoning: &str, next_index: usize, query: &str) -> String {
    let marker = if next_index <= 1 {
        INITIAL_QUERY_MARKER
    } else {
        REFINED_QUERY_MARKER
    };
    join_turn(reasoning, format!("{marker} {}", query.trim()))
}

/// Model turn that closes the dialogue with an answer.
pub fn answer_turn(reasoning: &str, answer: &str) -> String {
    join_turn(reasoning, format!("{FINAL_ANSWER_MARKER} {}.", answer.trim()))
}

pub fn render_reasoning_prompt(
    question: &Question,
    initial_reasoning: &str,
    steps: &[IterationStep],
    style: PromptStyle,
) -> Vec<ChatMessage> {
    PromptTemplates::builtin().reasoning(question, initial_reasoning, steps, style)
}

pub fn render_zero_shot_rewrite_prompt(
    question: &Question,
    analysis: &str,
) -> Result<Vec<ChatMessage>, GatewayError> {
    PromptTemplates::builtin().zero_shot_rewrite(question, analysis)
}

pub fn render_parametric_doc_prompt(
    question: &Question,
    query: &str,
) -> Result<Vec<ChatMessage>, GatewayError> {
    PromptTemplates::builtin().parametric_document(question, query)
}

pub fn render_naive_prompt(question: &Question) -> Vec<ChatMessage> {
    PromptTemplates::builtin().naive(question)
}

pub fn render_standard_rag_prompt(
    question: &Question,
    documents: &[Document],
) -> Result<Vec<ChatMessage>, GatewayError> {
    PromptTemplates::builtin().standard_rag(question, documents)
}
