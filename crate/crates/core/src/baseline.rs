//! Single-shot reference systems: answering from parametric memory alone,
//! and answering once over the top-k passages for the raw question.

use serde::{Deserialize, Serialize};

use crate::engine::empty_result_document;
use crate::error::{ConfigError, EngineError, RetrievalError};
use crate::gateway::{generate, GenerationRequest, LanguageModel, PromptTemplates};
use crate::model::{
    GenerationParams, IterationStep, KnowledgeSource, Question, Termination, Trajectory,
};
use crate::parser::direct_answer;
use crate::retrieval::Retriever;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    Naive,
    StandardRag,
}

impl BaselineMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "naive" => Some(BaselineMode::Naive),
            "standard-rag" | "standard_rag" => Some(BaselineMode::StandardRag),
            _ => None,
        }
    }
}

/// Answers `question` in one model call. Naive runs produce no steps;
/// standard RAG records its single retrieval as step 1 with the question
/// itself as the query.
pub fn run_baseline(
    mode: BaselineMode,
    question: &Question,
    llm: &dyn LanguageModel,
    retriever: Option<&dyn Retriever>,
    k: usize,
    templates: &PromptTemplates,
    params: &GenerationParams,
) -> Result<Trajectory, EngineError> {
    let (messages, steps, termination) = match mode {
        BaselineMode::Naive => (templates.naive(question), Vec::new(), Termination::FallbackDirect),
        BaselineMode::StandardRag => {
            let retriever = retriever
                .ok_or_else(|| ConfigError("standard RAG needs a retriever".into()))?;
            if k == 0 {
                return Err(ConfigError("docs_per_iteration >= 1".into()).into());
            }
            let mut documents: Vec<_> = match retriever.retrieve(&question.text, k) {
                Ok(hits) => hits.into_iter().map(|h| h.document).collect(),
                Err(RetrievalError::EmptyQuery) => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            if documents.is_empty() {
                documents.push(empty_result_document(1));
            }
            let messages = templates.standard_rag(question, &documents)?;
            let step = IterationStep {
                index: 1,
                query: question.text.clone(),
                documents,
                reasoning: String::new(),
                knowledge_source: KnowledgeSource::External,
            };
            (messages, vec![step], Termination::AnsweredExternal)
        }
    };
    let raw = generate(llm, &GenerationRequest::new(messages, params))?.swap_remove(0);
    Ok(Trajectory {
        question: question.clone(),
        initial_reasoning: String::new(),
        steps,
        final_answer: Some(direct_answer(&raw)),
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::FnModel;
    use crate::retrieval::{CorpusIndex, RetrievalResult};
    use crate::Document;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting<'a>(&'a CorpusIndex, AtomicUsize);

    impl Retriever for Counting<'_> {
        fn retrieve(&self, q: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.retrieve(q, k)
        }
    }

    fn corpus() -> CorpusIndex {
        CorpusIndex::build(
            (0..8)
                .map(|i| Document::new(format!("d{i}"), "", format!("capital city number {i}")))
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    fn echo() -> FnModel<impl Fn(&GenerationRequest) -> Result<Vec<String>, crate::GatewayError>> {
        FnModel(|_: &GenerationRequest| Ok(vec!["Paris.".to_string()]))
    }

    #[test]
    fn naive_never_retrieves() {
        let idx = corpus();
        let r = Counting(&idx, AtomicUsize::new(0));
        let q = Question::new("q", "What is the capital city?", &["Paris"]);
        let t = run_baseline(
            BaselineMode::Naive,
            &q,
            &echo(),
            Some(&r),
            5,
            PromptTemplates::builtin(),
            &GenerationParams::default(),
        )
        .unwrap();
        assert_eq!(r.1.load(Ordering::SeqCst), 0);
        assert_eq!(t.final_answer.as_deref(), Some("Paris"));
        assert!(t.steps.is_empty());
    }

    #[test]
    fn standard_rag_retrieves_once_with_k_docs() {
        let idx = corpus();
        let r = Counting(&idx, AtomicUsize::new(0));
        let q = Question::new("q", "What is the capital city?", &["Paris"]);
        let t = run_baseline(
            BaselineMode::StandardRag,
            &q,
            &echo(),
            Some(&r),
            5,
            PromptTemplates::builtin(),
            &GenerationParams::default(),
        )
        .unwrap();
        assert_eq!(r.1.load(Ordering::SeqCst), 1);
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.steps[0].documents.len(), 5);
        assert_eq!(t.termination, Termination::AnsweredExternal);
        assert!(run_baseline(
            BaselineMode::StandardRag,
            &q,
            &echo(),
            None,
            5,
            PromptTemplates::builtin(),
            &GenerationParams::default()
        )
        .is_err());
    }
}
