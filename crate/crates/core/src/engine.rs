//! The iterate, retrieve, reason loop.
//!
//! One question runs as follows. The model first produces an analysis
//! (`y_0`). The engine then walks a schedule of knowledge slots, external
//! ones first by default. At every slot it looks at the latest model turn:
//! a query is served (from the retriever, or from a document the model
//! writes itself in parametric slots) and the model reasons again; a final
//! answer ends the run. The query branch is always tested first. If the
//! schedule runs out the model answers directly without retrieval.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::batch::parallel_map;
use crate::error::{EngineError, RetrievalError};
use crate::gateway::{generate, ChatMessage, GenerationRequest, LanguageModel, PromptTemplates};
use crate::model::{
    Document, EngineConfig, IterationStep, KnowledgeOrder, KnowledgeSource, Question, Termination,
    Trajectory,
};
use crate::parser::{direct_answer, parse_turn, ParsedOutput};
use crate::retrieval::Retriever;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    External,
    Parametric,
    Done,
}

impl From<KnowledgeSource> for Phase {
    fn from(s: KnowledgeSource) -> Self {
        match s {
            KnowledgeSource::External => Phase::External,
            KnowledgeSource::Parametric => Phase::Parametric,
        }
    }
}

/// One line of the structured trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub event: String,
    pub t: usize,
    pub payload: serde_json::Value,
}

/// Everything one run produced: the trajectory plus its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineSession {
    pub trajectory: Trajectory,
    pub phase: Phase,
    pub llm_calls: usize,
    pub retrievals: usize,
    pub events: Vec<TraceEvent>,
}

/// Knowledge slots in the order they are visited.
pub fn schedule(config: &EngineConfig) -> Vec<KnowledgeSource> {
    let ext = std::iter::repeat_n(KnowledgeSource::External, config.max_external_iters);
    let par = std::iter::repeat_n(KnowledgeSource::Parametric, config.max_parametric_iters);
    match config.knowledge_order {
        KnowledgeOrder::ExternalThenParametric => ext.chain(par).collect(),
        KnowledgeOrder::ParametricThenExternal => par.chain(ext).collect(),
        KnowledgeOrder::NoParametric => ext.collect(),
    }
}

/// Stand-in passage for a query that matched nothing, so the model still
/// gets a document turn to react to.
pub fn empty_result_document(t: usize) -> Document {
    Document::new(
        format!("none-{t}"),
        "",
        "No relevant documents were found for this query.",
    )
}

/// Upper bound on model calls for one run under `config`.
pub fn max_llm_calls(config: &EngineConfig) -> usize {
    config.max_external_iters + 2 * config.max_parametric_iters + 3
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    templates: PromptTemplates,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        Ok(Engine {
            config: config.validate()?,
            templates: PromptTemplates::default(),
        })
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn run(
        &self,
        question: &Question,
        llm: &dyn LanguageModel,
        retriever: &dyn Retriever,
    ) -> Result<EngineSession, EngineError> {
        Run::new(self, question, llm, retriever).execute()
    }

    /// Runs every question, `parallelism` at a time. Results keep the input
    /// order and a failing question never disturbs the others.
    pub fn run_batch(
        &self,
        questions: &[Question],
        llm: &dyn LanguageModel,
        retriever: &dyn Retriever,
        parallelism: usize,
    ) -> Vec<Result<EngineSession, EngineError>> {
        parallel_map(questions, parallelism, |q| {
            let session = llm.session();
            self.run(q, session.as_ref(), retriever)
        })
    }
}

pub fn run_trajectory(
    config: &EngineConfig,
    question: &Question,
    llm: &dyn LanguageModel,
    retriever: &dyn Retriever,
) -> Result<Trajectory, EngineError> {
    Ok(Engine::new(config.clone())?.run(question, llm, retriever)?.trajectory)
}

pub fn run_batch(
    config: &EngineConfig,
    questions: &[Question],
    llm: &dyn LanguageModel,
    retriever: &dyn Retriever,
    parallelism: usize,
) -> Vec<Result<Trajectory, EngineError>> {
    match Engine::new(config.clone()) {
        Ok(engine) => engine
            .run_batch(questions, llm, retriever, parallelism)
            .into_iter()
            .map(|r| r.map(|s| s.trajectory))
            .collect(),
        Err(e) => questions.iter().map(|_| Err(e.clone())).collect(),
    }
}

/// Mutable state of a single run.
struct Run<'a> {
    engine: &'a Engine,
    question: &'a Question,
    llm: &'a dyn LanguageModel,
    retriever: &'a dyn Retriever,
    initial_reasoning: String,
    steps: Vec<IterationStep>,
    phase: Phase,
    llm_calls: usize,
    retrievals: usize,
    regenerated: bool,
    seen: HashSet<String>,
    events: Vec<TraceEvent>,
}

enum Turn {
    Usable(ParsedOutput),
    Unusable,
}

impl<'a> Run<'a> {
    fn new(
        engine: &'a Engine,
        question: &'a Question,
        llm: &'a dyn LanguageModel,
        retriever: &'a dyn Retriever,
    ) -> Self {
        Run {
            engine,
            question,
            llm,
            retriever,
            initial_reasoning: String::new(),
            steps: Vec::new(),
            phase: Phase::Done,
            llm_calls: 0,
            retrievals: 0,
            regenerated: false,
            seen: HashSet::new(),
            events: Vec::new(),
        }
    }

    fn cfg(&self) -> &EngineConfig {
        &self.engine.config
    }

    fn emit(&mut self, event: &str, t: usize, mut payload: serde_json::Value) {
        if let Some(map) = payload.as_object_mut() {
            map.insert("question_id".into(), json!(self.question.id));
        }
        self.events.push(TraceEvent {
            event: event.into(),
            t,
            payload,
        });
    }

    fn call(&mut self, messages: Vec<ChatMessage>) -> Result<String, EngineError> {
        let request = GenerationRequest::new(messages, &self.cfg().generation_params);
        self.llm_calls += 1;
        let mut out = generate(self.llm, &request)?;
        Ok(out.swap_remove(0))
    }

    /// A reasoning turn. A turn with neither marker is retried once per run.
    fn reasoning_turn(&mut self) -> Result<Turn, EngineError> {
        loop {
            let messages = self.engine.templates.reasoning(
                self.question,
                &self.initial_reasoning,
                &self.steps,
                self.cfg().prompt_style,
            );
            let raw = self.call(messages)?;
            if let Ok(parsed) = parse_turn(&raw, &self.cfg().trigger_terms) {
                if parsed.query.is_some() || parsed.final_answer.is_some() {
                    return Ok(Turn::Usable(parsed));
                }
            }
            if self.regenerated {
                return Ok(Turn::Unusable);
            }
            self.regenerated = true;
            self.emit("regenerate", self.steps.len(), json!({}));
        }
    }

    fn execute(mut self) -> Result<EngineSession, EngineError> {
        let slots = schedule(self.cfg());
        self.phase = slots.first().copied().map(Phase::from).unwrap_or(Phase::Done);
        // The phase that produced the turn currently being examined.
        let mut producer = slots
            .first()
            .copied()
            .unwrap_or(KnowledgeSource::External);

        let mut last = match self.reasoning_turn()? {
            Turn::Usable(p) => p,
            Turn::Unusable => return Ok(self.exhausted(0)),
        };
        self.initial_reasoning = last.reasoning.clone();

        for (i, &source) in slots.iter().enumerate() {
            let t = i + 1;
            self.phase = source.into();
            if let Some(query) = last.query.clone() {
                self.emit("iteration_started", t, json!({ "source": source_name(source) }));
                self.emit("query_issued", t, json!({ "query": query }));
                let documents = match source {
                    KnowledgeSource::External => self.retrieve(t, &query)?,
                    KnowledgeSource::Parametric => self.parametric_document(t, &query)?,
                };
                let ids: Vec<&str> = documents.iter().map(|d| d.id.as_str()).collect();
                let ids = json!({ "ids": ids });
                self.emit("docs_received", t, ids);
                self.steps.push(IterationStep {
                    index: t,
                    query,
                    documents,
                    reasoning: String::new(),
                    knowledge_source: source,
                });
                last = match self.reasoning_turn()? {
                    Turn::Usable(p) => p,
                    Turn::Unusable => return Ok(self.exhausted(t)),
                };
                self.steps.last_mut().expect("just pushed").reasoning = last.reasoning.clone();
                producer = source;
            } else if let Some(answer) = last.final_answer.clone() {
                return Ok(self.answered(t, producer, answer));
            }
        }

        let t = self.steps.len();
        if last.query.is_none() {
            if let Some(answer) = last.final_answer.clone() {
                return Ok(self.answered(t, producer, answer));
            }
        }
        self.fallback(t)
    }

    fn retrieve(&mut self, t: usize, query: &str) -> Result<Vec<Document>, EngineError> {
        self.retrievals += 1;
        let k = self.cfg().docs_per_iteration;
        let hits = match self.retriever.retrieve(query, k) {
            Ok(hits) => hits,
            Err(RetrievalError::EmptyQuery) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut docs: Vec<Document> = hits.into_iter().map(|h| h.document).collect();
        if self.cfg().dedupe_documents {
            let fresh: Vec<Document> = docs
                .iter()
                .filter(|d| !self.seen.contains(&d.id))
                .cloned()
                .collect();
            if !fresh.is_empty() {
                docs = fresh;
            }
            self.seen.extend(docs.iter().map(|d| d.id.clone()));
        }
        if docs.is_empty() {
            docs.push(empty_result_document(t));
        }
        Ok(docs)
    }

    fn parametric_document(&mut self, t: usize, query: &str) -> Result<Vec<Document>, EngineError> {
        let messages = self
            .engine
            .templates
            .parametric_document(self.question, query)?;
        let text = self.call(messages)?.trim().to_string();
        Ok(vec![Document::new(format!("parametric-{t}"), "", text)])
    }

    fn answered(self, t: usize, producer: KnowledgeSource, answer: String) -> EngineSession {
        let termination = match producer {
            KnowledgeSource::External => Termination::AnsweredExternal,
            KnowledgeSource::Parametric => Termination::AnsweredParametric,
        };
        self.finish(t, Some(answer), termination)
    }

    fn fallback(mut self, t: usize) -> Result<EngineSession, EngineError> {
        let raw = self.call(self.engine.templates.naive(self.question))?;
        let answer = direct_answer(&raw);
        Ok(self.finish(t, Some(answer), Termination::FallbackDirect))
    }

    fn exhausted(self, t: usize) -> EngineSession {
        self.finish(t, None, Termination::BudgetExhausted)
    }

    fn finish(
        mut self,
        t: usize,
        final_answer: Option<String>,
        termination: Termination,
    ) -> EngineSession {
        self.phase = Phase::Done;
        self.emit(
            "answer_found",
            t,
            json!({ "answer": final_answer, "termination": termination.as_str() }),
        );
        EngineSession {
            trajectory: Trajectory {
                question: self.question.clone(),
                initial_reasoning: self.initial_reasoning,
                steps: self.steps,
                final_answer,
                termination,
            },
            phase: self.phase,
            llm_calls: self.llm_calls,
            retrievals: self.retrievals,
            events: self.events,
        }
    }
}

fn source_name(s: KnowledgeSource) -> &'static str {
    match s {
        KnowledgeSource::External => "external",
        KnowledgeSource::Parametric => "parametric",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FnModel, ScriptEntry, ScriptedMock};
    use crate::retrieval::CorpusIndex;
    use crate::GatewayError;

    fn corpus() -> CorpusIndex {
        CorpusIndex::build(vec![
            Document::new("a", "Paris", "Paris is the capital of France."),
            Document::new("b", "Berlin", "Berlin is the capital of Germany."),
            Document::new("c", "Rome", "Rome is the capital of Italy."),
        ])
        .unwrap()
    }

    fn cfg(t: usize, p: usize, order: KnowledgeOrder) -> EngineConfig {
        EngineConfig {
            max_external_iters: t,
            max_parametric_iters: p,
            docs_per_iteration: 1,
            knowledge_order: order,
            ..EngineConfig::default()
        }
    }

    fn q() -> Question {
        Question::new("q", "What is the capital of France?", &["Paris"])
    }

    #[test]
    fn answer_in_first_turn_short_circuits() {
        let m = ScriptedMock::new(vec![ScriptEntry::new("", &["Final Answer: Paris."])]);
        let c = cfg(5, 5, KnowledgeOrder::ExternalThenParametric);
        let s = Engine::new(c.clone()).unwrap().run(&q(), &m, &corpus()).unwrap();
        assert_eq!(s.trajectory.steps.len(), 0);
        assert_eq!(s.trajectory.final_answer.as_deref(), Some("Paris"));
        assert_eq!(s.trajectory.termination, Termination::AnsweredExternal);
        assert_eq!((s.llm_calls, s.retrievals), (1, 0));
        s.trajectory.check_invariants(&c).unwrap();
    }

    #[test]
    fn always_query_runs_every_slot_then_falls_back() {
        let m = FnModel(|r: &GenerationRequest| {
            let last = r.last_user_message();
            let out = if last.starts_with("Question:") && r.messages[0].content.contains("Answer the question based on your own") {
                "Paris"
            } else if last.ends_with("Document:") {
                "A made up passage."
            } else {
                "Analysis: not enough.\nRefined Query: capital of France"
            };
            Ok(vec![out.to_string()])
        });
        let c = cfg(2, 1, KnowledgeOrder::ExternalThenParametric);
        let s = Engine::new(c.clone()).unwrap().run(&q(), &m, &corpus()).unwrap();
        let t = &s.trajectory;
        assert_eq!(
            t.knowledge_sequence(),
            [KnowledgeSource::External, KnowledgeSource::External, KnowledgeSource::Parametric]
        );
        assert_eq!(t.termination, Termination::FallbackDirect);
        assert_eq!(t.final_answer.as_deref(), Some("Paris"));
        // y0, two external turns, parametric doc + turn, fallback
        assert_eq!(s.llm_calls, 6);
        assert_eq!(s.retrievals, 2);
        assert!(s.llm_calls <= max_llm_calls(&c));
        assert_eq!(t.steps[2].documents[0].text, "A made up passage.");
        t.check_invariants(&c).unwrap();
    }

    #[test]
    fn markerless_turn_regenerates_once() {
        let m = ScriptedMock::new(vec![ScriptEntry::new("", &["hmm", "still nothing"])]);
        let s = Engine::new(EngineConfig::default()).unwrap().run(&q(), &m, &corpus()).unwrap();
        assert_eq!(s.trajectory.termination, Termination::BudgetExhausted);
        assert_eq!(s.trajectory.final_answer, None);
        assert_eq!(s.llm_calls, 2);

        let m = ScriptedMock::new(vec![ScriptEntry::new("", &["hmm", "Final Answer: Paris"])]);
        let s = Engine::new(EngineConfig::default()).unwrap().run(&q(), &m, &corpus()).unwrap();
        assert_eq!(s.trajectory.final_answer.as_deref(), Some("Paris"));
    }

    #[test]
    fn backend_failure_propagates() {
        let m = FnModel(|_: &GenerationRequest| -> Result<Vec<String>, GatewayError> {
            Err(GatewayError::Protocol("boom".into()))
        });
        let err = Engine::new(EngineConfig::default()).unwrap().run(&q(), &m, &corpus());
        assert!(matches!(err, Err(EngineError::Gateway(GatewayError::Protocol(_)))));
    }

    #[test]
    fn schedules() {
        use KnowledgeSource::*;
        assert_eq!(schedule(&cfg(2, 1, KnowledgeOrder::ExternalThenParametric)), [External, External, Parametric]);
        assert_eq!(schedule(&cfg(2, 1, KnowledgeOrder::ParametricThenExternal)), [Parametric, External, External]);
        assert_eq!(schedule(&cfg(2, 1, KnowledgeOrder::NoParametric)), [External, External]);
    }

    #[test]
    fn trace_events_carry_question_id() {
        let m = ScriptedMock::new(vec![
            ScriptEntry::new("Question:", &["Analysis: look it up.\nInitial Query: capital of France"]),
            ScriptEntry::new("Retrieved Document_1", &["Paris it is.\nFinal Answer: Paris."]),
        ]);
        let s = Engine::new(EngineConfig::default()).unwrap().run(&q(), &m, &corpus()).unwrap();
        let names: Vec<&str> = s.events.iter().map(|e| e.event.as_str()).collect();
        assert_eq!(names, ["iteration_started", "query_issued", "docs_received", "answer_found"]);
        assert!(s.events.iter().all(|e| e.payload["question_id"] == "q"));
        assert_eq!(s.trajectory.steps[0].documents[0].id, "a");
        assert_eq!(s.trajectory.steps[0].reasoning, "Paris it is.");
    }
}
