//! Manufacturing training dialogues from QA pairs.
//!
//! For every question the reasoning model plans, a rewriting model proposes
//! several candidate queries per round, and the candidate whose passages
//! contain an intermediate answer is kept. Rounds stop once the reasoning no
//! longer signals an information need. The finished trajectory is kept only
//! if its final answer matches the golden answer.
//!
//! Kept trajectories become [`TrainingInstance`]s: alternating
//! input/output turns where inputs are the question and then the document
//! blocks, and outputs are reasoning followed by the next query (or the
//! answer on the last turn). The export carries a loss mask selecting the
//! outputs.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::batch::parallel_map;
use crate::engine::empty_result_document;
use crate::error::{EngineError, GatewayError, RetrievalError};
use crate::evaluation::{exact_match, iteration_histogram};
use crate::gateway::prompts::{answer_turn, document_block, query_turn};
use crate::gateway::{generate, ChatMessage, GenerationRequest, LanguageModel, PromptTemplates, Role};
use crate::model::{
    Document, EngineConfig, IterationStep, KnowledgeSource, Question, Termination, Trajectory,
};
use crate::parser::{extract_subanswer_hits, parse_turn};
use crate::retrieval::Retriever;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub engine: EngineConfig,
    /// Most retrieval rounds per question.
    pub max_iters: usize,
    pub query_samples: usize,
    pub query_temperature: f64,
    pub seed: u64,
}

impl SynthesisConfig {
    pub fn new(engine: EngineConfig, seed: u64) -> Self {
        SynthesisConfig {
            max_iters: engine.max_external_iters,
            engine,
            query_samples: 5,
            query_temperature: 0.7,
            seed,
        }
    }
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig::new(EngineConfig::default(), 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthesisError {
    #[error("question {0:?} has no golden answers")]
    MissingGolden(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl From<GatewayError> for SynthesisError {
    fn from(e: GatewayError) -> Self {
        SynthesisError::Engine(e.into())
    }
}

impl From<RetrievalError> for SynthesisError {
    fn from(e: RetrievalError) -> Self {
        SynthesisError::Engine(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trajectory for {0:?} has no final answer")]
pub struct MissingAnswer(pub String);

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("refusing to export an empty instance list")]
    Empty,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Normalized exact match, so `"19 June 2013."` matches `"19 June 2013"`.
pub fn answer_matches(predicted: &str, golden: &[String]) -> bool {
    !predicted.trim().is_empty() && exact_match(predicted, golden) == 1.0
}

/// Per-question generator, independent of scheduling order.
pub fn question_rng(seed: u64, question_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(question_id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(bytes)
}

fn retrieve_or_empty(
    retriever: &dyn Retriever,
    query: &str,
    k: usize,
) -> Result<Vec<Document>, RetrievalError> {
    match retriever.retrieve(query, k) {
        Ok(hits) => Ok(hits.into_iter().map(|h| h.document).collect()),
        Err(RetrievalError::EmptyQuery) => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}

/// Picks the query for one round. The first candidate whose top-k passages
/// contain a sub-answer wins. Without any hit a seeded random candidate is
/// used; without sub-answers at all the first candidate is used so that
/// runs stay reproducible.
pub fn select_query(
    candidates: &[String],
    retriever: &dyn Retriever,
    sub_answers: Option<&[String]>,
    k: usize,
    rng: &mut impl Rng,
) -> Result<(String, Vec<Document>), RetrievalError> {
    assert!(!candidates.is_empty(), "select_query needs a candidate");
    let Some(subs) = sub_answers.filter(|s| !s.is_empty()) else {
        let q = candidates[0].clone();
        let docs = retrieve_or_empty(retriever, &q, k)?;
        return Ok((q, docs));
    };
    let mut fetched = Vec::with_capacity(candidates.len());
    for q in candidates {
        let docs = retrieve_or_empty(retriever, q, k)?;
        if !extract_subanswer_hits(&docs, subs).is_empty() {
            return Ok((q.clone(), docs));
        }
        fetched.push(docs);
    }
    let i = if candidates.len() == 1 {
        0
    } else {
        rng.random_range(0..candidates.len())
    };
    Ok((candidates[i].clone(), fetched.swap_remove(i)))
}

/// Queries proposed by the rewriting model, in sampling order.
pub fn parse_candidates(samples: &[String], fallback: &str) -> Vec<String> {
    let terms: Vec<String> = Vec::new();
    let out: Vec<String> = samples
        .iter()
        .filter_map(|s| match parse_turn(s, &terms) {
            Ok(p) => p.query.or_else(|| Some(s.trim().to_string())),
            Err(_) => None,
        })
        .filter(|q| !q.is_empty())
        .collect();
    if out.is_empty() {
        vec![fallback.to_string()]
    } else {
        out
    }
}

/// Unfiltered result for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub trajectory: Trajectory,
    pub retained: bool,
}

pub struct Synthesizer<'a> {
    pub config: &'a SynthesisConfig,
    pub templates: &'a PromptTemplates,
    pub reasoner: &'a dyn LanguageModel,
    pub rewriter: &'a dyn LanguageModel,
    pub retriever: &'a dyn Retriever,
}

impl Synthesizer<'_> {
    fn reason(&self, messages: Vec<ChatMessage>) -> Result<String, GatewayError> {
        let req = GenerationRequest::new(messages, &self.config.engine.generation_params);
        Ok(generate(self.reasoner, &req)?.swap_remove(0))
    }

    /// Runs one question through the pipeline and reports whether the
    /// result passes the answer filter.
    pub fn synthesize(&self, question: &Question) -> Result<Synthesized, SynthesisError> {
        if !question.has_golden() {
            return Err(SynthesisError::MissingGolden(question.id.clone()));
        }
        let cfg = self.config;
        let terms = &cfg.engine.trigger_terms;
        let style = cfg.engine.prompt_style;
        let mut rng = question_rng(cfg.seed, &question.id);

        let y0 = self.reason(self.templates.reasoning(question, "", &[], style))?;
        let mut last = parse_turn(&y0, terms).ok();
        let initial_reasoning = last.as_ref().map(|p| p.reasoning.clone()).unwrap_or_default();
        let mut steps: Vec<IterationStep> = Vec::new();

        for t in 1..=cfg.max_iters {
            let analysis = steps
                .last()
                .map(|s| s.reasoning.as_str())
                .unwrap_or(&initial_reasoning);
            let analysis = if analysis.trim().is_empty() {
                question.text.as_str()
            } else {
                analysis
            };
            let req = GenerationRequest::new(
                self.templates.zero_shot_rewrite(question, analysis)?,
                &cfg.engine.generation_params,
            )
            .sampled(cfg.query_samples, cfg.query_temperature);
            let samples = generate(self.rewriter, &req)?;
            let candidates = parse_candidates(&samples, &question.text);
            let (query, mut documents) = select_query(
                &candidates,
                self.retriever,
                question.sub_answers.as_deref(),
                cfg.engine.docs_per_iteration,
                &mut rng,
            )?;
            if documents.is_empty() {
                documents.push(empty_result_document(t));
            }
            steps.push(IterationStep {
                index: t,
                query,
                documents,
                reasoning: String::new(),
                knowledge_source: KnowledgeSource::External,
            });
            let raw = self.reason(self.templates.reasoning(
                question,
                &initial_reasoning,
                &steps,
                style,
            ))?;
            let parsed = parse_turn(&raw, terms).ok();
            steps.last_mut().expect("just pushed").reasoning = parsed
                .as_ref()
                .map(|p| p.reasoning.clone())
                .unwrap_or_default();
            let need = parsed.as_ref().is_none_or(|p| p.has_information_need);
            last = parsed;
            if !need {
                break;
            }
        }

        // A turn that already states the answer is reused as is.
        let answer = match last.and_then(|p| p.final_answer) {
            Some(a) if !steps.is_empty() => Some(a),
            _ => {
                let raw = self.reason(self.templates.final_answer(
                    question,
                    &initial_reasoning,
                    &steps,
                    style,
                ))?;
                parse_turn(&raw, terms).ok().and_then(|p| p.final_answer)
            }
        };
        let retained = answer
            .as_deref()
            .is_some_and(|a| answer_matches(a, &question.golden_answers));
        let termination = if answer.is_some() {
            Termination::AnsweredExternal
        } else {
            Termination::BudgetExhausted
        };
        Ok(Synthesized {
            trajectory: Trajectory {
                question: question.clone(),
                initial_reasoning,
                steps,
                final_answer: answer,
                termination,
            },
            retained,
        })
    }

    pub fn synthesize_batch(
        &self,
        questions: &[Question],
        parallelism: usize,
    ) -> Vec<Result<Synthesized, SynthesisError>> {
        // One backend serving both roles must keep a single script cursor.
        let shared = std::ptr::addr_eq(self.reasoner, self.rewriter);
        parallel_map(questions, parallelism, |q| {
            let reasoner = self.reasoner.session();
            let rewriter = (!shared).then(|| self.rewriter.session());
            let worker = Synthesizer {
                reasoner: reasoner.as_ref(),
                rewriter: rewriter.as_deref().unwrap_or(reasoner.as_ref()),
                ..*self
            };
            worker.synthesize(q)
        })
    }
}

/// The filtered variant: `None` when the answer does not match.
pub fn synthesize_instance(
    question: &Question,
    reasoner: &dyn LanguageModel,
    rewriter: &dyn LanguageModel,
    retriever: &dyn Retriever,
    config: &SynthesisConfig,
) -> Result<Option<Trajectory>, SynthesisError> {
    let s = Synthesizer {
        config,
        templates: PromptTemplates::builtin(),
        reasoner,
        rewriter,
        retriever,
    };
    let out = s.synthesize(question)?;
    Ok(out.retained.then_some(out.trajectory))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    /// `(input, output)` pairs, one per model turn.
    pub turns: Vec<(String, String)>,
    pub source_question_id: String,
    pub iteration_count: usize,
}

pub fn format_instance(trajectory: &Trajectory) -> Result<TrainingInstance, MissingAnswer> {
    let answer = trajectory
        .final_answer
        .as_deref()
        .ok_or_else(|| MissingAnswer(trajectory.question.id.clone()))?;
    let steps = &trajectory.steps;
    let n = steps.len();
    let turns = (0..=n)
        .map(|t| {
            let input = if t == 0 {
                trajectory.question.text.clone()
            } else {
                document_block(t, &steps[t - 1].documents)
            };
            let reasoning = if t == 0 {
                &trajectory.initial_reasoning
            } else {
                &steps[t - 1].reasoning
            };
            let output = if t < n {
                query_turn(reasoning, t + 1, &steps[t].query)
            } else {
                answer_turn(reasoning, answer)
            };
            (input, output)
        })
        .collect();
    Ok(TrainingInstance {
        turns,
        source_question_id: trajectory.question.id.clone(),
        iteration_count: n,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportMeta {
    pub seed: u64,
    pub config_digest: String,
    pub instance_count: usize,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    meta: ExportMeta,
}

#[derive(Serialize, Deserialize)]
struct InstanceLine {
    messages: Vec<ChatMessage>,
    train_mask: Vec<u8>,
    id: String,
    iteration_count: usize,
}

impl From<&TrainingInstance> for InstanceLine {
    fn from(inst: &TrainingInstance) -> Self {
        let mut messages = Vec::with_capacity(inst.turns.len() * 2);
        for (x, y) in &inst.turns {
            messages.push(ChatMessage::user(x.clone()));
            messages.push(ChatMessage::assistant(y.clone()));
        }
        InstanceLine {
            train_mask: train_mask(inst.turns.len()),
            messages,
            id: inst.source_question_id.clone(),
            iteration_count: inst.iteration_count,
        }
    }
}

/// `[0, 1]` per turn: only model outputs carry loss.
pub fn train_mask(turns: usize) -> Vec<u8> {
    std::iter::repeat_n([0u8, 1u8], turns).flatten().collect()
}

pub fn write_training<W: Write>(
    mut out: W,
    instances: &[TrainingInstance],
    seed: u64,
    config_digest: &str,
) -> Result<(), ExportError> {
    if instances.is_empty() {
        return Err(ExportError::Empty);
    }
    let header = HeaderLine {
        meta: ExportMeta {
            seed,
            config_digest: config_digest.to_string(),
            instance_count: instances.len(),
        },
    };
    writeln!(out, "{}", to_line(&header))?;
    for inst in instances {
        writeln!(out, "{}", to_line(&InstanceLine::from(inst)))?;
    }
    Ok(())
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("export lines serialize")
}

/// Writes the file only when there is something to write.
pub fn export_training_file(
    path: &std::path::Path,
    instances: &[TrainingInstance],
    seed: u64,
    config_digest: &str,
) -> Result<(), ExportError> {
    if instances.is_empty() {
        return Err(ExportError::Empty);
    }
    let mut buf = Vec::new();
    write_training(&mut buf, instances, seed, config_digest)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_training<R: BufRead>(
    reader: R,
) -> Result<(ExportMeta, Vec<TrainingInstance>), ExportError> {
    let mut meta = None;
    let mut instances = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| ExportError::Malformed { line: n, message };
        if meta.is_none() {
            let h: HeaderLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            meta = Some(h.meta);
            continue;
        }
        let l: InstanceLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if !l.messages.len().is_multiple_of(2) || l.messages.is_empty() {
            return Err(bad("messages must be user/assistant pairs".into()));
        }
        if l.train_mask != train_mask(l.messages.len() / 2) {
            return Err(bad("train_mask does not mark the assistant turns".into()));
        }
        let mut turns = Vec::with_capacity(l.messages.len() / 2);
        for pair in l.messages.chunks(2) {
            if pair[0].role != Role::User || pair[1].role != Role::Assistant {
                return Err(bad("messages must alternate user/assistant".into()));
            }
            turns.push((pair[0].content.clone(), pair[1].content.clone()));
        }
        instances.push(TrainingInstance {
            turns,
            source_question_id: l.id,
            iteration_count: l.iteration_count,
        });
    }
    let meta = meta.ok_or(ExportError::Malformed {
        line: 0,
        message: "missing header line".into(),
    })?;
    if meta.instance_count != instances.len() {
        return Err(ExportError::Malformed {
            line: 0,
            message: format!(
                "header announces {} instances, found {}",
                meta.instance_count,
                instances.len()
            ),
        });
    }
    Ok((meta, instances))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub total: usize,
    pub retained: usize,
    pub filtered: usize,
    pub failed: usize,
    pub retention: f64,
    /// Iteration counts of the retained instances.
    pub iteration_histogram: BTreeMap<usize, f64>,
}

impl SynthesisStats {
    pub fn collect(results: &[Result<Synthesized, SynthesisError>]) -> Self {
        let total = results.len();
        let kept: Vec<usize> = results
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .filter(|s| s.retained)
            .map(|s| s.trajectory.iteration_count())
            .collect();
        let failed = results.iter().filter(|r| r.is_err()).count();
        SynthesisStats {
            total,
            retained: kept.len(),
            filtered: total - kept.len() - failed,
            failed,
            retention: if total == 0 { 0.0 } else { kept.len() as f64 / total as f64 },
            iteration_histogram: iteration_histogram(kept),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptEntry, ScriptedMock};
    use crate::retrieval::CorpusIndex;

    fn traj(n: usize) -> Trajectory {
        let steps = (1..=n)
            .map(|t| IterationStep {
                index: t,
                query: format!("query {t}"),
                documents: vec![Document::new(format!("d{t}"), "Title", format!("text {t}"))],
                reasoning: format!("reasoning {t}"),
                knowledge_source: KnowledgeSource::External,
            })
            .collect();
        Trajectory {
            question: Question::new("q", "Question text?", &["ans"]),
            initial_reasoning: "Analysis: plan".into(),
            steps,
            final_answer: Some("ans".into()),
            termination: Termination::AnsweredExternal,
        }
    }

    #[test]
    fn one_step_gives_two_turns() {
        let inst = format_instance(&traj(1)).unwrap();
        assert_eq!(
            inst.turns,
            vec![
                ("Question text?".to_string(), "Analysis: plan\n\nInitial Query: query 1".to_string()),
                (
                    "Retrieved Document_1: Title text 1".to_string(),
                    "reasoning 1\n\nFinal Answer: ans.".to_string()
                ),
            ]
        );
    }

    #[test]
    fn zero_steps_gives_one_turn() {
        let inst = format_instance(&traj(0)).unwrap();
        assert_eq!(inst.turns.len(), 1);
        assert_eq!(inst.turns[0].1, "Analysis: plan\n\nFinal Answer: ans.");
    }

    #[test]
    fn three_steps_use_refined_marker() {
        let inst = format_instance(&traj(3)).unwrap();
        assert_eq!(inst.turns.len(), 4);
        assert!(inst.turns[1].1.ends_with("Refined Query: query 2"));
        assert!(inst.turns[3].1.ends_with("Final Answer: ans."));
    }

    #[test]
    fn unanswered_cannot_be_formatted() {
        let mut t = traj(1);
        t.final_answer = None;
        assert_eq!(format_instance(&t), Err(MissingAnswer("q".into())));
    }

    #[test]
    fn mask_and_round_trip() {
        let insts = vec![format_instance(&traj(1)).unwrap(), format_instance(&traj(2)).unwrap()];
        let mut buf = Vec::new();
        write_training(&mut buf, &insts, 7, "abc").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let second: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(second["train_mask"], serde_json::json!([0, 1, 0, 1]));
        let (meta, back) = read_training(&buf[..]).unwrap();
        assert_eq!(meta.seed, 7);
        assert_eq!(back, insts);
        let mut again = Vec::new();
        write_training(&mut again, &back, 7, "abc").unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn empty_export_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.jsonl");
        assert!(matches!(export_training_file(&p, &[], 0, "d"), Err(ExportError::Empty)));
        assert!(!p.exists());
    }

    #[test]
    fn answer_matching() {
        let g = |s: &str| vec![s.to_string()];
        assert!(answer_matches("19 June 2013.", &g("19 June 2013")));
        assert!(!answer_matches("", &g("x")));
        assert!(answer_matches("the Hilandar Monastery", &g("Hilandar monastery")));
    }

    fn index() -> CorpusIndex {
        CorpusIndex::build(vec![
            Document::new("1", "Alpha", "alpha facts only"),
            Document::new("2", "Beta", "beta mentions Gamma Ray"),
        ])
        .unwrap()
    }

    #[test]
    fn select_prefers_sub_answer_hits() {
        let idx = index();
        let cands = vec!["alpha".to_string(), "beta".to_string()];
        let subs = vec!["gamma ray".to_string()];
        let mut rng = question_rng(1, "q");
        let (q, docs) = select_query(&cands, &idx, Some(&subs), 1, &mut rng).unwrap();
        assert_eq!(q, "beta");
        assert_eq!(docs[0].id, "2");

        let (q, _) = select_query(&cands, &idx, None, 1, &mut rng).unwrap();
        assert_eq!(q, "alpha");
        let one = vec!["alpha".to_string()];
        let (q, _) = select_query(&one, &idx, Some(&subs), 1, &mut rng).unwrap();
        assert_eq!(q, "alpha");
    }

    #[test]
    fn random_fallback_is_seeded() {
        let idx = index();
        let cands: Vec<String> = ["alpha", "beta", "alpha facts", "beta mentions"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let subs = vec!["nowhere".to_string()];
        let pick = |seed| {
            let mut rng = question_rng(seed, "q");
            select_query(&cands, &idx, Some(&subs), 1, &mut rng).unwrap().0
        };
        assert_eq!(pick(3), pick(3));
    }

    #[test]
    fn candidates_from_samples() {
        let s = vec!["Query: one".to_string(), "  two  ".to_string(), " ".to_string()];
        assert_eq!(parse_candidates(&s, "fallback"), ["one", "two"]);
        assert_eq!(parse_candidates(&[], "fallback"), ["fallback"]);
    }

    #[test]
    fn trigger_free_reasoning_stops_after_one_round() {
        let reasoner = ScriptedMock::new(vec![
            ScriptEntry::new("Question:", &["Analysis: we must find the film.\nInitial Query: beta"]),
            ScriptEntry::new("Retrieved Document_1", &["Beta says Gamma Ray.\nFinal Answer: Gamma Ray."]),
        ]);
        let rewriter = ScriptedMock::new(vec![ScriptEntry::new(
            "Model Analysis",
            &["Query: beta", "Query: beta", "Query: beta", "Query: beta", "Query: beta"],
        )]);
        let idx = index();
        let q = Question::new("q", "What does beta mention?", &["gamma ray"]);
        let cfg = SynthesisConfig::default();
        let t = synthesize_instance(&q, &reasoner, &rewriter, &idx, &cfg).unwrap().unwrap();
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.final_answer.as_deref(), Some("Gamma Ray"));

        let wrong = Question::new("q", "What does beta mention?", &["delta"]);
        let r2 = ScriptedMock::new(reasoner.entries().to_vec());
        let w2 = ScriptedMock::new(rewriter.entries().to_vec());
        assert_eq!(synthesize_instance(&wrong, &r2, &w2, &idx, &cfg).unwrap(), None);
    }
}
