//! Domain records shared by every stage: questions, documents, the
//! iteration record of one run and the engine configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;

/// Trigger terms that mark an information need in a model's reasoning.
pub const DEFAULT_TRIGGER_TERMS: [&str; 4] = ["however", "no information", "find", "refine"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    /// The user input.
    pub text: String,
    /// Reference answer aliases; any of them counts as correct.
    pub golden_answers: Vec<String>,
    /// Intermediate answers of a multi-hop question, used to filter sampled
    /// queries during synthesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_answers: Option<Vec<String>>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>, golden: &[&str]) -> Self {
        Question {
            id: id.into(),
            text: text.into(),
            golden_answers: golden.iter().map(|s| s.to_string()).collect(),
            sub_answers: None,
        }
    }

    pub fn with_sub_answers(mut self, subs: &[&str]) -> Self {
        self.sub_answers = Some(subs.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn has_text(&self) -> bool {
        !self.text.trim().is_empty()
    }

    pub fn has_golden(&self) -> bool {
        !self.golden_answers.is_empty()
    }
}

/// One line of a QA dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub golden_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_answers: Option<Vec<String>>,
}

impl From<DatasetRecord> for Question {
    fn from(r: DatasetRecord) -> Self {
        Question {
            id: r.id,
            text: r.question,
            golden_answers: r.golden_answers,
            sub_answers: r.sub_answers,
        }
    }
}

impl From<&Question> for DatasetRecord {
    fn from(q: &Question) -> Self {
        DatasetRecord {
            id: q.id.clone(),
            question: q.text.clone(),
            golden_answers: q.golden_answers.clone(),
            sub_answers: q.sub_answers.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    /// Title followed by body, the way passages are shown to the model.
    pub fn contents(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KnowledgeSource {
    External,
    Parametric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationStep {
    pub index: usize,
    pub query: String,
    pub documents: Vec<Document>,
    pub reasoning: String,
    pub knowledge_source: KnowledgeSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    AnsweredExternal,
    AnsweredParametric,
    FallbackDirect,
    BudgetExhausted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::AnsweredExternal => "AnsweredExternal",
            Termination::AnsweredParametric => "AnsweredParametric",
            Termination::FallbackDirect => "FallbackDirect",
            Termination::BudgetExhausted => "BudgetExhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question: Question,
    pub initial_reasoning: String,
    pub steps: Vec<IterationStep>,
    pub final_answer: Option<String>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn iteration_count(&self) -> usize {
        self.steps.len()
    }

    pub fn knowledge_sequence(&self) -> Vec<KnowledgeSource> {
        self.steps.iter().map(|s| s.knowledge_source).collect()
    }

    /// Checks the structural invariants of a trajectory produced under
    /// `config`. Returns a description of the first violation.
    pub fn check_invariants(&self, config: &EngineConfig) -> Result<(), String> {
        for (i, step) in self.steps.iter().enumerate() {
            if step.index != i + 1 {
                return Err(format!("step {} has index {}", i + 1, step.index));
            }
            if step.knowledge_source == KnowledgeSource::External && step.documents.is_empty() {
                return Err(format!("external step {} has no documents", step.index));
            }
        }
        let answered = self.final_answer.is_some();
        if answered == (self.termination == Termination::BudgetExhausted) {
            return Err(format!(
                "final_answer presence {answered} disagrees with termination {:?}",
                self.termination
            ));
        }
        let budget = config.max_external_iters + config.max_parametric_iters;
        if self.steps.len() > budget {
            return Err(format!("{} steps exceed budget {budget}", self.steps.len()));
        }
        let seq = self.knowledge_sequence();
        let ordered = match config.knowledge_order {
            KnowledgeOrder::ExternalThenParametric => is_partitioned(&seq, KnowledgeSource::External),
            KnowledgeOrder::ParametricThenExternal => {
                is_partitioned(&seq, KnowledgeSource::Parametric)
            }
            KnowledgeOrder::NoParametric => seq.iter().all(|s| *s == KnowledgeSource::External),
        };
        if !ordered {
            return Err(format!("knowledge sequence {seq:?} violates {:?}", config.knowledge_order));
        }
        Ok(())
    }
}

fn is_partitioned(seq: &[KnowledgeSource], first: KnowledgeSource) -> bool {
    let boundary = seq.iter().position(|s| *s != first).unwrap_or(seq.len());
    seq[boundary..].iter().all(|s| *s != first)
}

/// Order in which external and parametric knowledge phases run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum KnowledgeOrder {
    #[default]
    ExternalThenParametric,
    ParametricThenExternal,
    NoParametric,
}

impl KnowledgeOrder {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "external-parametric" | "externalthenparametric" => {
                Some(KnowledgeOrder::ExternalThenParametric)
            }
            "parametric-external" | "parametricthenexternal" => {
                Some(KnowledgeOrder::ParametricThenExternal)
            }
            "no-parametric" | "noparametric" => Some(KnowledgeOrder::NoParametric),
            _ => None,
        }
    }
}

/// Which few-shot demonstrations lead the reasoning prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum PromptStyle {
    #[default]
    MultiHop,
    SingleHop,
}

impl PromptStyle {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "multihop" => Some(PromptStyle::MultiHop),
            "singlehop" => Some(PromptStyle::SingleHop),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            max_tokens: 512,
            stop_sequences: vec!["###".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Maximum number of retriever interactions.
    pub max_external_iters: usize,
    /// Maximum number of self-generated (parametric) documents.
    pub max_parametric_iters: usize,
    pub docs_per_iteration: usize,
    pub knowledge_order: KnowledgeOrder,
    pub trigger_terms: Vec<String>,
    pub generation_params: GenerationParams,
    #[serde(default)]
    pub prompt_style: PromptStyle,
    /// Drop documents already shown in an earlier step. Off by default.
    #[serde(default)]
    pub dedupe_documents: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig::single_hop()
    }
}

impl EngineConfig {
    /// Settings used for open-domain single-hop datasets (NQ-style).
    pub fn single_hop() -> Self {
        EngineConfig {
            max_external_iters: 5,
            max_parametric_iters: 5,
            docs_per_iteration: 3,
            knowledge_order: KnowledgeOrder::ExternalThenParametric,
            trigger_terms: DEFAULT_TRIGGER_TERMS.iter().map(|s| s.to_string()).collect(),
            generation_params: GenerationParams::default(),
            prompt_style: PromptStyle::SingleHop,
            dedupe_documents: false,
        }
    }

    /// Settings used for multi-hop datasets (2Wiki-style).
    pub fn multi_hop() -> Self {
        EngineConfig {
            max_external_iters: 10,
            max_parametric_iters: 5,
            docs_per_iteration: 2,
            prompt_style: PromptStyle::MultiHop,
            ..EngineConfig::single_hop()
        }
    }

    pub fn validate(self) -> Result<Self, ConfigError> {
        validate_config(self)
    }

    /// Stable hex digest of the effective configuration.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn validate_config(config: EngineConfig) -> Result<EngineConfig, ConfigError> {
    if config.max_external_iters + config.max_parametric_iters < 1 {
        return Err(ConfigError(
            "max_external_iters + max_parametric_iters >= 1".into(),
        ));
    }
    if config.docs_per_iteration < 1 {
        return Err(ConfigError("docs_per_iteration >= 1".into()));
    }
    if config.trigger_terms.iter().all(|t| t.trim().is_empty()) {
        return Err(ConfigError("trigger_terms must be non-empty".into()));
    }
    let gen = &config.generation_params;
    if !(gen.temperature >= 0.0 && gen.temperature.is_finite()) {
        return Err(ConfigError("temperature >= 0".into()));
    }
    if gen.max_tokens < 1 {
        return Err(ConfigError("max_tokens >= 1".into()));
    }
    Ok(config)
}
