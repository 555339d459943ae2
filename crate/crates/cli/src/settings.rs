//! Effective settings: built-in defaults, overridden by a flat `key = value`
//! config file, overridden by command-line flags.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use iterrag_core::evaluation::Metric;
use iterrag_core::gateway::{ChatClient, LanguageModel, PromptTemplates, ScriptedMock};
use iterrag_core::model::DatasetRecord;
use iterrag_core::retrieval::{read_corpus, CorpusIndex, RemoteRetriever, Retriever};
use iterrag_core::{EngineConfig, KnowledgeOrder, PromptStyle, Question};

use crate::error::CliError;

/// Every key accepted in a config file. Flags use the same names with
/// dashes, except `docs_per_iteration` which is `--docs-per-iter`.
pub const KEYS: &[&str] = &[
    "dataset_style",
    "max_external_iters",
    "max_parametric_iters",
    "docs_per_iteration",
    "knowledge_order",
    "trigger_terms",
    "temperature",
    "max_tokens",
    "stop_sequences",
    "dedupe_documents",
    "seed",
    "backend_url",
    "mock_script",
    "rewrite_backend_url",
    "rewrite_mock_script",
    "model",
    "corpus",
    "retriever_url",
    "dataset",
    "output_dir",
    "parallelism",
    "metric",
    "templates",
    "query_samples",
    "query_temperature",
    "max_synthesis_iters",
];

/// Raw layered values before interpretation.
#[derive(Debug, Default, Clone)]
pub struct Layers(BTreeMap<String, String>);

impl Layers {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(CliError::missing_file("config", path));
        }
        parse_config(&std::fs::read_to_string(path)?)
    }

    /// Flags win over whatever is already present.
    pub fn apply(&mut self, flags: impl IntoIterator<Item = (&'static str, Option<String>)>) {
        for (k, v) in flags {
            if let Some(v) = v {
                self.0.insert(k.to_string(), v);
            }
        }
    }

    pub fn remove(&mut self, key: &str) {
        self.0.remove(key);
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("invalid value {v:?} for {key}: {e}")))
            })
            .transpose()
    }
}

pub fn parse_config(text: &str) -> Result<Layers, CliError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {}: expected key = value",
                i + 1
            )));
        };
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(CliError::Usage(format!("config line {}: unknown key {k:?}", i + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(Layers(map))
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Mock(PathBuf),
    Chat { url: String, model: String },
}

impl BackendSpec {
    pub fn describe(&self) -> String {
        match self {
            BackendSpec::Mock(p) => format!("mock:{}", p.display()),
            BackendSpec::Chat { url, model } => format!("chat:{url}#{model}"),
        }
    }

    pub fn open(&self) -> Result<Arc<dyn LanguageModel>, CliError> {
        match self {
            BackendSpec::Mock(path) => {
                if !path.exists() {
                    return Err(CliError::missing_file("mock script", path));
                }
                let mock = ScriptedMock::from_jsonl(BufReader::new(File::open(path)?))
                    .map_err(|e| CliError::jsonl(path, e))?;
                Ok(Arc::new(mock))
            }
            BackendSpec::Chat { url, model } => {
                let token = std::env::var(iterrag_core::gateway::LLM_TOKEN_ENV).ok();
                Ok(Arc::new(ChatClient::new(url.clone(), token, model.clone())))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub engine: EngineConfig,
    pub seed: u64,
    pub backend: Option<BackendSpec>,
    pub rewrite_backend: Option<BackendSpec>,
    pub corpus: Option<PathBuf>,
    pub retriever_url: Option<String>,
    pub dataset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub metric: Metric,
    pub templates: Option<PathBuf>,
    pub query_samples: usize,
    pub query_temperature: f64,
    pub max_synthesis_iters: Option<usize>,
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn backend_spec(layers: &Layers, url_key: &str, mock_key: &str, model: &str) -> Option<BackendSpec> {
    if let Some(p) = layers.get(mock_key) {
        return Some(BackendSpec::Mock(PathBuf::from(p)));
    }
    layers.get(url_key).map(|u| BackendSpec::Chat {
        url: u.to_string(),
        model: model.to_string(),
    })
}

impl Settings {
    pub fn resolve(layers: &Layers) -> Result<Self, CliError> {
        let style = match layers.get("dataset_style") {
            None => PromptStyle::SingleHop,
            Some(s) => PromptStyle::parse(s).ok_or_else(|| {
                CliError::Usage(format!("unknown dataset_style {s:?} (single-hop|multi-hop)"))
            })?,
        };
        let mut engine = match style {
            PromptStyle::SingleHop => EngineConfig::single_hop(),
            PromptStyle::MultiHop => EngineConfig::multi_hop(),
        };
        if let Some(v) = layers.parse("max_external_iters")? {
            engine.max_external_iters = v;
        }
        if let Some(v) = layers.parse("max_parametric_iters")? {
            engine.max_parametric_iters = v;
        }
        if let Some(v) = layers.parse("docs_per_iteration")? {
            engine.docs_per_iteration = v;
        }
        if let Some(s) = layers.get("knowledge_order") {
            engine.knowledge_order = KnowledgeOrder::parse(s).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown knowledge_order {s:?} (external-parametric|parametric-external|no-parametric)"
                ))
            })?;
        }
        if let Some(s) = layers.get("trigger_terms") {
            engine.trigger_terms = split_list(s);
        }
        if let Some(s) = layers.get("stop_sequences") {
            engine.generation_params.stop_sequences = split_list(s);
        }
        if let Some(v) = layers.parse("temperature")? {
            engine.generation_params.temperature = v;
        }
        if let Some(v) = layers.parse("max_tokens")? {
            engine.generation_params.max_tokens = v;
        }
        if let Some(v) = layers.parse("dedupe_documents")? {
            engine.dedupe_documents = v;
        }
        let engine = engine
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;

        let model = layers.get("model").unwrap_or("default").to_string();
        let backend = backend_spec(layers, "backend_url", "mock_script", &model).or_else(|| {
            let url = std::env::var(iterrag_core::gateway::LLM_URL_ENV).ok()?;
            (!url.is_empty()).then(|| BackendSpec::Chat {
                url,
                model: model.clone(),
            })
        });
        let metric = match layers.get("metric") {
            None => Metric::EM,
            Some(m) => Metric::parse(m)
                .ok_or_else(|| CliError::Usage(format!("unknown metric {m:?} (em|f1|accuracy)")))?,
        };
        let parallelism = layers.parse("parallelism")?.unwrap_or_else(default_parallelism);
        if parallelism < 1 {
            return Err(CliError::Usage("parallelism >= 1".into()));
        }
        let query_samples = layers.parse("query_samples")?.unwrap_or(5);
        if query_samples < 1 {
            return Err(CliError::Usage("query_samples >= 1".into()));
        }
        Ok(Settings {
            engine,
            seed: layers.parse("seed")?.unwrap_or(0),
            rewrite_backend: backend_spec(layers, "rewrite_backend_url", "rewrite_mock_script", &model),
            backend,
            corpus: layers.get("corpus").map(PathBuf::from),
            retriever_url: layers.get("retriever_url").map(str::to_string),
            dataset: layers.get("dataset").map(PathBuf::from),
            output_dir: layers.get("output_dir").map(PathBuf::from),
            parallelism,
            metric,
            templates: layers.get("templates").map(PathBuf::from),
            query_samples,
            query_temperature: layers.parse("query_temperature")?.unwrap_or(0.7),
            max_synthesis_iters: layers.parse("max_synthesis_iters")?,
        })
    }

    pub fn llm(&self) -> Result<Arc<dyn LanguageModel>, CliError> {
        self.backend
            .as_ref()
            .ok_or_else(|| {
                CliError::Usage(
                    "no model backend: pass --mock-script or --backend-url, or set AUTORAG_LLM_URL"
                        .into(),
                )
            })?
            .open()
    }

    pub fn output_dir(&self) -> Result<&Path, CliError> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| CliError::Usage("--output-dir is required".into()))
    }

    pub fn prompt_templates(&self) -> Result<PromptTemplates, CliError> {
        match &self.templates {
            None => Ok(PromptTemplates::default()),
            Some(dir) if !dir.is_dir() => Err(CliError::Usage(format!(
                "templates directory not found: {}",
                dir.display()
            ))),
            Some(dir) => Ok(PromptTemplates::from_dir(dir)?),
        }
    }

    /// `None` when no retrieval source is configured.
    pub fn retriever(&self) -> Result<Option<Arc<dyn Retriever>>, CliError> {
        match (&self.corpus, &self.retriever_url) {
            (Some(_), Some(_)) => Err(CliError::Usage(
                "set only one of --corpus and --retriever-url".into(),
            )),
            (Some(path), None) => {
                if !path.exists() {
                    return Err(CliError::missing_file("corpus", path));
                }
                let docs = read_corpus(BufReader::new(File::open(path)?))
                    .map_err(|e| CliError::jsonl(path, e))?;
                let index = CorpusIndex::build(docs)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                Ok(Some(Arc::new(index)))
            }
            (None, Some(url)) => Ok(Some(Arc::new(RemoteRetriever::new(url.clone())))),
            (None, None) => Ok(None),
        }
    }

    pub fn require_retriever(&self) -> Result<Arc<dyn Retriever>, CliError> {
        self.retriever()?.ok_or_else(|| {
            CliError::Usage("a retrieval source is required: --corpus or --retriever-url".into())
        })
    }

    pub fn questions(&self) -> Result<(PathBuf, Vec<Question>), CliError> {
        let path = self
            .dataset
            .clone()
            .ok_or_else(|| CliError::Usage("--dataset is required".into()))?;
        let questions = load_dataset(&path)?;
        Ok((path, questions))
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn load_dataset(path: &Path) -> Result<Vec<Question>, CliError> {
    if !path.exists() {
        return Err(CliError::missing_file("dataset", path));
    }
    let records: Vec<DatasetRecord> =
        iterrag_core::jsonl::read_jsonl(BufReader::new(File::open(path)?))
            .map_err(|e| CliError::jsonl(path, e))?;
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(CliError::Data(format!(
                "{}: duplicate question id {:?}",
                path.display(),
                r.id
            )));
        }
    }
    Ok(records.into_iter().map(Question::from).collect())
}

/// Errors out listing every question without golden answers.
pub fn require_golden(questions: &[Question], path: &Path) -> Result<(), CliError> {
    let missing: Vec<&str> = questions
        .iter()
        .filter(|q| !q.has_golden())
        .map(|q| q.id.as_str())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{}: questions without golden_answers: {}",
            path.display(),
            missing.join(", ")
        )))
    }
}
