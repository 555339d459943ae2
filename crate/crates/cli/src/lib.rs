//! The `iterrag` command line. One subcommand per workflow; see `Command`.

mod commands;
pub mod error;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::CliError;
use settings::Layers;

#[derive(Debug, Parser)]
#[command(name = "iterrag", version, about = "Autonomous iterative retrieval for QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Answer every dataset question with the iterative engine.
    Run(RunArgs),
    /// Build filtered training dialogues from a QA dataset.
    Synthesize(SynthesizeArgs),
    /// Re-score a trajectories file against a dataset.
    Evaluate(EvaluateArgs),
    /// Single-shot reference answers (naive or standard RAG).
    Baseline(BaselineArgs),
    /// Turn answered trajectories into a training file.
    ExportTrain(ExportArgs),
}

/// Options shared by the commands that drive a model.
#[derive(Debug, Args, Default)]
struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// single-hop or multi-hop: picks the default budgets and demonstrations.
    #[arg(long)]
    dataset_style: Option<String>,
    #[arg(long)]
    max_external_iters: Option<usize>,
    #[arg(long)]
    max_parametric_iters: Option<usize>,
    #[arg(long = "docs-per-iter")]
    docs_per_iter: Option<usize>,
    /// external-parametric, parametric-external or no-parametric.
    #[arg(long)]
    knowledge_order: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Chat-completions endpoint.
    #[arg(long)]
    backend_url: Option<String>,
    /// JSONL script for the deterministic mock backend.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// JSONL corpus indexed with BM25.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Remote retrieval service.
    #[arg(long)]
    retriever_url: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// em, f1 or accuracy.
    #[arg(long)]
    metric: Option<String>,
    /// Directory of template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    dedupe_documents: bool,
}

impl Common {
    fn layers(&self) -> Result<Layers, CliError> {
        let mut layers = match &self.config {
            Some(p) => Layers::from_file(p)?,
            None => Layers::default(),
        };
        let s = |v: &Option<String>| v.clone();
        let n = |v: Option<usize>| v.map(|x| x.to_string());
        let p = |v: &Option<PathBuf>| v.as_ref().map(|x| x.display().to_string());
        layers.apply([
            ("dataset_style", s(&self.dataset_style)),
            ("max_external_iters", n(self.max_external_iters)),
            ("max_parametric_iters", n(self.max_parametric_iters)),
            ("docs_per_iteration", n(self.docs_per_iter)),
            ("knowledge_order", s(&self.knowledge_order)),
            ("seed", self.seed.map(|x| x.to_string())),
            ("backend_url", s(&self.backend_url)),
            ("mock_script", p(&self.mock_script)),
            ("model", s(&self.model)),
            ("corpus", p(&self.corpus)),
            ("retriever_url", s(&self.retriever_url)),
            ("dataset", p(&self.dataset)),
            ("output_dir", p(&self.output_dir)),
            ("parallelism", n(self.parallelism)),
            ("metric", s(&self.metric)),
            ("templates", p(&self.templates)),
            ("dedupe_documents", self.dedupe_documents.then(|| "true".into())),
        ]);
        // A mock script on the command line beats a URL from the file.
        if self.mock_script.is_some() {
            layers.remove("backend_url");
        }
        if self.backend_url.is_some() {
            layers.remove("mock_script");
        }
        Ok(layers)
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    #[command(flatten)]
    common: Common,
    /// Separate query-rewriting backend; defaults to the main one.
    #[arg(long)]
    rewrite_backend_url: Option<String>,
    #[arg(long)]
    rewrite_mock_script: Option<PathBuf>,
    /// Candidate queries sampled per round.
    #[arg(long)]
    query_samples: Option<usize>,
    #[arg(long)]
    query_temperature: Option<f64>,
    /// Most retrieval rounds per question (defaults to max-external-iters).
    #[arg(long)]
    max_synthesis_iters: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "em")]
    metric: String,
    /// Write report files here instead of printing the JSON report.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: Common,
    /// naive or standard-rag.
    #[arg(long)]
    mode: String,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code. Failures print one JSON line on stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return 0;
            }
            let err = CliError::Usage(e.to_string().trim().replace('\n', " "));
            eprintln!("{}", err.to_json_line());
            return err.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(a) => commands::run(&a.common.layers()?),
        Command::Synthesize(a) => {
            let mut layers = a.common.layers()?;
            layers.apply([
                ("rewrite_backend_url", a.rewrite_backend_url),
                ("rewrite_mock_script", a.rewrite_mock_script.map(|p| p.display().to_string())),
                ("query_samples", a.query_samples.map(|x| x.to_string())),
                ("query_temperature", a.query_temperature.map(|x| x.to_string())),
                ("max_synthesis_iters", a.max_synthesis_iters.map(|x| x.to_string())),
            ]);
            commands::synthesize(&layers)
        }
        Command::Evaluate(a) => {
            commands::evaluate(&a.trajectories, &a.dataset, &a.metric, a.output_dir.as_deref())
        }
        Command::Baseline(a) => commands::baseline(&a.common.layers()?, &a.mode),
        Command::ExportTrain(a) => commands::export_train(&a.trajectories, &a.output, a.seed),
    }
}
