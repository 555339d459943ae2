use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;

use iterrag_core::baseline::{run_baseline, BaselineMode};
use iterrag_core::batch::parallel_map;
use iterrag_core::engine::{Engine, EngineSession};
use iterrag_core::evaluation::{evaluate_run, EvalError, EvalReport, Metric};
use iterrag_core::jsonl::{read_jsonl, write_jsonl};
use iterrag_core::synthesis::{
    export_training_file, format_instance, ExportError, SynthesisConfig, SynthesisError,
    SynthesisStats, Synthesizer,
};
use iterrag_core::{EngineError, Trajectory};

use crate::error::CliError;
use crate::settings::{load_dataset, require_golden, Layers, Settings};

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_jsonl(&mut w, records)?;
    w.flush()?;
    Ok(())
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    fs::write(path, text)?;
    Ok(())
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<(), CliError> {
    fs::write(dir.join("report.json"), report.to_json())?;
    fs::write(dir.join("report.txt"), report.to_table())?;
    fs::write(dir.join("histogram.csv"), report.histogram_csv())?;
    Ok(())
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::MissingGolden(_) => CliError::Usage(e.to_string()),
        EvalError::EmptyRun => CliError::Data(e.to_string()),
    }
}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn manifest(command: &str, s: &Settings, dataset: &Path, extra: serde_json::Value) -> serde_json::Value {
    let mut m = json!({
        "command": command,
        "config": s.engine,
        "config_digest": s.engine.digest(),
        "seed": s.seed,
        "dataset": dataset.display().to_string(),
        "corpus": s.corpus.as_ref().map(|p| p.display().to_string()),
        "retriever_url": s.retriever_url,
        "backend": s.backend.as_ref().map(|b| b.describe()),
        "output_dir": s.output_dir.as_ref().map(|p| p.display().to_string()),
        "metric": s.metric,
        "timestamp": unix_time(),
    });
    if let (Some(m), Some(extra)) = (m.as_object_mut(), extra.as_object()) {
        m.extend(extra.clone());
    }
    m
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    id: &'a str,
    kind: &'static str,
    message: String,
}

fn error_record<'a>(id: &'a str, e: &EngineError) -> ErrorRecord<'a> {
    ErrorRecord {
        id,
        kind: if e.is_backend_failure() { "backend" } else { "usage" },
        message: e.to_string(),
    }
}

/// Shared tail of `run` and `baseline`: trajectories, errors, report.
fn finish_batch(
    dir: &Path,
    s: &Settings,
    ids: &[&str],
    results: Vec<Result<Trajectory, EngineError>>,
) -> Result<(), CliError> {
    let mut trajectories = Vec::new();
    let mut errors = Vec::new();
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(t) => trajectories.push(t),
            Err(e) => errors.push(error_record(id, &e)),
        }
    }
    write_lines(&dir.join("trajectories.jsonl"), &trajectories)?;
    if !errors.is_empty() {
        write_lines(&dir.join("errors.jsonl"), &errors)?;
    }
    if !trajectories.is_empty() {
        let report = evaluate_run(&trajectories, s.metric, &s.engine.digest()).map_err(eval_error)?;
        write_report(dir, &report)?;
        println!(
            "{}",
            json!({"questions": ids.len(), "answered": trajectories.len(), "metric": report.metric, "score": report.score})
        );
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Backend(format!(
            "{} of {} questions failed; see {}",
            errors.len(),
            ids.len(),
            dir.join("errors.jsonl").display()
        )))
    }
}

pub fn run(layers: &Layers) -> Result<(), CliError> {
    let s = Settings::resolve(layers)?;
    let dir = s.output_dir()?.to_path_buf();
    let (dataset, questions) = s.questions()?;
    require_golden(&questions, &dataset)?;
    let retriever = s.require_retriever()?;
    let llm = s.llm()?;
    let engine = Engine::new(s.engine.clone())?.with_templates(s.prompt_templates()?);

    let sessions = engine.run_batch(&questions, llm.as_ref(), retriever.as_ref(), s.parallelism);

    fs::create_dir_all(&dir)?;
    let traces: Vec<_> = sessions
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .flat_map(|s: &EngineSession| s.events.iter())
        .collect();
    write_lines(&dir.join("traces.jsonl"), &traces)?;
    write_pretty(&dir.join("manifest.json"), &manifest("run", &s, &dataset, json!({})))?;
    let ids: Vec<&str> = questions.iter().map(|q| q.id.as_str()).collect();
    let results = sessions.into_iter().map(|r| r.map(|s| s.trajectory)).collect();
    finish_batch(&dir, &s, &ids, results)
}

pub fn baseline(layers: &Layers, mode: &str) -> Result<(), CliError> {
    let mode = BaselineMode::parse(mode)
        .ok_or_else(|| CliError::Usage(format!("unknown mode {mode:?} (naive|standard-rag)")))?;
    let s = Settings::resolve(layers)?;
    let dir = s.output_dir()?.to_path_buf();
    let (dataset, questions) = s.questions()?;
    require_golden(&questions, &dataset)?;
    let retriever = match mode {
        BaselineMode::Naive => None,
        BaselineMode::StandardRag => Some(s.require_retriever()?),
    };
    let llm = s.llm()?;
    let templates = s.prompt_templates()?;
    let results = parallel_map(&questions, s.parallelism, |q| {
        let session = llm.session();
        run_baseline(
            mode,
            q,
            session.as_ref(),
            retriever.as_deref(),
            s.engine.docs_per_iteration,
            &templates,
            &s.engine.generation_params,
        )
    });
    fs::create_dir_all(&dir)?;
    write_pretty(
        &dir.join("manifest.json"),
        &manifest("baseline", &s, &dataset, json!({ "mode": mode })),
    )?;
    let ids: Vec<&str> = questions.iter().map(|q| q.id.as_str()).collect();
    finish_batch(&dir, &s, &ids, results)
}

pub fn synthesize(layers: &Layers) -> Result<(), CliError> {
    let s = Settings::resolve(layers)?;
    let dir = s.output_dir()?.to_path_buf();
    let (dataset, questions) = s.questions()?;
    require_golden(&questions, &dataset)?;
    let retriever = s.require_retriever()?;
    let reasoner = s.llm()?;
    let rewriter = s.rewrite_backend.as_ref().map(|b| b.open()).transpose()?;
    let templates = s.prompt_templates()?;
    let config = SynthesisConfig {
        engine: s.engine.clone(),
        max_iters: s.max_synthesis_iters.unwrap_or(s.engine.max_external_iters),
        query_samples: s.query_samples,
        query_temperature: s.query_temperature,
        seed: s.seed,
    };
    let synth = Synthesizer {
        config: &config,
        templates: &templates,
        reasoner: reasoner.as_ref(),
        rewriter: rewriter.as_deref().unwrap_or(reasoner.as_ref()),
        retriever: retriever.as_ref(),
    };
    let results = synth.synthesize_batch(&questions, s.parallelism);
    let stats = SynthesisStats::collect(&results);

    fs::create_dir_all(&dir)?;
    let mut kept = Vec::new();
    let mut errors = Vec::new();
    for (q, r) in questions.iter().zip(&results) {
        match r {
            Ok(out) if out.retained => kept.push(out.trajectory.clone()),
            Ok(_) => {}
            Err(SynthesisError::Engine(e)) => errors.push(error_record(&q.id, e)),
            Err(e @ SynthesisError::MissingGolden(_)) => errors.push(ErrorRecord {
                id: &q.id,
                kind: "usage",
                message: e.to_string(),
            }),
        }
    }
    let instances = kept
        .iter()
        .map(format_instance)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Data(e.to_string()))?;
    write_pretty(&dir.join("synthesis_stats.json"), &stats)?;
    write_pretty(
        &dir.join("manifest.json"),
        &manifest("synthesize", &s, &dataset, json!({ "synthesis": config })),
    )?;
    write_lines(&dir.join("trajectories.jsonl"), &kept)?;
    if !errors.is_empty() {
        write_lines(&dir.join("errors.jsonl"), &errors)?;
    }
    println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
    match export_training_file(&dir.join("train.jsonl"), &instances, s.seed, &s.engine.digest()) {
        Ok(()) => {}
        Err(ExportError::Empty) if errors.is_empty() => {
            return Err(CliError::Data("no instance passed the answer filter".into()))
        }
        Err(ExportError::Empty) => {}
        Err(ExportError::Io(e)) => return Err(e.into()),
        Err(e) => return Err(CliError::Data(e.to_string())),
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Backend(format!(
            "{} of {} questions failed; see {}",
            errors.len(),
            questions.len(),
            dir.join("errors.jsonl").display()
        )))
    }
}

fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, CliError> {
    if !path.exists() {
        return Err(CliError::missing_file("trajectories", path));
    }
    read_jsonl(BufReader::new(File::open(path)?)).map_err(|e| CliError::jsonl(path, e))
}

/// The config digest recorded next to a trajectories file, if any.
fn sibling_digest(trajectories: &Path) -> String {
    let manifest = trajectories
        .parent()
        .unwrap_or(Path::new("."))
        .join("manifest.json");
    fs::read_to_string(manifest)
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v["config_digest"].as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn evaluate(
    trajectories: &Path,
    dataset: &Path,
    metric: &str,
    output_dir: Option<&Path>,
) -> Result<(), CliError> {
    let metric = Metric::parse(metric)
        .ok_or_else(|| CliError::Usage(format!("unknown metric {metric:?} (em|f1|accuracy)")))?;
    let mut runs = read_trajectories(trajectories)?;
    let questions = load_dataset(dataset)?;
    let by_id: HashMap<&str, &iterrag_core::Question> =
        questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let orphans: Vec<&str> = runs
        .iter()
        .map(|t| t.question.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !orphans.is_empty() {
        return Err(CliError::Usage(format!(
            "trajectories not in dataset: {}",
            orphans.join(", ")
        )));
    }
    for t in &mut runs {
        t.question.golden_answers = by_id[t.question.id.as_str()].golden_answers.clone();
    }
    let report = evaluate_run(&runs, metric, &sibling_digest(trajectories)).map_err(eval_error)?;
    match output_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_report(dir, &report)
        }
        None => {
            print!("{}", report.to_json());
            Ok(())
        }
    }
}

pub fn export_train(trajectories: &Path, output: &Path, seed: u64) -> Result<(), CliError> {
    let runs = read_trajectories(trajectories)?;
    let instances: Vec<_> = runs.iter().filter_map(|t| format_instance(t).ok()).collect();
    let skipped = runs.len() - instances.len();
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    export_training_file(output, &instances, seed, &sibling_digest(trajectories)).map_err(|e| match e {
        ExportError::Empty => CliError::Data("no answered trajectories to export".into()),
        ExportError::Io(e) => e.into(),
        other => CliError::Data(other.to_string()),
    })?;
    println!("{}", json!({"exported": instances.len(), "skipped_unanswered": skipped}));
    Ok(())
}
