//! Fixture generators and a thin wrapper around the built binary.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn iterrag<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_iterrag"))
        .args(args)
        .env_remove("AUTORAG_LLM_URL")
        .env_remove("AUTORAG_LLM_TOKEN")
        .output()
        .expect("binary runs")
}

pub fn write_jsonl(path: &Path, rows: &[Value]) {
    let body: String = rows.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, body).unwrap();
}

pub fn read_lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not a JSON line: {text}"))
}

pub struct SyntheticSet {
    pub dataset: PathBuf,
    pub corpus: PathBuf,
    pub script: PathBuf,
}

/// `n` lookup questions ("code of item i"), one passage per item and a
/// mock script that answers question `i` correctly iff `correct(i)`.
/// The script covers both the answering loop and query rewriting, so it
/// drives `run` and `synthesize` alike.
pub fn synthetic_set(dir: &Path, n: usize, correct: impl Fn(usize) -> bool) -> SyntheticSet {
    let mut questions = Vec::new();
    let mut docs = Vec::new();
    let mut script = Vec::new();
    for i in 0..n {
        questions.push(json!({
            "id": format!("s{i:03}"),
            "question": format!("What is the code of item {i}?"),
            "golden_answers": [format!("code{i}")],
        }));
        docs.push(json!({"id": format!("item{i:03}"), "title": "", "text": format!("Item {i} has code code{i}.")}));
        script.push(json!({
            "match": format!("Question: What is the code of item {i}?"),
            "responses": [format!("Analysis: I need the code of item {i}.\n\nInitial Query: item {i} code")],
        }));
        script.push(json!({
            "match": format!("Model Analysis: Analysis: I need the code of item {i}."),
            "responses": vec![format!("Query: item {i} code"); 5],
        }));
        let answer = if correct(i) { format!("code{i}") } else { format!("wrong{i}") };
        script.push(json!({
            "match": format!("Retrieved Document_1: Item {i} has"),
            "responses": [format!("The passage gives the code of item {i}.\n\nFinal Answer: {answer}.")],
        }));
    }
    let set = SyntheticSet {
        dataset: dir.join("dataset.jsonl"),
        corpus: dir.join("corpus.jsonl"),
        script: dir.join("mock.jsonl"),
    };
    write_jsonl(&set.dataset, &questions);
    write_jsonl(&set.corpus, &docs);
    write_jsonl(&set.script, &script);
    set
}
