//! Answer scoring and run reports.
//!
//! Normalization follows the SQuAD convention used by common QA evaluation
//! toolkits: lowercase, strip ASCII punctuation, drop the articles
//! `a`/`an`/`the`, collapse whitespace. Every reported number depends on
//! it, so any change here changes all scores.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Termination, Trajectory};

static ARTICLES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").unwrap());

pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1.0 iff the normalized prediction equals some normalized alias.
pub fn exact_match(predicted: &str, golden: &[String]) -> f64 {
    let p = normalize_answer(predicted);
    golden.iter().any(|g| normalize_answer(g) == p) as u8 as f64
}

/// Token-level F1, maximized over aliases.
pub fn f1_score(predicted: &str, golden: &[String]) -> f64 {
    let pred = normalize_answer(predicted);
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    golden
        .iter()
        .map(|g| {
            let gold = normalize_answer(g);
            token_f1(&pred_tokens, &gold.split_whitespace().collect::<Vec<_>>())
        })
        .fold(0.0, f64::max)
}

fn token_f1(pred: &[&str], gold: &[&str]) -> f64 {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// 1.0 iff some normalized alias occurs inside the normalized prediction.
/// An alias that normalizes to nothing only matches an empty prediction.
pub fn accuracy_contains(predicted: &str, golden: &[String]) -> f64 {
    let p = normalize_answer(predicted);
    golden
        .iter()
        .map(|g| normalize_answer(g))
        .any(|g| if g.is_empty() { p.is_empty() } else { p.contains(&g) }) as u8 as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    EM,
    F1,
    Accuracy,
}

impl Metric {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "em" | "exact" | "exact_match" => Some(Metric::EM),
            "f1" => Some(Metric::F1),
            "acc" | "accuracy" => Some(Metric::Accuracy),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no trajectories to evaluate")]
    EmptyRun,
    #[error("question {0:?} has no golden answers")]
    MissingGolden(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub id: String,
    pub em: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub iteration_count: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub em: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Headline metric and its aggregate value.
    pub metric: Metric,
    pub score: f64,
    pub per_question: Vec<QuestionScore>,
    pub aggregates: Aggregates,
    /// Step count -> fraction of questions.
    pub iteration_histogram: BTreeMap<usize, f64>,
    pub config_digest: String,
}

pub fn score_trajectory(t: &Trajectory) -> QuestionScore {
    let golden = &t.question.golden_answers;
    let (em, f1, accuracy) = match &t.final_answer {
        Some(a) => (
            exact_match(a, golden),
            f1_score(a, golden),
            accuracy_contains(a, golden),
        ),
        None => (0.0, 0.0, 0.0),
    };
    QuestionScore {
        id: t.question.id.clone(),
        em,
        f1,
        accuracy,
        iteration_count: t.iteration_count(),
        termination: t.termination,
    }
}

pub fn evaluate_run(
    trajectories: &[Trajectory],
    metric: Metric,
    config_digest: &str,
) -> Result<EvalReport, EvalError> {
    if trajectories.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    if let Some(t) = trajectories.iter().find(|t| !t.question.has_golden()) {
        return Err(EvalError::MissingGolden(t.question.id.clone()));
    }
    let per_question: Vec<QuestionScore> = trajectories.iter().map(score_trajectory).collect();
    let n = per_question.len() as f64;
    let mean = |f: fn(&QuestionScore) -> f64| per_question.iter().map(f).sum::<f64>() / n;
    let aggregates = Aggregates {
        em: mean(|q| q.em),
        f1: mean(|q| q.f1),
        accuracy: mean(|q| q.accuracy),
        mean_iterations: mean(|q| q.iteration_count as f64),
    };
    let score = match metric {
        Metric::EM => aggregates.em,
        Metric::F1 => aggregates.f1,
        Metric::Accuracy => aggregates.accuracy,
    };
    Ok(EvalReport {
        metric,
        score,
        iteration_histogram: iteration_histogram(per_question.iter().map(|q| q.iteration_count)),
        per_question,
        aggregates,
        config_digest: config_digest.to_string(),
    })
}

/// Relative frequency of each count.
pub fn iteration_histogram(counts: impl IntoIterator<Item = usize>) -> BTreeMap<usize, f64> {
    let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total = 0usize;
    for c in counts {
        *tally.entry(c).or_default() += 1;
        total += 1;
    }
    tally
        .into_iter()
        .map(|(k, v)| (k, v as f64 / total as f64))
        .collect()
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Aligned plain-text summary.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "metric       {:?}", self.metric);
        let _ = writeln!(out, "score        {:.4}", self.score);
        let _ = writeln!(out, "questions    {}", self.per_question.len());
        let _ = writeln!(out, "em           {:.4}", self.aggregates.em);
        let _ = writeln!(out, "f1           {:.4}", self.aggregates.f1);
        let _ = writeln!(out, "accuracy     {:.4}", self.aggregates.accuracy);
        let _ = writeln!(out, "mean_iters   {:.4}", self.aggregates.mean_iterations);
        let _ = writeln!(out, "config       {}", self.config_digest);
        let _ = writeln!(out);
        let width = self
            .per_question
            .iter()
            .map(|q| q.id.len())
            .max()
            .unwrap_or(2)
            .max(2);
        let _ = writeln!(
            out,
            "{:<width$}  {:>5}  {:>6}  {:>5}  {:>5}  termination",
            "id", "em", "f1", "acc", "iters"
        );
        for q in &self.per_question {
            let _ = writeln!(
                out,
                "{:<width$}  {:>5.1}  {:>6.4}  {:>5.1}  {:>5}  {}",
                q.id,
                q.em,
                q.f1,
                q.accuracy,
                q.iteration_count,
                q.termination.as_str()
            );
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("iterations,frequency\n");
        for (k, v) in &self.iteration_histogram {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Document, IterationStep, KnowledgeSource, Question};
    use proptest::prelude::*;

    fn g(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The Hilandar Monastery."), "hilandar monastery");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("12 March 1955"), "12 march 1955");
        assert_eq!(normalize_answer("  A  cat,  an Owl "), "cat owl");
        // Articles inside words survive.
        assert_eq!(normalize_answer("Theatre anthem"), "theatre anthem");
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("19 June 2013", &g(&["19 June 2013"])), 1.0);
        assert_eq!(exact_match("19 June 2013", &g(&["20 June 2013"])), 0.0);
        assert_eq!(exact_match("Hilandar monastery", &g(&["the Hilandar Monastery"])), 1.0);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score("12 March 1955", &g(&["12 March 1955"])), 1.0);
        assert!((f1_score("March 1955", &g(&["12 March 1955"])) - 0.8).abs() < 1e-12);
        assert_eq!(f1_score("", &g(&["x"])), 0.0);
        assert_eq!(f1_score("", &g(&["the"])), 1.0);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(
            accuracy_contains("the answer is hilandar monastery", &g(&["Hilandar monastery"])),
            1.0
        );
        assert_eq!(accuracy_contains("unknown", &g(&["Hilandar monastery"])), 0.0);
        assert_eq!(accuracy_contains("12 march 1955 probably", &g(&["12 March 1955"])), 1.0);
        assert_eq!(accuracy_contains("anything", &g(&["a"])), 0.0);
    }

    fn traj(id: &str, answer: Option<&str>, gold: &str, steps: usize) -> Trajectory {
        Trajectory {
            question: Question::new(id, "q?", &[gold]),
            initial_reasoning: "r".into(),
            steps: (1..=steps)
                .map(|i| IterationStep {
                    index: i,
                    query: "q".into(),
                    documents: vec![Document::new("d", "", "t")],
                    reasoning: "r".into(),
                    knowledge_source: KnowledgeSource::External,
                })
                .collect(),
            final_answer: answer.map(str::to_string),
            termination: if answer.is_some() {
                Termination::AnsweredExternal
            } else {
                Termination::BudgetExhausted
            },
        }
    }

    #[test]
    fn evaluate_run_means_and_histogram() {
        let ts = vec![
            traj("a", Some("Paris"), "Paris", 1),
            traj("b", Some("Rome"), "Paris", 1),
            traj("c", None, "Paris", 2),
        ];
        let r = evaluate_run(&ts[..2], Metric::EM, "x").unwrap();
        assert_eq!(r.aggregates.em, 0.5);
        assert_eq!(r.score, 0.5);
        let r = evaluate_run(&ts, Metric::F1, "x").unwrap();
        assert_eq!(r.per_question[2].em, 0.0);
        assert!((r.iteration_histogram[&1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.iteration_histogram[&2] - 1.0 / 3.0).abs() < 1e-12);
        let total: f64 = r.iteration_histogram.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!((r.aggregates.mean_iterations - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_run_rejects_degenerate_input() {
        assert_eq!(evaluate_run(&[], Metric::EM, "x").unwrap_err(), EvalError::EmptyRun);
        let mut t = traj("z", Some("a"), "a", 0);
        t.question.golden_answers.clear();
        assert_eq!(
            evaluate_run(&[t], Metric::EM, "x").unwrap_err(),
            EvalError::MissingGolden("z".into())
        );
    }

    #[test]
    fn metric_choice_only_changes_headline() {
        let ts = vec![traj("a", Some("March 1955"), "12 March 1955", 1)];
        let em = evaluate_run(&ts, Metric::EM, "d").unwrap();
        let f1 = evaluate_run(&ts, Metric::F1, "d").unwrap();
        assert_eq!(em.per_question, f1.per_question);
        assert_eq!(em.aggregates, f1.aggregates);
        assert_ne!(em.score, f1.score);
    }

    #[test]
    fn table_and_csv_render() {
        let ts = vec![traj("a", Some("Paris"), "Paris", 1)];
        let r = evaluate_run(&ts, Metric::EM, "d").unwrap();
        assert!(r.to_table().contains("AnsweredExternal"));
        assert_eq!(r.histogram_csv(), "iterations,frequency\n1,1\n");
    }

    proptest! {
        #[test]
        fn f1_ignores_alias_order(
            pred in "[a-c ]{0,12}",
            mut aliases in proptest::collection::vec("[a-c .]{0,10}", 1..5),
        ) {
            let before = f1_score(&pred, &aliases);
            aliases.reverse();
            prop_assert_eq!(before, f1_score(&pred, &aliases));
        }

        #[test]
        fn exact_implies_others(
            pred in "[a-c ,.]{0,12}",
            aliases in proptest::collection::vec("[a-c ,.]{0,10}", 1..4),
        ) {
            if exact_match(&pred, &aliases) == 1.0 {
                prop_assert_eq!(accuracy_contains(&pred, &aliases), 1.0);
                prop_assert_eq!(f1_score(&pred, &aliases), 1.0);
            }
        }
    }
}
