//! Replays of published model transcripts through the engine and the
//! synthesis pipeline.

use std::collections::HashMap;

use iterrag_core::engine::Engine;
use iterrag_core::gateway::{ScriptEntry, ScriptedMock};
use iterrag_core::retrieval::{CorpusIndex, RetrievalResult, Retriever};
use iterrag_core::synthesis::{format_instance, synthesize_instance, SynthesisConfig};
use iterrag_core::{
    Document, EngineConfig, KnowledgeSource, Question, RetrievalError, Termination,
};

/// Returns a fixed passage per exact query string.
struct Lookup(HashMap<&'static str, Document>);

impl Retriever for Lookup {
    fn retrieve(&self, query: &str, _k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        Ok(self
            .0
            .get(query)
            .map(|d| vec![RetrievalResult { document: d.clone(), score: 1.0 }])
            .unwrap_or_default())
    }
}

const Q1: &str = "Who is the father of Edward Cromwell, 3rd Baron Cromwell?";
const Q2: &str = "When did Henry Cromwell, 2nd Baron Cromwell die?";
const Q3: &str = "What was the date of Henry Cromwell, 2nd Baron Cromwell's death?";

#[test]
fn cromwell_trace_takes_three_external_steps() {
    let retriever = Lookup(HashMap::from([
        (Q1, Document::new("e", "Edward Cromwell, 3rd Baron Cromwell", "Edward Cromwell, 3rd Baron Cromwell (c. 1560 – 27 April 1607) was an English peer. He was the son of Henry Cromwell, 2nd Baron Cromwell by his wife Mary")),
        (Q2, Document::new("u", "Ughtred", "governor of Jersey, by whom she had two children: In 1537, three years after death of Anthony Ughtred in October 1534, she married Gregory Cromwell")),
        (Q3, Document::new("h", "Cromwell", "Henry Cromwell, 2nd Baron Cromwell of Oakham (before 21 May 1538 – 20 November 1592) was an English peer")),
    ]));
    let llm = ScriptedMock::new(vec![
        ScriptEntry::new("Question: When did Edward Cromwell", &["Analysis: To answer this question, I would need to know the name of Edward Cromwell, 3rd Baron Cromwell's father, and his death date.\n\nInitial Query: Who is the father of Edward Cromwell, 3rd Baron Cromwell?"]),
        ScriptEntry::new("Retrieved Document_1: Edward", &["Intermediate Answer_1: Based on the Retrieved Document_1, Edward Cromwell, 3rd Baron Cromwell's father is Henry Cromwell, 2nd Baron Cromwell. To answer the question, we need to find the date of death of Henry Cromwell, 2nd Baron Cromwell.\n\nRefined Query: When did Henry Cromwell, 2nd Baron Cromwell die?"]),
        ScriptEntry::new("Retrieved Document_2:", &["Intermediate Answer_2: Based on the Retrieved Document_2, there is no information about the date of death of Henry Cromwell, 2nd Baron Cromwell. We need to refine our query and search again.\n\nRefined Query: What was the date of Henry Cromwell, 2nd Baron Cromwell's death?"]),
        ScriptEntry::new("Retrieved Document_3:", &["Intermediate Answer_3: Based on the Retrieved Document_3, Henry Cromwell, 2nd Baron Cromwell died on 20 November 1592.\n\nFinal Answer: 20 November 1592."]),
    ]);
    let config = EngineConfig::multi_hop();
    let q = Question::new("cromwell", "When did Edward Cromwell, 3Rd Baron Cromwell's father die?", &["20 November 1592"]);
    let s = Engine::new(config.clone()).unwrap().run(&q, &llm, &retriever).unwrap();
    let t = &s.trajectory;
    assert_eq!(t.steps.len(), 3);
    assert!(t.steps.iter().all(|s| s.knowledge_source == KnowledgeSource::External));
    assert_eq!(t.steps.iter().map(|s| s.query.as_str()).collect::<Vec<_>>(), [Q1, Q2, Q3]);
    assert_eq!(t.final_answer.as_deref(), Some("20 November 1592"));
    assert_eq!(t.termination, Termination::AnsweredExternal);
    assert_eq!((s.llm_calls, s.retrievals), (4, 3));
    t.check_invariants(&config).unwrap();

    // The exported dialogue reuses the live document surface.
    let inst = format_instance(t).unwrap();
    assert_eq!(inst.turns.len(), 4);
    assert!(inst.turns[3].0.starts_with("Retrieved Document_3: Cromwell Henry Cromwell"));
    assert!(inst.turns[3].1.ends_with("Final Answer: 20 November 1592."));
}

fn betrayal_corpus() -> CorpusIndex {
    CorpusIndex::build(vec![
        Document::new("pob", "Point of Betrayal", "Point of Betrayal is a 1995 film about a man (Rick Johnson) trying to drive his mother (Dina Merrill) insane in order to get her money. The film was directed by Richard Martini and produced by Jonathan D. Krane."),
        Document::new("rm", "Richard Martini", "Richard Martini (born 12 March 1955) is an American film director, producer, screenwriter and freelance journalist. Martini was born in 1955 and grew up in Northbrook, Illinois."),
        Document::new("zz", "Zebra", "Zebras are African equines with distinctive black-and-white striped coats."),
    ])
    .unwrap()
}

fn betrayal_scripts() -> (ScriptedMock, ScriptedMock) {
    let reasoner = ScriptedMock::new(vec![
        ScriptEntry::new("Question: What is the date of birth of the director of film Point Of Betrayal?", &["Analysis: To answer this question, I would need to know the director of the film \"Point Of Betrayal\" and his date of birth.\n\nInitial Query: Date of birth of the director of the film \"Point Of Betrayal\""]),
        ScriptEntry::new("Retrieved Document_1: Point", &["Intermediate Answer_1: Based on the Retrieved Document_1, the director of film Point Of Betrayal is Richard Martini. However, there is no information about the date of birth of Richard Martini in this document. To answer the question, we need to find the date of birth of Richard Martini.\n\nRefined Query: What is the date of birth of Richard Martini, the director of Point Of Betrayal?"]),
        ScriptEntry::new("Retrieved Document_2:", &["Intermediate Answer_2: Based on the Retrieved Document_2, there is no information about the date of birth of Richard Martini. We need to refine our query and search again.\n\nRefined Query: What is the date of birth of Richard Martini, the director of the film Point Of Betrayal?"]),
        ScriptEntry::new("Retrieved Document_3:", &["Intermediate Answer_3: Based on the Retrieved Document_3, Richard Martini was born on 12 March 1955. Therefore, the date of birth of the director of film Point Of Betrayal is 12 March 1955.\n\nFinal Answer: 12 March 1955."]),
    ]);
    // Each round offers a dead-end candidate first; selection must skip it.
    let round = |good: &str| -> [String; 5] {
        ["Query: zebra stripes".into(), format!("Query: {good}"), "Query: zebra".into(), "Query: zebra".into(), "Query: zebra".into()]
    };
    let r1 = round("Point of Betrayal director");
    let r2 = round("Point of Betrayal film 1995");
    let r3 = round("Richard Martini born");
    let entry = |pat: &str, r: &[String; 5]| ScriptEntry {
        pattern: pat.into(),
        responses: r.to_vec(),
    };
    let rewriter = ScriptedMock::new(vec![
        entry("Model Analysis: Analysis:", &r1),
        entry("Model Analysis: Intermediate Answer_1", &r2),
        entry("Model Analysis: Intermediate Answer_2", &r3),
    ]);
    (reasoner, rewriter)
}

#[test]
fn point_of_betrayal_example_is_retained() {
    let (reasoner, rewriter) = betrayal_scripts();
    let corpus = betrayal_corpus();
    let cfg = SynthesisConfig {
        engine: EngineConfig { docs_per_iteration: 1, ..EngineConfig::multi_hop() },
        ..SynthesisConfig::new(EngineConfig::multi_hop(), 11)
    };
    let q = Question::new("pob", "What is the date of birth of the director of film Point Of Betrayal?", &["12 March 1955"])
        .with_sub_answers(&["Richard Martini", "12 March 1955"]);
    let t = synthesize_instance(&q, &reasoner, &rewriter, &corpus, &cfg).unwrap().expect("retained");
    assert_eq!(t.steps.len(), 3);
    assert_eq!(
        t.steps.iter().map(|s| s.query.as_str()).collect::<Vec<_>>(),
        ["Point of Betrayal director", "Point of Betrayal film 1995", "Richard Martini born"]
    );
    assert_eq!(t.steps[2].documents[0].id, "rm");
    assert_eq!(t.final_answer.as_deref(), Some("12 March 1955"));

    let (reasoner, rewriter) = betrayal_scripts();
    let wrong = Question { golden_answers: vec!["1 January 1900".into()], ..q };
    assert_eq!(synthesize_instance(&wrong, &reasoner, &rewriter, &corpus, &cfg).unwrap(), None);
}
