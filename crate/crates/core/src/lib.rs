//! Autonomous iterative retrieval for question answering.
//!
//! A language model drives a multi-turn loop. Each turn it reads the
//! passages it asked for and either issues a sharper query or commits to an
//! answer; nothing outside the model decides when to stop. [`engine`] runs
//! that loop. [`synthesis`] builds filtered training dialogues from it, and
//! [`evaluation`] scores the answers.

pub mod baseline;
pub mod batch;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod gateway;
#[cfg(feature = "remote")]
pub mod http;
pub mod jsonl;
pub mod model;
pub mod parser;
pub mod retrieval;
pub mod synthesis;

pub use error::{ConfigError, EngineError, GatewayError, RetrievalError};
pub use model::{
    Document, EngineConfig, GenerationParams, IterationStep, KnowledgeOrder, KnowledgeSource,
    PromptStyle, Question, Termination, Trajectory,
};
