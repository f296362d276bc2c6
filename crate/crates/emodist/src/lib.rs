//! Soft-label emotion recognition evaluation harness.
//!
//! Builds gold emotion distributions from multi-annotator labels, assembles
//! deterministic prompts with dialogue context and textualized speech
//! features, queries an LLM provider through a record/replay gateway, parses
//! constrained probability-dictionary outputs, and scores predictions with
//! distributional and majority-vote metrics stratified by gold entropy.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod distribution;
pub mod gateway;
pub mod label;
pub mod metrics;
pub mod parser;
pub mod promptgen;
pub mod report;
pub mod runner;

pub use distribution::EmotionDistribution;
pub use label::LabelSpace;
