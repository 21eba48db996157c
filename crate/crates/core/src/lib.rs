//! Core library for a knowledge-graph QA generation pipeline.
//!
//! The pieces compose in pipeline order: [`kg`] loads and reduces the input
//! graph, [`graphlet`] enumerates and samples small connected subgraphs,
//! [`prompt`] assembles stage prompts, [`llm`] drives a chat-completion
//! backend, [`qa`] runs the generation/filter funnel, [`retrieval`] ranks and
//! verifies supporting evidence, and [`rephrase`] converts accepted pairs
//! into target formats.

pub mod graphlet;
pub mod jsonl;
pub mod kg;
pub mod llm;
pub mod prompt;
pub mod qa;
pub mod rephrase;
pub mod retrieval;
