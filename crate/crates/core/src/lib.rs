//! Graph-of-thoughts reasoning for LLM-based sequential recommendation.
//!
//! The engine reasons separately over a user's short-term interests, long-term
//! interests and the histories of similar users, then lets the model vote the
//! branch results into one top-N list. Every model call becomes a vertex of a
//! [`graph::ThoughtGraph`], which is what latency/volume accounting and the
//! ablation tests inspect.
//!
//! Modules, bottom-up:
//! - [`graph`]: thought graph and its two transformations
//! - [`prompts`]: templates and slot rendering
//! - [`llm`]: backends (HTTP, scripted mock, cassette) and reply parsing
//! - [`retrieval`]: exact vector search, embedders and title grounding
//! - [`dataset`]: ingestion, filtering, sampling, leave-one-out splits
//! - [`strategies`]: the reasoning strategies, registered by name
//! - [`evaluation`]: HR/NDCG, novelty metrics and popularity reports

pub mod dataset;
pub mod evaluation;
pub mod graph;
pub mod llm;
pub mod prompts;
pub mod retrieval;
pub mod strategies;
pub mod text;
