//! Long/short reasoning-mixture pipeline.
//!
//! The crate turns a long chain-of-thought corpus into a mixed long/short
//! training corpus and measures the efficiency of the result:
//!
//! - [`corpus`]: the JSONL dataset contract (strict reader/writer, profiles).
//! - [`cot`]: trajectory structure — step segmentation, marker lexicons,
//!   anchors, and word-frequency profiling.
//! - [`rewrite`]: compressing long trajectories through a chat endpoint
//!   while preserving their step structure.
//! - [`validate`]: structural fidelity/retention scoring of rewrites.
//! - [`mixture`]: mode prompts, training-record assembly, seeded shuffling,
//!   export with a dataset card, and loss auditing.
//! - [`eval`]: benchmark runs, answer extraction, and length/accuracy
//!   metrics with cross-benchmark summaries.
//! - [`client`]: the chat-completions wire client plus a scriptable mock.
//! - [`config`]: one flat config file with environment overrides.

pub mod cli;
pub mod client;
pub mod config;
pub mod corpus;
pub mod cot;
pub mod error;
pub mod eval;
pub mod mixture;
pub mod rewrite;
pub mod validate;

mod parallel;

pub use error::{LsMixError, Result};
