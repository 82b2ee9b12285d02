//! Desk-scale lab for user-conditioned language modeling.
//!
//! The question this crate explores: instead of pasting a user's entire
//! activity history into a language model's text prompt, can we *compress*
//! that history into a handful of continuous prompt vectors — trained jointly
//! with the model — and pay attention cost on a few rows instead of thousands
//! of tokens?
//!
//! The pieces:
//!
//! - [`tensor`] — dense f64 tensors and a from-scratch reverse-mode
//!   differentiation graph.
//! - [`rng`] — a fixed, platform-stable pseudo-random generator so every run
//!   is reproducible bit for bit.
//! - [`embedder`] — frozen hashing text embedder that maps each history item
//!   to a fixed-width vector, one segment per field.
//! - [`data`] — movie-history data model: CSV ingestion, synthetic
//!   generation, preference labels, rendering templates, splits, and shards.
//!
//! Everything upstream of the standard library is implemented here; the only
//! external crates are plumbing (CLI parsing, CSV/JSON/TOML codecs).

pub mod checkpoint;
pub mod config;
pub mod cost;
pub mod data;
pub mod eval;
pub mod harness;
pub mod layers;
pub mod lm;
pub mod uem;
pub mod embedder;
pub mod rng;
pub mod tensor;
pub mod train;
