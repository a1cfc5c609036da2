//! Deterministic curation pipeline for large video corpora.
//!
//! The crate implements a four-stage pipeline: scene splitting, statistical
//! filtering, model-based purification, and structured captioning, plus the
//! training-time sampling helpers (caption prompt sampling, centered sub-clip
//! windows) and a synthetic-defect corpus generator used to verify the whole
//! chain end to end.
//!
//! Everything is reproducible by construction: identical inputs, seeds and
//! configuration produce byte-identical manifests regardless of worker count.

// Gates and validators compare floats as `!(v >= threshold)` on purpose: the
// negated form makes NaN fail closed instead of sailing through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod caption_engine;
pub mod clip_logic;
pub mod config;
pub mod frame_io;
pub mod manifest_store;
pub mod pipeline;
pub mod provider;
pub mod purification;
pub mod rng;
pub mod scene_split;
pub mod stat_filters;
pub mod synth_corpus;
