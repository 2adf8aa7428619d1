//! Pairwise-ranking recommender training on implicit purchase/view feedback.
//!
//! The crate covers the full desk-scale experiment loop:
//!
//! - [`types`]: domain containers (interactions, feedback dataset, factor
//!   model) and the run configuration structs.
//! - [`ingest`]: log parsing, the three-stage preprocessing pipeline
//!   (purchase dedup, view leak removal, activity filtering), dense
//!   re-indexing, session extraction and per-user view/purchase weights.
//! - [`model`]: factor initialization, scoring and deterministic top-k
//!   ranking.
//! - [`samplers`]: training-example generators — uniform, reduced-space,
//!   dynamic (hardest-of-X), biased view pairs and (user, purchased,
//!   viewed, unobserved) quadruples.
//! - [`train`]: SGD on the pairwise and the view-weighted triple objective,
//!   fixed or Adagrad step sizes, validation-based early stopping.
//! - [`eval`]: leave-one-out splitting, HR@k / NDCG@k, popularity baseline
//!   and popularity-skewness curves.
//!
//! Everything here is `no_std`-compatible (`alloc` required); file formats
//! and the command-line front end live in the companion `viewrank-cli`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod eval;
pub mod ingest;
pub mod model;
pub mod samplers;
pub mod train;
pub mod types;

pub use types::{Behavior, FactorModel, FeedbackDataset, Interaction};
