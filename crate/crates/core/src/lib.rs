//! Influence-guided data poisoning for top-N recommender systems.
//!
//! The crate trains matrix-factorization and random-walk recommenders,
//! measures how much each training rating influences a target item's
//! predictions, crafts fake-user profiles that promote that item, and
//! evaluates both the attacks and simple shilling detectors.

pub mod attack;
pub mod curvature;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod eval;
pub mod graph;
pub mod influence;
pub mod linalg;
pub mod mf;
pub mod stats;
pub mod topn;

pub use dataset::{ingest, partial_view, synth, ItemId, KnowledgeView, Rating, RatingDataset, SynthSpec, UserId};
pub use error::{Error, Result};
pub use mf::{train, FactorModel, TrainConfig};
pub use topn::{Scorer, TopNList};
