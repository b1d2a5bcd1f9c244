//! Architecture search for click-through-rate models.
//!
//! The crate wires four pieces together:
//!
//! * a block-based DAG search space over MLP / FM / dot-product interaction
//!   blocks ([`search_space`]),
//! * a desk-scale CTR trainer with analytic gradients and exact
//!   parameter/FLOP accounting ([`model`]),
//! * a low-fidelity evaluation pipeline (subsampling, feature hashing,
//!   warm-start embeddings) producing an append-only evaluation log
//!   ([`evaluator`]),
//! * searchers over that space: a multi-objective evolutionary loop guided
//!   by a learning-to-rank surrogate ([`searcher`], [`guider`]), a
//!   tree-partitioning MCTS baseline with virtual-loss parallelism
//!   ([`lanas`]), and plain random search.
//!
//! [`metrics`] holds the rank-consistency mathematics (Kendall tau-b,
//! NDCG, sliding windows) and the deterministic synthetic architecture
//! oracle used by the searcher acceptance tests; [`data`] loads CSV data
//! and generates planted-interaction synthetic datasets.

pub mod ablation;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod guider;
pub mod lanas;
pub mod metrics;
pub mod model;
pub mod search_space;
pub mod searcher;

pub use error::{Error, Result};
