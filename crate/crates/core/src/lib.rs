//! Churn prediction for player-game pairs and churn ranking of games.
//!
//! The pipeline reads a temporal bipartite graph of players and games
//! ([`graph`]), samples context edges with attributed random walks ([`walk`]),
//! trains an inductive edge-embedding network ([`model`], [`loss`], [`train`]),
//! and aggregates per-edge churn probabilities into game rankings ([`rank`]).
//! [`synth`] generates data with a known churn process and [`metrics`]
//! scores both levels.

pub mod cli;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rank;
pub mod synth;
pub mod train;
pub mod walk;

pub use error::{Error, Result};
