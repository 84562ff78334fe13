//! Structural pruning toolkit for convolutional network graphs.
//!
//! The pipeline: load a model in the interchange format (`graph`), analyze
//! which channels must be pruned together (`depgraph`), score channel
//! importance (`importance`), plan removals (`planner`), physically rewrite
//! the graph (`rewriter`), and verify via the reference interpreter
//! (`executor`) and cost/quality metrics (`cost`, `segmetrics`).

pub mod cli;
pub mod cost;
pub mod depgraph;
pub mod error;
pub mod executor;
pub mod graph;
pub mod importance;
pub mod planner;
pub mod rewriter;
pub mod rng;
pub mod scalar;
pub mod segmetrics;
pub mod zoo;

pub use error::{Error, Result};
pub use graph::{ModelGraph, Node, Op, TensorSpec};

/// Element type of model weights and activations in format_version 1.
pub type Elem = f32;

/// Activation tensor used by the reference interpreter.
pub type Activation = executor::TensorValue<Elem>;
