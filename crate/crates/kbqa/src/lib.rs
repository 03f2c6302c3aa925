//! Question answering over incomplete knowledge bases.
//!
//! The model fuses two evidence sources per question: a graph reader that
//! propagates information over a retrieved subgraph with attention over
//! relations and neighbors, and a text reader that folds that graph
//! knowledge into document token representations through a learned gate.
//! Candidate answers are scored against the reformulated question from the
//! combined evidence.
//!
//! Everything is built on a small reverse-mode autodiff core ([`tensor`])
//! with f64 values; training and data generation are deterministic given a
//! seed.

pub mod data;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod config;
pub mod model;
pub mod scorer;
pub mod subgraph;
pub mod text;
pub mod train;
pub mod tensor;
