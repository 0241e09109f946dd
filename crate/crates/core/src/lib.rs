//! Benchmark engine for hierarchical graph pooling.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] holds the immutable CSR graph, dataset loaders, batching and
//!   descriptive statistics.
//! * [`tensor`] is a small dense reverse-mode differentiation tape with an
//!   Adam optimizer.
//! * [`layers`] implements the GCN propagation rule, readout and heads.
//! * [`pooling`] provides node-dropping (TopK, SAG, k-MIS) and
//!   node-clustering (DiffPool, MinCut, DMoN, JustBalance) operators.
//! * [`models`] wires those into the hierarchical classifier and the graph
//!   U-Net.
//! * [`perturb`] and [`splits`] produce noisy graphs and (out-of-distribution)
//!   partitions.
//! * [`harness`] runs configured experiments and persists their results.

pub mod error;
pub mod graph;
pub mod harness;
pub mod layers;
pub mod models;
pub mod perturb;
pub mod pooling;
pub mod rng;
pub mod splits;
pub mod tensor;

pub use error::{Error, Result};
