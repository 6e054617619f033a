//! Sketch-based influence maximization under the independent cascade model.
//!
//! The pipeline:
//!
//! 1. [`graph`] loads an edge list into a CSR graph with fixed-point edge
//!    probabilities.
//! 2. [`sampling`] decides edge liveness per simulation on the fly from an
//!    edge hash and a per-simulation random value.
//! 3. [`fasst`] splits simulations over devices (optionally after sorting
//!    the random values) and builds device-local graphs.
//! 4. [`engine`] propagates per-simulation FM registers ([`sketch`]) to a
//!    fixed point and cascades committed seeds.
//! 5. [`runtime`] runs greedy seed selection over simulated devices joined
//!    by in-process collectives.
//!
//! [`oracle`] evaluates seed sets independently by plain Monte-Carlo.

pub mod engine;
pub mod fasst;
pub mod graph;
pub mod oracle;
pub mod runtime;
pub mod sampling;
pub mod sketch;
pub mod synth;

pub use engine::{DeviceGraph, FrontierQueue};
pub use fasst::{PartitionMode, PartitionPlan};
pub use graph::{RawEdgeList, VertexId, WeightSetting, WeightedGraph};
pub use oracle::{GreedyConfig, InfluenceEstimate, OracleConfig};
pub use runtime::{run, RunConfig, RunOutcome, SeedReport};
pub use sampling::{EdgeHash, RandomVector};
pub use sketch::{RegisterHashFamily, SketchMatrix, VISITED};
