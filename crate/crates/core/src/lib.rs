//! Precision-aware iteration-time prediction for distributed training.
//!
//! The pipeline is: load a layer-structured [`graph::ComputationGraph`],
//! assign per-operator precision from a [`precision::CastRuleTable`], split
//! the graph into DP × TP × PP GPU subgraphs, look up operator latencies in a
//! [`latency_db::LatencyDb`] and combine computation time with DP/TP
//! gradient-synchronization time and the pipeline bubble.

pub mod error;
pub mod eval;
pub mod graph;
pub mod latency_db;
pub mod partition;
pub mod precision;
pub mod predictor;

pub use error::{Error, Phase, Result};
pub use eval::{oracle_predict, sweep, EvalReport, Measurement, SweepRow};
pub use graph::{ComputationGraph, OpKind, OperatorNode, Precision, TensorSpec, WeightSpec};
pub use latency_db::{FallbackPolicy, LatencyDb, LatencyKey, LatencyRecord, Provenance};
pub use partition::{partition, JobConfig, Subgraph};
pub use precision::{assign_precision, CastRuleTable, PrecisionSetting};
pub use predictor::{predict, Prediction};
