//! Splits a graph into DP × TP × PP GPU-specific subgraphs.
//!
//! Pipeline stages own contiguous layer ranges of `floor(L / p)` layers, with
//! the `L mod p` remainder layers handed one each to the earliest stages.
//! Within a stage every DP replica and TP rank receives a deep copy of the
//! stage's layers; weights with a declared slice dimension are divided by the
//! TP degree along that dimension. Operator inputs have their leading (batch)
//! dimension rewritten to the per-GPU batch `batch_size / d`.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, OperatorNode, WeightSpec};
use crate::precision::PrecisionSetting;

fn one() -> u64 {
    1
}

/// Parallelism degrees, precision setting and link bandwidth of a training job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub dp_degree: u64,
    pub tp_degree: u64,
    pub pp_degree: u64,
    pub precision: PrecisionSetting,
    /// Global batch size of one iteration.
    pub batch_size: u64,
    /// Link bandwidth in bytes per second.
    pub link_bandwidth: f64,
    /// Recorded for reporting only; no term of the cost model depends on it.
    #[serde(default = "one")]
    pub micro_batches: u64,
}

impl JobConfig {
    pub fn new(dp: u64, tp: u64, pp: u64, precision: PrecisionSetting, batch_size: u64, link_bandwidth: f64) -> Self {
        Self {
            dp_degree: dp,
            tp_degree: tp,
            pp_degree: pp,
            precision,
            batch_size,
            link_bandwidth,
            micro_batches: 1,
        }
    }

    pub fn gpu_count(&self) -> u64 {
        self.dp_degree * self.tp_degree * self.pp_degree
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dp_degree", self.dp_degree),
            ("tp_degree", self.tp_degree),
            ("pp_degree", self.pp_degree),
            ("batch_size", self.batch_size),
            ("micro_batches", self.micro_batches),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.link_bandwidth.is_finite() && self.link_bandwidth > 0.0) {
            return Err(Error::Config(format!(
                "link_bandwidth must be a positive finite number of bytes/s, got {}",
                self.link_bandwidth
            )));
        }
        Ok(())
    }

    /// Per-GPU batch under data parallelism.
    pub fn per_gpu_batch(&self) -> Result<u64> {
        if self.batch_size % self.dp_degree != 0 {
            return Err(Error::IndivisibleBatch {
                batch: self.batch_size,
                dp: self.dp_degree,
            });
        }
        Ok(self.batch_size / self.dp_degree)
    }

    pub fn label(&self) -> String {
        format!("({},{},{}) {}", self.dp_degree, self.tp_degree, self.pp_degree, self.precision)
    }
}

pub fn parse_config(text: &str, origin: &str) -> Result<JobConfig> {
    let cfg: JobConfig = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a JSON array of job configs.
pub fn parse_configs(text: &str, origin: &str) -> Result<Vec<JobConfig>> {
    let cfgs: Vec<JobConfig> = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
    for c in &cfgs {
        c.validate()?;
    }
    Ok(cfgs)
}

pub fn config_to_json(config: &JobConfig) -> String {
    let mut s = serde_json::to_string_pretty(config).expect("config serialization is infallible");
    s.push('\n');
    s
}

pub fn load_config(path: impl AsRef<Path>) -> Result<JobConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

pub fn load_configs(path: impl AsRef<Path>) -> Result<Vec<JobConfig>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_configs(&text, &path.display().to_string())
}

pub fn save_config(config: &JobConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, config_to_json(config)).map_err(|e| Error::io(path, e))
}

/// One GPU's share of the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub dp_rank: u64,
    pub tp_rank: u64,
    pub pp_stage: u64,
    /// Range of original layer indices held by this stage.
    pub layer_range: Range<usize>,
    pub per_gpu_batch: u64,
    pub layers: Vec<Vec<OperatorNode>>,
    pub sliced_weight_names: BTreeSet<String>,
}

impl Subgraph {
    pub fn operators(&self) -> impl Iterator<Item = &OperatorNode> {
        self.layers.iter().flatten()
    }

    pub fn operator_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Equality of everything but the rank coordinates.
    pub fn same_structure(&self, other: &Subgraph) -> bool {
        self.pp_stage == other.pp_stage
            && self.layer_range == other.layer_range
            && self.per_gpu_batch == other.per_gpu_batch
            && self.layers == other.layers
            && self.sliced_weight_names == other.sliced_weight_names
    }
}

/// Layer counts per pipeline stage.
pub fn stage_sizes(layer_count: usize, pp_degree: u64) -> Result<Vec<usize>> {
    if pp_degree == 0 {
        return Err(Error::Degree("pp_degree must be >= 1".into()));
    }
    if pp_degree > layer_count as u64 {
        return Err(Error::Degree(format!(
            "pp_degree {pp_degree} exceeds layer count {layer_count}"
        )));
    }
    let p = pp_degree as usize;
    let base = layer_count / p;
    let rem = layer_count % p;
    Ok((0..p).map(|s| base + usize::from(s < rem)).collect())
}

/// Contiguous range of layer indices owned by `stage`.
pub fn stage_layer_range(layer_count: usize, stage: u64, pp_degree: u64) -> Result<Range<usize>> {
    let sizes = stage_sizes(layer_count, pp_degree)?;
    let s = usize::try_from(stage)
        .ok()
        .filter(|&s| s < sizes.len())
        .ok_or_else(|| Error::Degree(format!("stage {stage} out of range for pp_degree {pp_degree}")))?;
    let start: usize = sizes[..s].iter().sum();
    Ok(start..start + sizes[s])
}

/// Layers assigned to pipeline stage `stage`.
pub fn assign_layers<'g>(graph: &'g ComputationGraph, stage: u64, config: &JobConfig) -> Result<&'g [Vec<OperatorNode>]> {
    let range = stage_layer_range(graph.layer_count(), stage, config.pp_degree)?;
    Ok(&graph.layers[range])
}

pub fn slice_needed(_op: &OperatorNode, weight: &WeightSpec, config: &JobConfig) -> bool {
    config.tp_degree > 1 && weight.slice_dim.is_some() && weight.trainable
}

/// Shard of `weight` held by TP rank `tp_rank`. Every rank's shard has the
/// same shape; the slice dimension is divided by `tp_degree`.
pub fn slice_weight(weight: &WeightSpec, tp_rank: u64, tp_degree: u64) -> Result<WeightSpec> {
    if tp_degree == 0 || tp_rank >= tp_degree {
        return Err(Error::Degree(format!("tp rank {tp_rank} invalid for tp_degree {tp_degree}")));
    }
    let dim = weight
        .slice_dim
        .ok_or_else(|| Error::Internal(format!("slice_weight on {} without slice_dim", weight.name)))?;
    let size = weight.shape[dim];
    if size % tp_degree != 0 {
        return Err(Error::IndivisibleDim {
            weight: weight.name.clone(),
            dim,
            size,
            tp: tp_degree,
        });
    }
    let mut out = weight.clone();
    out.shape[dim] = size / tp_degree;
    Ok(out)
}

fn build_subgraph(
    stage_layers: &[Vec<OperatorNode>],
    layer_range: Range<usize>,
    per_gpu_batch: u64,
    (dp_rank, tp_rank, pp_stage): (u64, u64, u64),
    config: &JobConfig,
) -> Result<Subgraph> {
    let mut layers = stage_layers.to_vec();
    let mut sliced = BTreeSet::new();
    for node in layers.iter_mut().flatten() {
        for input in &mut node.inputs {
            input.shape[0] = per_gpu_batch;
        }
        for i in 0..node.weights.len() {
            if slice_needed(node, &node.weights[i], config) {
                let w = slice_weight(&node.weights[i], tp_rank, config.tp_degree)?;
                sliced.insert(w.name.clone());
                node.weights[i] = w;
            }
        }
    }
    Ok(Subgraph {
        dp_rank,
        tp_rank,
        pp_stage,
        layer_range,
        per_gpu_batch,
        layers,
        sliced_weight_names: sliced,
    })
}

/// Partitions `graph` into `d × t × p` subgraphs, ordered by pipeline stage,
/// then DP rank, then TP rank.
pub fn partition(graph: &ComputationGraph, config: &JobConfig) -> Result<Vec<Subgraph>> {
    config.validate()?;
    let per_gpu_batch = config.per_gpu_batch()?;
    let mut out = Vec::with_capacity(config.gpu_count() as usize);
    for s in 0..config.pp_degree {
        let range = stage_layer_range(graph.layer_count(), s, config.pp_degree)?;
        let stage_layers = &graph.layers[range.clone()];
        for d in 0..config.dp_degree {
            for t in 0..config.tp_degree {
                out.push(build_subgraph(stage_layers, range.clone(), per_gpu_batch, (d, t, s), config)?);
            }
        }
    }
    Ok(out)
}
