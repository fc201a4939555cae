//! Iteration-time prediction.
//!
//! `T = T_comp + T_dp + T_tp + T_pp`, where `T_comp` is the summed forward and
//! backward operator latency of one traversal of every pipeline stage,
//! `T_dp = V_dp / B_link`, `T_tp = V_tp / B_link`, and the pipeline bubble
//! `T_pp = T_comp × (p − 1)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Phase, Result};
use crate::graph::ComputationGraph;
use crate::latency_db::{FallbackPolicy, LatencyDb, LatencyKey, Provenance};
use crate::partition::{partition, JobConfig, Subgraph};
use crate::precision::{assign_precision, CastRuleTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub total_ms: f64,
    pub comp_ms: f64,
    pub dp_ms: f64,
    pub tp_ms: f64,
    pub pp_ms: f64,
    pub v_dp_bytes: u64,
    pub v_tp_bytes: u64,
    pub per_stage_comp_ms: Vec<f64>,
    pub interpolated_lookup_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompTime {
    pub comp_ms: f64,
    pub per_stage_comp_ms: Vec<f64>,
    pub interpolated_lookups: u64,
}

/// Summed forward+backward latency of one subgraph, in microseconds, and the
/// number of interpolated lookups it needed.
fn subgraph_us(sg: &Subgraph, db: &LatencyDb, policy: FallbackPolicy) -> Result<(f64, u64)> {
    let mut total = 0.0;
    let mut interpolated = 0;
    for op in sg.operators() {
        let annotate = |source: Error| Error::Operator {
            op: op.id.clone(),
            dp_rank: sg.dp_rank,
            tp_rank: sg.tp_rank,
            pp_stage: sg.pp_stage,
            source: Box::new(source),
        };
        let precision = op
            .precision
            .ok_or_else(|| annotate(Error::Internal("precision not assigned".into())))?;
        let key = LatencyKey::new(op.kind, op.shapes(), precision);
        let (rec, prov) = db.lookup(&key, policy).map_err(annotate)?;
        total += rec.fwd_us + rec.bwd_us;
        if prov == Provenance::Interpolated {
            interpolated += 1;
        }
    }
    Ok((total, interpolated))
}

/// Computation time summed over pipeline stages.
///
/// All DP/TP replicas of a stage must be structurally identical; the stage
/// time is computed once on the first replica.
pub fn comp_time(subgraphs: &[Subgraph], db: &LatencyDb, config: &JobConfig, policy: FallbackPolicy) -> Result<CompTime> {
    let mut stages: BTreeMap<u64, Vec<&Subgraph>> = BTreeMap::new();
    for sg in subgraphs {
        stages.entry(sg.pp_stage).or_default().push(sg);
    }
    if stages.len() as u64 != config.pp_degree || subgraphs.len() as u64 != config.gpu_count() {
        return Err(Error::Internal(format!(
            "expected {} subgraphs over {} stages, got {} over {}",
            config.gpu_count(),
            config.pp_degree,
            subgraphs.len(),
            stages.len()
        )));
    }
    let mut per_stage = Vec::with_capacity(stages.len());
    let mut interpolated = 0;
    for (stage, replicas) in &stages {
        let head = replicas[0];
        if let Some(odd) = replicas.iter().find(|r| !r.same_structure(head)) {
            return Err(Error::Internal(format!(
                "stage {stage}: replica (dp={}, tp={}) differs from (dp={}, tp={})",
                odd.dp_rank, odd.tp_rank, head.dp_rank, head.tp_rank
            )));
        }
        let (us, n) = subgraph_us(head, db, policy)?;
        per_stage.push(us / 1000.0);
        interpolated += n;
    }
    let comp_ms = per_stage.iter().fold(0.0, |acc, s| acc + s);
    Ok(CompTime {
        comp_ms,
        per_stage_comp_ms: per_stage,
        interpolated_lookups: interpolated,
    })
}

/// Gradient bytes synchronized across DP replicas: every trainable weight of
/// DP replica 0 (all stages, all TP ranks) at its assigned precision.
pub fn dp_volume(subgraphs: &[Subgraph], config: &JobConfig) -> Result<u64> {
    if config.dp_degree == 1 {
        return Ok(0);
    }
    let mut total = 0;
    for sg in subgraphs.iter().filter(|s| s.dp_rank == 0) {
        for w in sg.operators().flat_map(|op| &op.weights) {
            total += w
                .gradient_bytes()
                .ok_or_else(|| Error::Internal(format!("weight {} has no precision", w.name)))?;
        }
    }
    Ok(total)
}

/// Partial-gradient bytes of the TP-sliced weights held by one rank
/// (DP replica 0, TP rank 0), across all stages.
pub fn tp_volume(subgraphs: &[Subgraph], config: &JobConfig) -> Result<u64> {
    if config.tp_degree == 1 {
        return Ok(0);
    }
    let mut total = 0;
    for sg in subgraphs.iter().filter(|s| s.dp_rank == 0 && s.tp_rank == 0) {
        for w in sg.operators().flat_map(|op| &op.weights) {
            if sg.sliced_weight_names.contains(&w.name) {
                total += w
                    .gradient_bytes()
                    .ok_or_else(|| Error::Internal(format!("weight {} has no precision", w.name)))?;
            }
        }
    }
    Ok(total)
}

/// Volume to milliseconds at `bandwidth` bytes/s.
fn transfer_ms(bytes: u64, bandwidth: f64) -> f64 {
    bytes as f64 * 1e3 / bandwidth
}

/// `(T_dp, T_tp)` in milliseconds.
pub fn comm_times(v_dp: u64, v_tp: u64, config: &JobConfig) -> Result<(f64, f64)> {
    let bw = config.link_bandwidth;
    if !(bw.is_finite() && bw > 0.0) {
        return Err(Error::Config(format!("link_bandwidth must be positive, got {bw}")));
    }
    Ok((transfer_ms(v_dp, bw), transfer_ms(v_tp, bw)))
}

/// Pipeline bubble.
pub fn pp_time(comp_ms: f64, config: &JobConfig) -> f64 {
    comp_ms * (config.pp_degree - 1) as f64
}

pub fn predict(
    graph: &ComputationGraph,
    config: &JobConfig,
    db: &LatencyDb,
    rules: &CastRuleTable,
    policy: FallbackPolicy,
) -> Result<Prediction> {
    config.validate().map_err(|e| e.in_phase(Phase::Partition))?;
    let assigned = assign_precision(graph, config.precision, rules);
    let subgraphs = partition(&assigned, config).map_err(|e| e.in_phase(Phase::Partition))?;
    let comp = comp_time(&subgraphs, db, config, policy).map_err(|e| e.in_phase(Phase::Compute))?;
    let comm = |e: Error| e.in_phase(Phase::Communication);
    let v_dp = dp_volume(&subgraphs, config).map_err(comm)?;
    let v_tp = tp_volume(&subgraphs, config).map_err(comm)?;
    let (dp_ms, tp_ms) = comm_times(v_dp, v_tp, config).map_err(comm)?;
    let pp_ms = pp_time(comp.comp_ms, config);
    Ok(Prediction {
        total_ms: comp.comp_ms + dp_ms + tp_ms + pp_ms,
        comp_ms: comp.comp_ms,
        dp_ms,
        tp_ms,
        pp_ms,
        v_dp_bytes: v_dp,
        v_tp_bytes: v_tp,
        per_stage_comp_ms: comp.per_stage_comp_ms,
        interpolated_lookup_count: comp.interpolated_lookups,
    })
}
