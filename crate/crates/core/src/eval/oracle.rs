//! Brute-force reference predictor.
//!
//! Materializes all `d × t × p` GPU subgraphs as flat operator lists, walks
//! every operator of every one of them, and recounts every weight element.
//! Nothing here calls into the partitioner or the predictor; the only shared
//! pieces are the data types and the latency database itself.

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, OpKind, Precision};
use crate::latency_db::{FallbackPolicy, LatencyDb, LatencyKey, Provenance};
use crate::partition::JobConfig;
use crate::precision::{CastRuleTable, PrecisionSetting};
use crate::predictor::Prediction;

struct FlatWeight {
    shape: Vec<u64>,
    trainable: bool,
    sliced: bool,
}

struct FlatOp {
    id: String,
    kind: OpKind,
    precision: Precision,
    inputs: Vec<Vec<u64>>,
    weights: Vec<FlatWeight>,
}

struct Gpu {
    dp: u64,
    tp: u64,
    pp: u64,
    ops: Vec<FlatOp>,
}

fn cast(rules: &CastRuleTable, setting: PrecisionSetting, kind: OpKind) -> Precision {
    match setting {
        PrecisionSetting::FP32 => Precision::FP32,
        PrecisionSetting::FP16 => Precision::FP16,
        PrecisionSetting::MIXED if rules.low().contains(&kind) => Precision::FP16,
        PrecisionSetting::MIXED if rules.high().contains(&kind) => Precision::FP32,
        PrecisionSetting::MIXED => rules.default_rule(),
    }
}

fn count(shape: &[u64]) -> u64 {
    let mut n = 1;
    for d in shape {
        n *= d;
    }
    n
}

/// Pipeline stage of every layer, dealing layers out round-robin to count
/// stage sizes and then laying the stages out contiguously.
fn stage_of_layers(layers: usize, p: u64) -> Vec<u64> {
    let mut sizes = vec![0usize; p as usize];
    for i in 0..layers {
        sizes[i % p as usize] += 1;
    }
    let mut stage = Vec::with_capacity(layers);
    for (s, n) in sizes.iter().enumerate() {
        stage.extend(std::iter::repeat(s as u64).take(*n));
    }
    stage
}

fn materialize(graph: &ComputationGraph, config: &JobConfig, rules: &CastRuleTable) -> Result<Vec<Gpu>> {
    let (d, t, p) = (config.dp_degree, config.tp_degree, config.pp_degree);
    if config.batch_size % d != 0 {
        return Err(Error::IndivisibleBatch {
            batch: config.batch_size,
            dp: d,
        });
    }
    if graph.layers.len() < p as usize {
        return Err(Error::Degree(format!("pp_degree {p} exceeds layer count {}", graph.layers.len())));
    }
    let batch = config.batch_size / d;
    let stage_of = stage_of_layers(graph.layers.len(), p);
    let mut gpus = Vec::new();
    for pp in 0..p {
        for dp in 0..d {
            for tp in 0..t {
                let mut ops = Vec::new();
                for (li, layer) in graph.layers.iter().enumerate() {
                    if stage_of[li] != pp {
                        continue;
                    }
                    for node in layer {
                        let inputs = node
                            .inputs
                            .iter()
                            .map(|i| {
                                let mut s = i.shape.clone();
                                s[0] = batch;
                                s
                            })
                            .collect();
                        let mut weights = Vec::new();
                        for w in &node.weights {
                            let mut shape = w.shape.clone();
                            let sliced = t > 1 && w.trainable && w.slice_dim.is_some();
                            if sliced {
                                let dim = w.slice_dim.unwrap();
                                if shape[dim] % t != 0 {
                                    return Err(Error::IndivisibleDim {
                                        weight: w.name.clone(),
                                        dim,
                                        size: shape[dim],
                                        tp: t,
                                    });
                                }
                                shape[dim] /= t;
                            }
                            weights.push(FlatWeight {
                                shape,
                                trainable: w.trainable,
                                sliced,
                            });
                        }
                        ops.push(FlatOp {
                            id: node.id.clone(),
                            kind: node.kind,
                            precision: cast(rules, config.precision, node.kind),
                            inputs,
                            weights,
                        });
                    }
                }
                gpus.push(Gpu { dp, tp, pp, ops });
            }
        }
    }
    Ok(gpus)
}

/// Reference prediction; must agree exactly with [`crate::predictor::predict`].
pub fn oracle_predict(
    graph: &ComputationGraph,
    config: &JobConfig,
    db: &LatencyDb,
    rules: &CastRuleTable,
    policy: FallbackPolicy,
) -> Result<Prediction> {
    config.validate()?;
    let gpus = materialize(graph, config, rules)?;

    // Per-GPU latency sums.
    let mut gpu_us = Vec::with_capacity(gpus.len());
    for gpu in &gpus {
        let mut us = 0.0;
        let mut interpolated = 0u64;
        for op in &gpu.ops {
            let mut shapes = op.inputs.clone();
            shapes.extend(op.weights.iter().map(|w| w.shape.clone()));
            let key = LatencyKey::new(op.kind, shapes, op.precision);
            let (rec, prov) = db.lookup(&key, policy).map_err(|e| Error::Operator {
                op: op.id.clone(),
                dp_rank: gpu.dp,
                tp_rank: gpu.tp,
                pp_stage: gpu.pp,
                source: Box::new(e),
            })?;
            us += rec.fwd_us + rec.bwd_us;
            if prov == Provenance::Interpolated {
                interpolated += 1;
            }
        }
        gpu_us.push((us, interpolated));
    }

    let mut per_stage = Vec::new();
    let mut interpolated_lookup_count = 0;
    for s in 0..config.pp_degree {
        let mut stage: Option<(f64, u64)> = None;
        for (gpu, &(us, n)) in gpus.iter().zip(&gpu_us) {
            if gpu.pp != s {
                continue;
            }
            match stage {
                None => stage = Some((us, n)),
                Some((u0, n0)) if u0.to_bits() == us.to_bits() && n0 == n => {}
                Some(_) => return Err(Error::Internal(format!("stage {s}: replicas disagree"))),
            }
        }
        let (us, n) = stage.ok_or_else(|| Error::Internal(format!("stage {s} has no GPUs")))?;
        per_stage.push(us / 1000.0);
        interpolated_lookup_count += n;
    }
    let mut comp_ms = 0.0;
    for s in &per_stage {
        comp_ms += s;
    }

    let mut v_dp_bytes = 0u64;
    if config.dp_degree > 1 {
        for gpu in gpus.iter().filter(|g| g.dp == 0) {
            for op in &gpu.ops {
                for w in op.weights.iter().filter(|w| w.trainable) {
                    v_dp_bytes += count(&w.shape) * op.precision.bytes();
                }
            }
        }
    }
    let mut v_tp_bytes = 0u64;
    if config.tp_degree > 1 {
        for gpu in gpus.iter().filter(|g| g.dp == 0 && g.tp == 0) {
            for op in &gpu.ops {
                for w in op.weights.iter().filter(|w| w.sliced) {
                    v_tp_bytes += count(&w.shape) * op.precision.bytes();
                }
            }
        }
    }

    let bw = config.link_bandwidth;
    let dp_ms = v_dp_bytes as f64 * 1e3 / bw;
    let tp_ms = v_tp_bytes as f64 * 1e3 / bw;
    let pp_ms = comp_ms * (config.pp_degree - 1) as f64;
    Ok(Prediction {
        total_ms: comp_ms + dp_ms + tp_ms + pp_ms,
        comp_ms,
        dp_ms,
        tp_ms,
        pp_ms,
        v_dp_bytes,
        v_tp_bytes,
        per_stage_comp_ms: per_stage,
        interpolated_lookup_count,
    })
}
