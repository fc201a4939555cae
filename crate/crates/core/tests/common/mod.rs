#![allow(dead_code)]

use std::path::PathBuf;

use precast::graph::{ComputationGraph, OpKind, OperatorNode, Precision, TensorSpec, WeightSpec};
use precast::latency_db::{DbMetadata, LatencyDb, LatencyKey, LatencyRecord};
use precast::partition::JobConfig;
use precast::precision::PrecisionSetting;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

/// Degree triples over {1,2,4,8}³ with product at most `max_gpus`.
pub fn pow2_triples(max_gpus: u64) -> Vec<(u64, u64, u64)> {
    let ds = [1u64, 2, 4, 8];
    let mut out = Vec::new();
    for &d in &ds {
        for &t in &ds {
            for &p in &ds {
                if d * t * p <= max_gpus {
                    out.push((d, t, p));
                }
            }
        }
    }
    out
}

const DIMS: [u64; 4] = [8, 16, 24, 32];

/// Random layer-structured graph with at most `max_ops` operators and at
/// least `min_layers` layers. Sliceable dims are multiples of 8.
pub fn random_graph<R: Rng>(rng: &mut R, min_layers: usize, max_ops: usize, global_batch: u64) -> ComputationGraph {
    let max_layers = max_ops.min(min_layers.max(1) + 6);
    let layers = rng.gen_range(min_layers.max(1)..=max_layers);
    let mut budget = max_ops - layers;
    let mut out = Vec::with_capacity(layers);
    let mut next_id = 0;
    for l in 0..layers {
        let extra = if budget == 0 { 0 } else { rng.gen_range(0..=budget.min(5)) };
        budget -= extra;
        let mut nodes = Vec::new();
        for _ in 0..=extra {
            let kind = *OpKind::ALL.choose(rng).unwrap();
            let n_inputs = rng.gen_range(1..=2);
            let inputs = (0..n_inputs)
                .map(|_| {
                    let rank = rng.gen_range(1..=3);
                    let mut shape = vec![global_batch];
                    shape.extend((1..rank).map(|_| *DIMS.choose(rng).unwrap()));
                    TensorSpec::new(shape)
                })
                .collect();
            let n_weights = rng.gen_range(0..=2);
            let weights = (0..n_weights)
                .map(|wi| {
                    let rank = rng.gen_range(1..=2);
                    let shape: Vec<u64> = (0..rank).map(|_| *DIMS.choose(rng).unwrap()).collect();
                    let slice_dim = if rng.gen_bool(0.6) { Some(rng.gen_range(0..rank)) } else { None };
                    WeightSpec::new(format!("w{next_id}_{wi}"), shape, slice_dim, rng.gen_bool(0.8))
                })
                .collect();
            nodes.push(OperatorNode::new(format!("n{next_id}"), kind, l, inputs, weights));
            next_id += 1;
        }
        out.push(nodes);
    }
    ComputationGraph::new("random", global_batch, out).expect("generator emits valid graphs")
}

/// Per-GPU latency-key shapes of every operator under `(per_gpu_batch, tp)`.
fn gpu_shapes(graph: &ComputationGraph, per_gpu_batch: u64, tp: u64) -> Vec<(OpKind, Vec<Vec<u64>>)> {
    graph
        .operators()
        .map(|op| {
            let mut shapes: Vec<Vec<u64>> = op
                .inputs
                .iter()
                .map(|i| {
                    let mut s = i.shape.clone();
                    s[0] = per_gpu_batch;
                    s
                })
                .collect();
            for w in &op.weights {
                let mut s = w.shape.clone();
                if tp > 1 && w.trainable {
                    if let Some(d) = w.slice_dim {
                        s[d] /= tp;
                    }
                }
                shapes.push(s);
            }
            (op.kind, shapes)
        })
        .collect()
}

/// Latency db covering `config` on `graph` at both precisions.
///
/// Each needed key is stored directly with probability `1 − drop`; dropped
/// keys are replaced by knots at 2× and 3× the leading dimension of every
/// shape so the interpolating lookup can reach them.
pub fn random_db<R: Rng>(rng: &mut R, graph: &ComputationGraph, config: &JobConfig, drop: f64) -> LatencyDb {
    let mut db = LatencyDb::new(DbMetadata::default());
    extend_db(rng, &mut db, graph, config, drop);
    db
}

/// Adds the keys `config` needs to `db`, leaving existing records alone.
pub fn extend_db<R: Rng>(rng: &mut R, db: &mut LatencyDb, graph: &ComputationGraph, config: &JobConfig, drop: f64) {
    let per_gpu = config.batch_size / config.dp_degree;
    let put = |db: &mut LatencyDb, key: LatencyKey, rng: &mut R| {
        if db.get(&key).is_none() {
            let fwd = (rng.gen_range(1.0..500.0f64) * 1000.0).round() / 1000.0;
            let bwd = (rng.gen_range(1.0..900.0f64) * 1000.0).round() / 1000.0;
            db.insert(key, LatencyRecord::new(fwd, bwd)).unwrap();
        }
    };
    for (kind, shapes) in gpu_shapes(graph, per_gpu, config.tp_degree) {
        for precision in [Precision::FP32, Precision::FP16] {
            let key = LatencyKey::new(kind, shapes.clone(), precision);
            if rng.gen_bool(drop) {
                for k in [2, 3] {
                    let scaled = shapes
                        .iter()
                        .map(|s| {
                            let mut s = s.clone();
                            s[0] *= k;
                            s
                        })
                        .collect();
                    put(db, LatencyKey::new(kind, scaled, precision), rng);
                }
            } else {
                put(db, key, rng);
            }
        }
    }
}

/// Random config with `d·t·p ≤ 8` over powers of two, feasible for `layers`.
pub fn random_config<R: Rng>(rng: &mut R, layers: usize, precision: PrecisionSetting) -> JobConfig {
    let triples: Vec<_> = pow2_triples(8).into_iter().filter(|&(_, _, p)| p as usize <= layers).collect();
    let (d, t, p) = *triples.choose(rng).unwrap();
    let batch = 8 * rng.gen_range(1..=3);
    let bw = [1e9, 25e9, 4.5e11][rng.gen_range(0..3)];
    JobConfig::new(d, t, p, precision, batch, bw)
}
