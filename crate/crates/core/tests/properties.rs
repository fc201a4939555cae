mod common;

use std::collections::BTreeMap;

use common::{extend_db, random_config, random_db, random_graph};
use precast::eval::{mape, oracle_predict, sweep};
use precast::graph::{OpKind, Precision};
use precast::latency_db::{DbMetadata, FallbackPolicy, LatencyDb, LatencyKey, LatencyRecord, Provenance};
use precast::partition::partition;
use precast::precision::{assign_precision, CastRuleTable, PrecisionSetting};
use precast::predictor::{predict, tp_volume};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setting() -> impl Strategy<Value = PrecisionSetting> {
    prop_oneof![
        Just(PrecisionSetting::FP32),
        Just(PrecisionSetting::FP16),
        Just(PrecisionSetting::MIXED)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn precision_assignment_properties(seed in any::<u64>(), s in setting()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 1, 50, 8);
        let rules = CastRuleTable::builtin();
        let once = assign_precision(&g, s, &rules);
        prop_assert_eq!(&assign_precision(&once, s, &rules), &once);
        prop_assert_eq!(&assign_precision(&g, s, &rules), &once);
        for (a, b) in g.operators().zip(once.operators()) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.layer_index, b.layer_index);
            prop_assert_eq!(a.shapes(), b.shapes());
            let p = b.precision.unwrap();
            match s {
                PrecisionSetting::FP32 => prop_assert_eq!(p, Precision::FP32),
                PrecisionSetting::FP16 => prop_assert_eq!(p, Precision::FP16),
                PrecisionSetting::MIXED => prop_assert_eq!(p, rules.classify(b.kind)),
            }
        }
    }

    #[test]
    fn partition_is_pure_and_conserves_mass(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = random_config(&mut rng, 8, PrecisionSetting::FP32);
        let g = random_graph(&mut rng, cfg.pp_degree as usize, 50, 8);
        let before = g.clone();
        let parts = partition(&g, &cfg).unwrap();
        prop_assert_eq!(&g, &before);
        prop_assert_eq!(parts.len() as u64, cfg.gpu_count());
        for sg in &parts {
            prop_assert!(sg.dp_rank < cfg.dp_degree && sg.tp_rank < cfg.tp_degree && sg.pp_stage < cfg.pp_degree);
            let names: Vec<&String> = sg.operators().flat_map(|o| &o.weights).map(|w| &w.name).collect();
            prop_assert!(sg.sliced_weight_names.iter().all(|n| names.contains(&n)));
        }
        // Σ over TP ranks of a sliced weight's shard = the whole weight.
        let mut sums: BTreeMap<String, u64> = BTreeMap::new();
        for sg in parts.iter().filter(|s| s.dp_rank == 0) {
            for w in sg.operators().flat_map(|o| &o.weights) {
                if sg.sliced_weight_names.contains(&w.name) {
                    *sums.entry(w.name.clone()).or_default() += w.element_count();
                }
            }
        }
        for w in g.operators().flat_map(|o| &o.weights) {
            if let Some(total) = sums.get(&w.name) {
                prop_assert_eq!(*total, w.element_count());
            }
        }
    }

    #[test]
    fn tp_volume_is_conserved_across_ranks(seed in any::<u64>(), s in setting()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = random_config(&mut rng, 8, s);
        cfg.tp_degree = 4;
        cfg.dp_degree = 1;
        cfg.pp_degree = 1;
        let g = assign_precision(&random_graph(&mut rng, 1, 50, 8), s, &CastRuleTable::builtin());
        let parts = partition(&g, &cfg).unwrap();
        let one_rank = tp_volume(&parts, &cfg).unwrap();
        let mut full = 0;
        for op in g.operators() {
            for w in op.weights.iter().filter(|w| w.trainable && w.slice_dim.is_some()) {
                full += w.element_count() * w.elem_precision.unwrap().bytes();
            }
        }
        prop_assert_eq!(one_rank * cfg.tp_degree, full);
    }

    #[test]
    fn predictions_match_oracle_and_obey_model(seed in any::<u64>(), s in setting()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = random_config(&mut rng, 8, s);
        let g = random_graph(&mut rng, cfg.pp_degree as usize, 50, 8);
        let db = random_db(&mut rng, &g, &cfg, 0.25);
        let rules = CastRuleTable::builtin();
        let p = predict(&g, &cfg, &db, &rules, FallbackPolicy::Interpolate).unwrap();
        let o = oracle_predict(&g, &cfg, &db, &rules, FallbackPolicy::Interpolate).unwrap();
        prop_assert_eq!(&p, &o);
        prop_assert_eq!(p.total_ms, p.comp_ms + p.dp_ms + p.tp_ms + p.pp_ms);

        let mut fast = cfg.clone();
        fast.link_bandwidth *= 2.0;
        let q = predict(&g, &fast, &db, &rules, FallbackPolicy::Interpolate).unwrap();
        prop_assert_eq!(q.dp_ms + q.tp_ms, (p.dp_ms + p.tp_ms) / 2.0);
    }

    #[test]
    fn fp16_volume_is_half_fp32(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = random_config(&mut rng, 8, PrecisionSetting::FP32);
        cfg.dp_degree = 2;
        let mut g = random_graph(&mut rng, cfg.pp_degree as usize, 50, 8);
        for w in g.layers.iter_mut().flatten().flat_map(|o| o.weights.iter_mut()) {
            w.trainable = true;
        }
        let rules = CastRuleTable::builtin();
        let mut db = random_db(&mut rng, &g, &cfg, 0.0);
        let mut cfg16 = cfg.clone();
        cfg16.precision = PrecisionSetting::FP16;
        extend_db(&mut rng, &mut db, &g, &cfg16, 0.0);
        let a = predict(&g, &cfg, &db, &rules, FallbackPolicy::Interpolate).unwrap();
        let b = predict(&g, &cfg16, &db, &rules, FallbackPolicy::Interpolate).unwrap();
        prop_assert_eq!(a.v_dp_bytes, 2 * b.v_dp_bytes);
    }

    #[test]
    fn interpolation_exact_at_knots_and_monotone(
        mut knots in prop::collection::btree_map(1u64..64, 0.0f64..1e4, 2..8),
    ) {
        // Make fwd non-decreasing in batch so the interpolant should be too.
        let mut acc = 0.0;
        for v in knots.values_mut() {
            acc += *v;
            *v = acc;
        }
        let key = |b: u64| LatencyKey::new(OpKind::Matmul, vec![vec![b, 16], vec![16, 16]], Precision::FP16);
        let mut db = LatencyDb::new(DbMetadata::default());
        for (&b, &f) in &knots {
            db.insert(key(b), LatencyRecord::new(f, f)).unwrap();
        }
        for (&b, &f) in &knots {
            let (r, prov) = db.lookup(&key(b), FallbackPolicy::Interpolate).unwrap();
            prop_assert_eq!((r.fwd_us, prov), (f, Provenance::Exact));
        }
        let pts: Vec<(u64, f64)> = knots.into_iter().collect();
        for w in pts.windows(2) {
            let (b0, f0) = w[0];
            let (b1, f1) = w[1];
            let mut prev = f0;
            for b in b0 + 1..b1 {
                let (r, prov) = db.lookup(&key(b), FallbackPolicy::Interpolate).unwrap();
                prop_assert_eq!(prov, Provenance::Interpolated);
                prop_assert!(r.fwd_us >= prev - 1e-9 && r.fwd_us <= f1 + 1e-9);
                prev = r.fwd_us;
            }
        }
    }

    #[test]
    fn mape_is_order_invariant(rows in prop::collection::vec((0.0f64..100.0, 0.1f64..100.0), 1..20)) {
        let a = mape(&rows).unwrap();
        let mut rev = rows.clone();
        rev.reverse();
        let b = mape(&rev).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        let perfect: Vec<_> = rows.iter().map(|&(_, m)| (m, m)).collect();
        prop_assert_eq!(mape(&perfect).unwrap(), 0.0);
    }
}

#[test]
fn sweep_equals_mapping_predict() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = random_graph(&mut rng, 8, 40, 8);
    let rules = CastRuleTable::builtin();
    let configs: Vec<_> = (0..24)
        .map(|i| random_config(&mut rng, 8, PrecisionSetting::ALL[i % 3]))
        .collect();
    let mut db = LatencyDb::new(DbMetadata::default());
    for c in &configs {
        extend_db(&mut rng, &mut db, &g, c, 0.0);
    }
    let rows = sweep(&g, &configs, &db, &rules, FallbackPolicy::Interpolate).unwrap();
    assert_eq!(rows.len(), configs.len());
    for (row, cfg) in rows.iter().zip(&configs) {
        assert_eq!(&row.config, cfg);
        let single = predict(&g, cfg, &db, &rules, FallbackPolicy::Interpolate).ok();
        assert_eq!(row.prediction, single);
    }
}
