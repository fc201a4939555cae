mod common;

use common::{fixture, random_graph};
use precast::graph::{graph_to_json, load_graph, parse_graph, save_graph};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn transformer_fixture_counts_match_raw_json_tally() {
    let path = fixture("graphs/transformer32.json");
    let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let raw_layers = raw["layers"].as_array().unwrap();
    let raw_nodes: usize = raw_layers.iter().map(|l| l.as_array().unwrap().len()).sum();
    let per_layer = raw_layers[0].as_array().unwrap().len();

    let g = load_graph(&path).unwrap();
    assert_eq!(g.layer_count(), 32);
    assert_eq!(raw_layers.len(), 32);
    assert_eq!(g.operator_count(), raw_nodes);
    assert_eq!(g.operator_count(), 32 * per_layer);
}

#[test]
fn layer_membership_is_a_partition_of_ids() {
    let g = load_graph(fixture("graphs/transformer32.json")).unwrap();
    let mut all: Vec<_> = g.operators().map(|o| o.id.clone()).collect();
    let by_layer: usize = g.layers.iter().map(|l| l.len()).sum();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), by_layer);
    for (i, layer) in g.layers.iter().enumerate() {
        assert!(layer.iter().all(|n| n.layer_index == i));
    }
}

#[test]
fn random_fifty_node_graph_serializes_byte_stably() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let g = random_graph(&mut rng, 5, 50, 16);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    save_graph(&g, &a).unwrap();
    save_graph(&g, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let back = load_graph(&a).unwrap();
    assert_eq!(back, g);
}

proptest! {
    #[test]
    fn round_trip_is_structural_identity(seed in any::<u64>(), min_layers in 1usize..6, batch in 1u64..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, min_layers, 50, batch * 8);
        let text = graph_to_json(&g);
        let back = parse_graph(&text, "prop").unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(graph_to_json(&back), text);
    }

    #[test]
    fn element_count_is_multiplicative(a in prop::collection::vec(1u64..64, 1..4), b in prop::collection::vec(1u64..64, 1..4)) {
        use precast::graph::element_count;
        let joined: Vec<u64> = a.iter().chain(&b).copied().collect();
        prop_assert_eq!(element_count(&joined), element_count(&a) * element_count(&b));
        prop_assert!(element_count(&a) >= 1);
    }
}
