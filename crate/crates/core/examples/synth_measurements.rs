//! Writes the sweep predictions and synthetic measurements for the 32-layer
//! transformer fixture: `cargo run -p precast --example synth_measurements`.

use std::path::PathBuf;

use precast::eval::{measurements_to_json, sweep, sweep_to_json, synthesize_measurements};
use precast::graph::load_graph;
use precast::latency_db::{load_db, FallbackPolicy};
use precast::partition::load_configs;
use precast::precision::CastRuleTable;

const HALF_WIDTH: f64 = 0.05;
const SEED: u64 = 7;

fn main() -> precast::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let graph = load_graph(root.join("graphs/transformer32.json"))?;
    let configs = load_configs(root.join("configs/sweep8.json"))?;
    let db = load_db(&[root.join("db/transformer32_synthetic.jsonl")])?;
    let rows = sweep(&graph, &configs, &db, &CastRuleTable::builtin(), FallbackPolicy::Strict)?;

    let measured: Vec<_> = synthesize_measurements(&rows, HALF_WIDTH, SEED)
        .into_iter()
        .map(|(m, _)| m)
        .collect();

    for (dir, name, text) in [
        ("predictions", "transformer32_sweep8.json", sweep_to_json(&rows)),
        ("measurements", "transformer32_synthetic.json", measurements_to_json(&measured)),
    ] {
        let dir = root.join(dir);
        std::fs::create_dir_all(&dir).map_err(|e| precast::Error::Internal(e.to_string()))?;
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| precast::Error::Internal(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
