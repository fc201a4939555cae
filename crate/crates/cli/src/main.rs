use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use precast::eval::{evaluate, load_measurements, load_sweep, report_table, report_to_json, sweep_table, sweep_to_json};
use precast::graph::load_graph;
use precast::latency_db::load_db;
use precast::partition::{load_config, load_configs, stage_sizes};
use precast::precision::load_cast_rules_or_builtin;
use precast::{assign_precision, partition, predict, sweep, CastRuleTable, ComputationGraph, Error, FallbackPolicy, JobConfig, Prediction};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "precast", version, about = "Precision-aware iteration-time predictor for distributed training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fallback {
    Strict,
    Interpolate,
}

impl From<Fallback> for FallbackPolicy {
    fn from(f: Fallback) -> Self {
        match f {
            Fallback::Strict => FallbackPolicy::Strict,
            Fallback::Interpolate => FallbackPolicy::Interpolate,
        }
    }
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Computation graph JSON.
    #[arg(long)]
    graph: PathBuf,
    /// Latency database (JSONL); repeat to merge several.
    #[arg(long = "db", required = true)]
    dbs: Vec<PathBuf>,
    /// Cast rule table; the built-in table is used when unset.
    #[arg(long, env = "PRECAST_RULES")]
    rules: Option<PathBuf>,
    /// Fall back to the built-in cast rules if the rules file does not exist.
    #[arg(long)]
    builtin: bool,
    #[arg(long, value_enum, default_value = "strict")]
    fallback: Fallback,
}

#[derive(clap::Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Predict the iteration time of one job config.
    Predict {
        #[command(flatten)]
        model: ModelArgs,
        /// Job config JSON.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Predict every config in a JSON array; failures are reported per row.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        configs: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Compare sweep predictions against measurements.
    Mape {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Check a graph and, optionally, whether a config can partition it.
    Validate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Per-GPU summary of how a config partitions a graph.
    ShowPartition {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_internal() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> precast::Result<()> {
    match command {
        Command::Predict { model, config, output } => {
            let loaded = Loaded::new(&model)?;
            let cfg = load_config(&config)?;
            let prediction = predict(&loaded.graph, &cfg, &loaded.db, &loaded.rules, model.fallback.into())?;
            let report = PredictReport {
                model: &loaded.graph.model_name,
                config: &cfg,
                prediction: &prediction,
                graph_sha256: &loaded.graph_sha256,
                db_sha256: &loaded.db_sha256,
            };
            let text = match output.format {
                Format::Json => json(&report),
                Format::Table => prediction_table(&cfg, &prediction),
            };
            emit(&output, &text)
        }
        Command::Sweep { model, configs, output } => {
            let loaded = Loaded::new(&model)?;
            let configs = load_configs(&configs)?;
            let rows = sweep(&loaded.graph, &configs, &loaded.db, &loaded.rules, model.fallback.into())?;
            let text = match output.format {
                Format::Json => sweep_to_json(&rows),
                Format::Table => sweep_table(&rows),
            };
            emit(&output, &text)
        }
        Command::Mape { predictions, measurements, output } => {
            let rows = load_sweep(&predictions)?;
            let ms = load_measurements(&measurements)?;
            let report = evaluate(&rows, &ms)?;
            let text = match output.format {
                Format::Json => report_to_json(&report),
                Format::Table => report_table(&report),
            };
            emit(&output, &text)
        }
        Command::Validate { graph, config, output } => {
            let g = load_graph(&graph)?;
            let mut report = ValidateReport {
                model: g.model_name.clone(),
                layers: g.layer_count(),
                operators: g.operator_count(),
                config: None,
            };
            let mut failure = None;
            if let Some(path) = config {
                let cfg = load_config(&path)?;
                let (stage_sizes, error) = match feasibility(&g, &cfg) {
                    Ok(sizes) => (Some(sizes), None),
                    Err(e) => (stage_sizes(g.layer_count(), cfg.pp_degree).ok(), Some(e)),
                };
                report.config = Some(ConfigCheck {
                    label: cfg.label(),
                    gpus: cfg.gpu_count(),
                    stage_sizes,
                    feasible: error.is_none(),
                    error: error.as_ref().map(ToString::to_string),
                });
                failure = error;
            }
            let text = match output.format {
                Format::Json => json(&report),
                Format::Table => validate_table(&report),
            };
            emit(&output, &text)?;
            failure.map_or(Ok(()), Err)
        }
        Command::ShowPartition { graph, config, rules, output } => {
            let g = load_graph(&graph)?;
            let cfg = load_config(&config)?;
            let rules = match rules {
                Some(p) => load_cast_rules_or_builtin(p, false)?,
                None => CastRuleTable::builtin(),
            };
            let parts = partition(&assign_precision(&g, cfg.precision, &rules), &cfg)?;
            let gpus: Vec<GpuSummary> = parts
                .iter()
                .map(|sg| GpuSummary {
                    dp_rank: sg.dp_rank,
                    tp_rank: sg.tp_rank,
                    pp_stage: sg.pp_stage,
                    layers: [sg.layer_range.start, sg.layer_range.end],
                    operators: sg.operator_count(),
                    per_gpu_batch: sg.per_gpu_batch,
                    sliced_weights: sg.sliced_weight_names.len(),
                    weight_bytes: sg
                        .operators()
                        .flat_map(|o| &o.weights)
                        .map(|w| w.element_count() * w.elem_precision.map_or(0, |p| p.bytes()))
                        .sum(),
                })
                .collect();
            let text = match output.format {
                Format::Json => json(&gpus),
                Format::Table => partition_table(&cfg, &gpus),
            };
            emit(&output, &text)
        }
    }
}

struct Loaded {
    graph: ComputationGraph,
    db: precast::LatencyDb,
    rules: CastRuleTable,
    graph_sha256: String,
    db_sha256: Vec<String>,
}

impl Loaded {
    fn new(args: &ModelArgs) -> precast::Result<Self> {
        let rules = match &args.rules {
            Some(p) => load_cast_rules_or_builtin(p, args.builtin)?,
            None => CastRuleTable::builtin(),
        };
        Ok(Self {
            graph: load_graph(&args.graph)?,
            db: load_db(&args.dbs)?,
            rules,
            graph_sha256: sha256_file(&args.graph)?,
            db_sha256: args.dbs.iter().map(|p| sha256_file(p)).collect::<precast::Result<_>>()?,
        })
    }
}

fn sha256_file(path: &Path) -> precast::Result<String> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn feasibility(graph: &ComputationGraph, cfg: &JobConfig) -> precast::Result<Vec<usize>> {
    partition(graph, cfg)?;
    stage_sizes(graph.layer_count(), cfg.pp_degree)
}

#[derive(Serialize)]
struct PredictReport<'a> {
    model: &'a str,
    config: &'a JobConfig,
    prediction: &'a Prediction,
    graph_sha256: &'a str,
    db_sha256: &'a [String],
}

#[derive(Serialize)]
struct ValidateReport {
    model: String,
    layers: usize,
    operators: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<ConfigCheck>,
}

#[derive(Serialize)]
struct ConfigCheck {
    label: String,
    gpus: u64,
    stage_sizes: Option<Vec<usize>>,
    feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct GpuSummary {
    dp_rank: u64,
    tp_rank: u64,
    pp_stage: u64,
    layers: [usize; 2],
    operators: usize,
    per_gpu_batch: u64,
    sliced_weights: usize,
    weight_bytes: u64,
}

fn json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn emit(output: &OutputArgs, text: &str) -> precast::Result<()> {
    match &output.out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn prediction_table(cfg: &JobConfig, p: &Prediction) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "config    {}", cfg.label());
    for (name, v) in [
        ("total_ms", p.total_ms),
        ("comp_ms", p.comp_ms),
        ("dp_ms", p.dp_ms),
        ("tp_ms", p.tp_ms),
        ("pp_ms", p.pp_ms),
    ] {
        let _ = writeln!(out, "{name:<9} {v:.6}");
    }
    let _ = writeln!(out, "v_dp      {} B", p.v_dp_bytes);
    let _ = writeln!(out, "v_tp      {} B", p.v_tp_bytes);
    let stages: Vec<String> = p.per_stage_comp_ms.iter().map(|s| format!("{s:.6}")).collect();
    let _ = writeln!(out, "stages    [{}]", stages.join(", "));
    let _ = writeln!(out, "interp    {}", p.interpolated_lookup_count);
    out
}

fn validate_table(r: &ValidateReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model     {}", r.model);
    let _ = writeln!(out, "layers    {}", r.layers);
    let _ = writeln!(out, "operators {}", r.operators);
    if let Some(c) = &r.config {
        let _ = writeln!(out, "config    {} on {} GPUs", c.label, c.gpus);
        if let Some(s) = &c.stage_sizes {
            let _ = writeln!(out, "stages    {s:?}");
        }
        match &c.error {
            None => out.push_str("feasible  yes\n"),
            Some(e) => {
                let _ = writeln!(out, "feasible  no: {e}");
            }
        }
    }
    out
}

fn partition_table(cfg: &JobConfig, gpus: &[GpuSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", cfg.label());
    let _ = writeln!(
        out,
        "{:<4} {:<4} {:<4} {:<9} {:>5} {:>6} {:>7} {:>14}",
        "pp", "dp", "tp", "layers", "ops", "batch", "sliced", "weight_bytes"
    );
    for g in gpus {
        let _ = writeln!(
            out,
            "{:<4} {:<4} {:<4} {:<9} {:>5} {:>6} {:>7} {:>14}",
            g.pp_stage,
            g.dp_rank,
            g.tp_rank,
            format!("{}..{}", g.layers[0], g.layers[1]),
            g.operators,
            g.per_gpu_batch,
            g.sliced_weights,
            g.weight_bytes
        );
    }
    out
}
