//! Config sweeps, measurement comparison and MAPE.

mod oracle;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::oracle::oracle_predict;
use crate::error::{Error, Result};
use crate::graph::ComputationGraph;
use crate::latency_db::{FallbackPolicy, LatencyDb};
use crate::partition::JobConfig;
use crate::precision::{CastRuleTable, PrecisionSetting};
use crate::predictor::{predict, Prediction};

/// A measured iteration time for one job config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    pub config: JobConfig,
    pub measured_ms: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub config: JobConfig,
    pub predicted_ms: f64,
    pub measured_ms: f64,
    pub abs_pct_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mape: f64,
}

/// Outcome of one sweep entry. Exactly one of `prediction` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: JobConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepRow {
    pub fn from_result(config: JobConfig, result: Result<Prediction>) -> Self {
        match result {
            Ok(p) => Self {
                config,
                prediction: Some(p),
                error: None,
            },
            Err(e) => Self {
                config,
                prediction: None,
                error: Some(e.to_string()),
            },
        }
    }
}

pub fn abs_pct_error(predicted_ms: f64, measured_ms: f64) -> f64 {
    (predicted_ms - measured_ms).abs() / measured_ms * 100.0
}

/// Mean absolute percentage error over `(predicted_ms, measured_ms)` pairs.
pub fn mape(rows: &[(f64, f64)]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("mape needs at least one row".into()));
    }
    let mut sum = 0.0;
    for (i, &(p, m)) in rows.iter().enumerate() {
        if !(m > 0.0) {
            return Err(Error::NonPositiveMeasurement { row: i, value: m });
        }
        sum += abs_pct_error(p, m);
    }
    Ok(sum / rows.len() as f64)
}

/// Predicts every config. Per-config failures are recorded in the row and do
/// not abort the sweep; output order follows `configs`.
pub fn sweep(
    graph: &ComputationGraph,
    configs: &[JobConfig],
    db: &LatencyDb,
    rules: &CastRuleTable,
    policy: FallbackPolicy,
) -> Result<Vec<SweepRow>> {
    if configs.is_empty() {
        return Err(Error::EmptyInput("sweep needs at least one config".into()));
    }
    Ok(configs
        .par_iter()
        .map(|c| SweepRow::from_result(c.clone(), predict(graph, c, db, rules, policy)))
        .collect())
}

/// Pairs each measurement with the successful sweep row of the same config.
pub fn evaluate(predictions: &[SweepRow], measurements: &[Measurement]) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(measurements.len());
    for m in measurements {
        let predicted = predictions
            .iter()
            .find(|r| r.config == m.config)
            .and_then(|r| r.prediction.as_ref())
            .ok_or_else(|| Error::Unmatched(m.config.label()))?;
        rows.push((m.config.clone(), predicted.total_ms, m.measured_ms));
    }
    let pairs: Vec<_> = rows.iter().map(|(_, p, m)| (*p, *m)).collect();
    let mape = mape(&pairs)?;
    Ok(EvalReport {
        rows: rows
            .into_iter()
            .map(|(config, predicted_ms, measured_ms)| EvalRow {
                config,
                predicted_ms,
                measured_ms,
                abs_pct_error: abs_pct_error(predicted_ms, measured_ms),
            })
            .collect(),
        mape,
    })
}

/// All `(d, t, p)` with `d · t · p == gpus`, in lexicographic order.
pub fn degree_triples(gpus: u64) -> Vec<(u64, u64, u64)> {
    let divisors: Vec<u64> = (1..=gpus).filter(|k| gpus % k == 0).collect();
    let mut out = Vec::new();
    for &d in &divisors {
        for &t in &divisors {
            if (gpus / d) % t == 0 {
                out.push((d, t, gpus / d / t));
            }
        }
    }
    out
}

/// Every degree triple for `gpus` GPUs under every precision setting.
pub fn full_sweep_configs(gpus: u64, batch_size: u64, link_bandwidth: f64) -> Vec<JobConfig> {
    degree_triples(gpus)
        .into_iter()
        .flat_map(|(d, t, p)| {
            PrecisionSetting::ALL
                .into_iter()
                .map(move |s| JobConfig::new(d, t, p, s, batch_size, link_bandwidth))
        })
        .collect()
}

/// Synthetic measurements `predicted × (1 + u)` with `u ~ Uniform(−half_width, half_width)`.
///
/// Returns each measurement together with its injected `u`. Failed sweep
/// rows are skipped.
pub fn synthesize_measurements(rows: &[SweepRow], half_width: f64, seed: u64) -> Vec<(Measurement, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.iter()
        .filter_map(|r| r.prediction.as_ref().map(|p| (r, p)))
        .map(|(r, p)| {
            let u: f64 = rng.gen_range(-half_width..half_width);
            let m = Measurement {
                config: r.config.clone(),
                measured_ms: p.total_ms * (1.0 + u),
                source: format!("synthetic: uniform noise +-{half_width} seed {seed}"),
            };
            (m, u)
        })
        .collect()
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialization is infallible");
    s.push('\n');
    s
}

pub fn parse_measurements(text: &str, origin: &str) -> Result<Vec<Measurement>> {
    let ms: Vec<Measurement> = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
    for (i, m) in ms.iter().enumerate() {
        m.config.validate()?;
        if !(m.measured_ms > 0.0) {
            return Err(Error::NonPositiveMeasurement {
                row: i,
                value: m.measured_ms,
            });
        }
    }
    Ok(ms)
}

pub fn load_measurements(path: impl AsRef<Path>) -> Result<Vec<Measurement>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_measurements(&text, &path.display().to_string())
}

pub fn measurements_to_json(ms: &[Measurement]) -> String {
    to_pretty_json(&ms)
}

#[derive(Serialize, Deserialize)]
struct SweepDoc {
    rows: Vec<SweepRow>,
}

pub fn sweep_to_json(rows: &[SweepRow]) -> String {
    to_pretty_json(&SweepDoc { rows: rows.to_vec() })
}

pub fn parse_sweep(text: &str, origin: &str) -> Result<Vec<SweepRow>> {
    let doc: SweepDoc = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
    Ok(doc.rows)
}

pub fn load_sweep(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sweep(&text, &path.display().to_string())
}

pub fn report_to_json(report: &EvalReport) -> String {
    to_pretty_json(report)
}

/// Aligned text table of an [`EvalReport`].
pub fn report_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<4} {:<4} {:<4} {:<6} {:>14} {:>14} {:>9}", "dp", "tp", "pp", "prec", "predicted_ms", "measured_ms", "ape_%");
    for r in &report.rows {
        let c = &r.config;
        let _ = writeln!(
            out,
            "{:<4} {:<4} {:<4} {:<6} {:>14.3} {:>14.3} {:>9.3}",
            c.dp_degree,
            c.tp_degree,
            c.pp_degree,
            c.precision.to_string(),
            r.predicted_ms,
            r.measured_ms,
            r.abs_pct_error
        );
    }
    let _ = writeln!(out, "MAPE: {:.3}%", report.mape);
    out
}

/// Aligned text table of sweep rows; failed rows show their error.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<4} {:<4} {:<4} {:<6} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "dp", "tp", "pp", "prec", "total_ms", "comp_ms", "dp_ms", "tp_ms", "pp_ms"
    );
    for r in rows {
        let c = &r.config;
        let head = format!("{:<4} {:<4} {:<4} {:<6}", c.dp_degree, c.tp_degree, c.pp_degree, c.precision.to_string());
        match (&r.prediction, &r.error) {
            (Some(p), _) => {
                let _ = writeln!(
                    out,
                    "{head} {:>12.3} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
                    p.total_ms, p.comp_ms, p.dp_ms, p.tp_ms, p.pp_ms
                );
            }
            (None, e) => {
                let _ = writeln!(out, "{head} error: {}", e.as_deref().unwrap_or("unknown"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[(5.0, 5.0), (1.5, 1.5)]).unwrap(), 0.0);
        assert_eq!(mape(&[(110.0, 100.0), (90.0, 100.0)]).unwrap(), 10.0);
        assert!(matches!(mape(&[]), Err(Error::EmptyInput(_))));
        assert!(matches!(mape(&[(1.0, 0.0)]), Err(Error::NonPositiveMeasurement { row: 0, .. })));
        assert!(matches!(mape(&[(1.0, 1.0), (1.0, -2.0)]), Err(Error::NonPositiveMeasurement { row: 1, .. })));
    }

    #[test]
    fn eight_gpu_triples() {
        let brute: Vec<_> = [1u64, 2, 4, 8]
            .iter()
            .flat_map(|&d| [1u64, 2, 4, 8].into_iter().map(move |t| (d, t)))
            .flat_map(|(d, t)| [1u64, 2, 4, 8].into_iter().map(move |p| (d, t, p)))
            .filter(|(d, t, p)| d * t * p == 8)
            .collect();
        assert_eq!(degree_triples(8), brute);
        assert_eq!(brute.len(), 10);
        assert_eq!(full_sweep_configs(8, 8, 1e9).len(), 30);
    }

    #[test]
    fn synthetic_noise_is_bounded_and_seeded() {
        let cfg = JobConfig::new(1, 1, 1, PrecisionSetting::FP32, 1, 1e9);
        let pred = Prediction {
            total_ms: 10.0,
            comp_ms: 10.0,
            dp_ms: 0.0,
            tp_ms: 0.0,
            pp_ms: 0.0,
            v_dp_bytes: 0,
            v_tp_bytes: 0,
            per_stage_comp_ms: vec![10.0],
            interpolated_lookup_count: 0,
        };
        let rows: Vec<_> = (0..50).map(|_| SweepRow::from_result(cfg.clone(), Ok(pred.clone()))).collect();
        let a = synthesize_measurements(&rows, 0.05, 7);
        assert_eq!(a, synthesize_measurements(&rows, 0.05, 7));
        assert!(a.iter().all(|(m, u)| u.abs() < 0.05 && (m.measured_ms - 10.0 * (1.0 + u)).abs() == 0.0));
    }

    #[test]
    fn unmatched_measurement() {
        let cfg = JobConfig::new(1, 1, 1, PrecisionSetting::FP32, 1, 1e9);
        let m = Measurement {
            config: cfg,
            measured_ms: 1.0,
            source: "x".into(),
        };
        assert!(matches!(evaluate(&[], &[m]), Err(Error::Unmatched(_))));
    }
}
