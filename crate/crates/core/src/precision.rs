//! Per-operator precision assignment.
//!
//! Mixed precision is modeled as a static, data-driven table mapping operator
//! kinds to a low (FP16) or high (FP32) precision, with a default for kinds
//! listed in neither set. Uniform settings ignore the table.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, OpKind, Precision};

pub const RULES_FORMAT_VERSION: &str = "1";

/// Job-level precision setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrecisionSetting {
    FP32,
    FP16,
    MIXED,
}

impl PrecisionSetting {
    pub const ALL: [PrecisionSetting; 3] = [PrecisionSetting::FP32, PrecisionSetting::FP16, PrecisionSetting::MIXED];
}

impl fmt::Display for PrecisionSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrecisionSetting::FP32 => "FP32",
            PrecisionSetting::FP16 => "FP16",
            PrecisionSetting::MIXED => "MIXED",
        })
    }
}

impl FromStr for PrecisionSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FP32" => Ok(PrecisionSetting::FP32),
            "FP16" => Ok(PrecisionSetting::FP16),
            "MIXED" => Ok(PrecisionSetting::MIXED),
            other => Err(Error::Config(format!("unknown precision setting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CastRuleTable {
    low: BTreeSet<OpKind>,
    high: BTreeSet<OpKind>,
    default_rule: Precision,
}

impl CastRuleTable {
    pub fn new(
        low: impl IntoIterator<Item = OpKind>,
        high: impl IntoIterator<Item = OpKind>,
        default_rule: Precision,
    ) -> Result<Self> {
        let low: BTreeSet<_> = low.into_iter().collect();
        let high: BTreeSet<_> = high.into_iter().collect();
        if let Some(k) = low.intersection(&high).next() {
            return Err(Error::RuleConflict(k.to_string()));
        }
        Ok(Self {
            low,
            high,
            default_rule,
        })
    }

    /// Built-in autocast policy: matmul/conv run low, softmax/reduction/norm
    /// stay high, everything else falls back to FP32.
    pub fn builtin() -> Self {
        Self::new(
            [OpKind::Matmul, OpKind::Conv],
            [OpKind::Softmax, OpKind::Reduction, OpKind::Norm],
            Precision::FP32,
        )
        .expect("built-in rule table is disjoint")
    }

    pub fn low(&self) -> &BTreeSet<OpKind> {
        &self.low
    }

    pub fn high(&self) -> &BTreeSet<OpKind> {
        &self.high
    }

    pub fn default_rule(&self) -> Precision {
        self.default_rule
    }

    /// Mixed-precision cast of `kind`.
    pub fn classify(&self, kind: OpKind) -> Precision {
        if self.low.contains(&kind) {
            Precision::FP16
        } else if self.high.contains(&kind) {
            Precision::FP32
        } else {
            self.default_rule
        }
    }

    /// Precision of `kind` under a job-level setting.
    pub fn resolve(&self, setting: PrecisionSetting, kind: OpKind) -> Precision {
        match setting {
            PrecisionSetting::FP32 => Precision::FP32,
            PrecisionSetting::FP16 => Precision::FP16,
            PrecisionSetting::MIXED => self.classify(kind),
        }
    }
}

impl Default for CastRuleTable {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Returns a copy of `graph` with every operator, input and weight carrying
/// its assigned precision. Structure is left untouched.
pub fn assign_precision(graph: &ComputationGraph, setting: PrecisionSetting, rules: &CastRuleTable) -> ComputationGraph {
    let mut out = graph.clone();
    for node in out.layers.iter_mut().flatten() {
        let p = rules.resolve(setting, node.kind);
        node.precision = Some(p);
        for t in &mut node.inputs {
            t.elem_precision = Some(p);
        }
        for w in &mut node.weights {
            w.elem_precision = Some(p);
        }
    }
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesDoc {
    format_version: String,
    low: Vec<String>,
    high: Vec<String>,
    default: Precision,
}

#[derive(Serialize)]
struct RulesDocOut<'a> {
    format_version: &'a str,
    low: Vec<&'static str>,
    high: Vec<&'static str>,
    default: Precision,
}

pub fn parse_cast_rules(text: &str, origin: &str) -> Result<CastRuleTable> {
    let doc: RulesDoc = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
    if doc.format_version != RULES_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            origin: origin.to_string(),
            found: doc.format_version,
            expected: RULES_FORMAT_VERSION.to_string(),
        });
    }
    let kinds = |names: Vec<String>| names.iter().map(|n| n.parse::<OpKind>()).collect::<Result<Vec<_>>>();
    CastRuleTable::new(kinds(doc.low)?, kinds(doc.high)?, doc.default)
}

pub fn cast_rules_to_json(rules: &CastRuleTable) -> String {
    let doc = RulesDocOut {
        format_version: RULES_FORMAT_VERSION,
        low: rules.low.iter().map(|k| k.as_str()).collect(),
        high: rules.high.iter().map(|k| k.as_str()).collect(),
        default: rules.default_rule,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("rule serialization is infallible");
    s.push('\n');
    s
}

pub fn load_cast_rules(path: impl AsRef<Path>) -> Result<CastRuleTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cast_rules(&text, &path.display().to_string())
}

/// Like [`load_cast_rules`], but a missing file yields the built-in table
/// when `builtin_fallback` is set.
pub fn load_cast_rules_or_builtin(path: impl AsRef<Path>, builtin_fallback: bool) -> Result<CastRuleTable> {
    let path = path.as_ref();
    if builtin_fallback && !path.exists() {
        return Ok(CastRuleTable::builtin());
    }
    load_cast_rules(path)
}

pub fn save_cast_rules(rules: &CastRuleTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cast_rules_to_json(rules)).map_err(|e| Error::io(path, e))
}
