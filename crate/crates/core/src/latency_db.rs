//! Operator latency database.
//!
//! Records are keyed by operator kind, the full list of input and weight
//! shapes, and precision. Files are JSON lines: a header object carrying
//! `format_version` and free-form metadata, followed by one record per line.
//!
//! On a miss the database can interpolate along the leading dimension of
//! each shape: knots that share kind, precision and every non-leading
//! dimension form a family, ordered by total element count, and the query
//! is placed on the line through its two nearest knots.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{element_count, OpKind, Precision};

pub const DB_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LatencyKey {
    pub kind: OpKind,
    pub shapes: Vec<Vec<u64>>,
    pub precision: Precision,
}

impl LatencyKey {
    pub fn new(kind: OpKind, shapes: Vec<Vec<u64>>, precision: Precision) -> Self {
        Self { kind, shapes, precision }
    }

    /// Compact JSON form with fixed field order.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("key serialization is infallible")
    }

    /// Total element count across all shapes.
    pub fn total_elements(&self) -> u64 {
        self.shapes.iter().map(|s| element_count(s)).sum()
    }

    fn family(&self) -> Family {
        Family {
            kind: self.kind,
            precision: self.precision,
            tails: self.shapes.iter().map(|s| s.get(1..).unwrap_or_default().to_vec()).collect(),
        }
    }
}

impl fmt::Display for LatencyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub fwd_us: f64,
    pub bwd_us: f64,
}

impl LatencyRecord {
    pub fn new(fwd_us: f64, bwd_us: f64) -> Self {
        Self { fwd_us, bwd_us }
    }

    pub fn is_valid(&self) -> bool {
        [self.fwd_us, self.bwd_us].iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    pub fn total_us(&self) -> f64 {
        self.fwd_us + self.bwd_us
    }
}

/// How a lookup result was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackPolicy {
    #[default]
    Strict,
    Interpolate,
}

impl FromStr for FallbackPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(FallbackPolicy::Strict),
            "interpolate" => Ok(FallbackPolicy::Interpolate),
            other => Err(Error::Config(format!("unknown fallback policy {other:?}"))),
        }
    }
}

/// Header line of a latency-db file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DbMetadata {
    #[serde(default)]
    pub device: String,
    /// Any further header fields (bandwidth notes, profiler settings, ...).
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Family {
    kind: OpKind,
    precision: Precision,
    tails: Vec<Vec<u64>>,
}

#[derive(Debug, Clone)]
struct Knot {
    elements: u64,
    key: LatencyKey,
    record: LatencyRecord,
}

#[derive(Debug, Clone, Default)]
pub struct LatencyDb {
    metadata: DbMetadata,
    entries: BTreeMap<LatencyKey, LatencyRecord>,
    families: HashMap<Family, Vec<Knot>>,
}

impl PartialEq for LatencyDb {
    fn eq(&self, other: &Self) -> bool {
        self.metadata == other.metadata && self.entries == other.entries
    }
}

impl LatencyDb {
    pub fn new(metadata: DbMetadata) -> Self {
        Self {
            metadata,
            ..Default::default()
        }
    }

    pub fn metadata(&self) -> &DbMetadata {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&LatencyKey, &LatencyRecord)> {
        self.entries.iter()
    }

    pub fn get(&self, key: &LatencyKey) -> Option<&LatencyRecord> {
        self.entries.get(key)
    }

    /// Adds a record. Re-inserting an identical record is a no-op; a
    /// differing record for an existing key is a merge conflict.
    pub fn insert(&mut self, key: LatencyKey, record: LatencyRecord) -> Result<()> {
        if !record.is_valid() {
            return Err(Error::parse(&key, "latencies must be finite and non-negative"));
        }
        if let Some(existing) = self.entries.get(&key) {
            if *existing == record {
                return Ok(());
            }
            return Err(Error::MergeConflict { key: key.canonical() });
        }
        let knots = self.families.entry(key.family()).or_default();
        let knot = Knot {
            elements: key.total_elements(),
            key: key.clone(),
            record,
        };
        let pos = knots.partition_point(|k| (k.elements, &k.key) < (knot.elements, &knot.key));
        knots.insert(pos, knot);
        self.entries.insert(key, record);
        Ok(())
    }

    /// Merges `other` into `self` under [`LatencyDb::insert`] semantics.
    /// Metadata of `self` is kept.
    pub fn merge(&mut self, other: LatencyDb) -> Result<()> {
        for (k, r) in other.entries {
            self.insert(k, r)?;
        }
        Ok(())
    }

    pub fn lookup(&self, key: &LatencyKey, policy: FallbackPolicy) -> Result<(LatencyRecord, Provenance)> {
        if let Some(r) = self.entries.get(key) {
            return Ok((*r, Provenance::Exact));
        }
        let missing = || Error::MissingLatency { key: key.canonical() };
        if policy == FallbackPolicy::Strict {
            return Err(missing());
        }
        let knots = self.families.get(&key.family()).ok_or_else(missing)?;
        let mut distinct: Vec<&Knot> = Vec::with_capacity(knots.len());
        for k in knots {
            if distinct.last().map_or(true, |l| l.elements != k.elements) {
                distinct.push(k);
            }
        }
        let xq = key.total_elements() as f64;
        let record = match distinct.as_slice() {
            [] => return Err(missing()),
            [only] => {
                let scale = xq / only.elements as f64;
                LatencyRecord::new(only.record.fwd_us * scale, only.record.bwd_us * scale)
            }
            _ => {
                let above = distinct.partition_point(|k| (k.elements as f64) < xq);
                if above < distinct.len() && distinct[above].elements as f64 == xq {
                    distinct[above].record
                } else {
                    let hi = above.clamp(1, distinct.len() - 1);
                    line_through(distinct[hi - 1], distinct[hi], xq)
                }
            }
        };
        Ok((record, Provenance::Interpolated))
    }
}

fn line_through(a: &Knot, b: &Knot, xq: f64) -> LatencyRecord {
    let (xa, xb) = (a.elements as f64, b.elements as f64);
    let t = (xq - xa) / (xb - xa);
    let lerp = |ya: f64, yb: f64| (ya + (yb - ya) * t).max(0.0);
    LatencyRecord::new(lerp(a.record.fwd_us, b.record.fwd_us), lerp(a.record.bwd_us, b.record.bwd_us))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    kind: String,
    shapes: Vec<Vec<u64>>,
    precision: Precision,
    fwd_us: f64,
    bwd_us: f64,
}

#[derive(Serialize)]
struct RecordLineOut<'a> {
    kind: OpKind,
    shapes: &'a [Vec<u64>],
    precision: Precision,
    fwd_us: f64,
    bwd_us: f64,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    format_version: String,
    #[serde(flatten)]
    metadata: DbMetadata,
}

/// Parses one latency-db file.
pub fn parse_db(text: &str, origin: &str) -> Result<LatencyDb> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(origin, "missing header line"))?;
    let header: HeaderLine =
        serde_json::from_str(header).map_err(|e| Error::parse(origin, format!("header: {e}")))?;
    if header.format_version != DB_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            origin: origin.to_string(),
            found: header.format_version,
            expected: DB_FORMAT_VERSION.to_string(),
        });
    }
    let mut db = LatencyDb::new(header.metadata);
    for (i, line) in lines {
        let at = || format!("{origin}:{}", i + 1);
        let rec: RecordLine = serde_json::from_str(line).map_err(|e| Error::parse(at(), e))?;
        let kind = rec.kind.parse::<OpKind>().map_err(|e| Error::parse(at(), e))?;
        if rec.shapes.iter().any(|s| s.is_empty() || s.contains(&0)) {
            return Err(Error::parse(at(), "shapes must be non-empty with positive dims"));
        }
        let key = LatencyKey::new(kind, rec.shapes, rec.precision);
        let record = LatencyRecord::new(rec.fwd_us, rec.bwd_us);
        if !record.is_valid() {
            return Err(Error::parse(at(), "latencies must be finite and non-negative"));
        }
        db.insert(key, record)?;
    }
    Ok(db)
}

/// Serializes a database as JSON lines, records in key order.
pub fn db_to_jsonl(db: &LatencyDb) -> String {
    let header = HeaderLine {
        format_version: DB_FORMAT_VERSION.to_string(),
        metadata: db.metadata.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serialization is infallible");
    out.push('\n');
    for (k, r) in &db.entries {
        let line = RecordLineOut {
            kind: k.kind,
            shapes: &k.shapes,
            precision: k.precision,
            fwd_us: r.fwd_us,
            bwd_us: r.bwd_us,
        };
        out.push_str(&serde_json::to_string(&line).expect("record serialization is infallible"));
        out.push('\n');
    }
    out
}

/// Loads and merges one or more latency-db files.
pub fn load_db<P: AsRef<Path>>(paths: &[P]) -> Result<LatencyDb> {
    let mut merged: Option<LatencyDb> = None;
    for path in paths {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let db = parse_db(&text, &path.display().to_string())?;
        match merged.as_mut() {
            None => merged = Some(db),
            Some(m) => m.merge(db)?,
        }
    }
    let db = merged.ok_or_else(|| Error::EmptyInput("no latency db files given".into()))?;
    if db.is_empty() {
        return Err(Error::EmptyInput("latency db has no records".into()));
    }
    Ok(db)
}

pub fn save_db(db: &LatencyDb, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, db_to_jsonl(db)).map_err(|e| Error::io(path, e))
}
