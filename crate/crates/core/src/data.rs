//! Annotation and prediction tables: CSV ingestion, validation and
//! ground-truth derivation.
//!
//! Row numbers in errors are file line numbers, with the header on line 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractional digits used when writing values back out.
pub const OUTPUT_DECIMALS: usize = 6;

const ANNOTATION_COLUMNS: [&str; 5] = ["item_id", "group_id", "annotator_id", "kind", "value"];
const PREDICTION_COLUMNS: [&str; 5] = ["item_id", "group_id", "estimator_id", "sample_idx", "value"];

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemGroup {
    pub item: String,
    pub group: String,
}

impl ItemGroup {
    pub fn new(item: impl Into<String>, group: impl Into<String>) -> Self {
        Self {
            item: item.into(),
            group: group.into(),
        }
    }
}

impl fmt::Display for ItemGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.item, self.group)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    /// The annotator's own judgment.
    Direct,
    /// The annotator's estimate of the fraction of the target group that
    /// would judge the item toxic.
    Perspective,
}

impl FromStr for AnnotationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(AnnotationKind::Direct),
            "perspective" => Ok(AnnotationKind::Perspective),
            other => Err(format!("unknown annotation kind `{other}`")),
        }
    }
}

impl fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnotationKind::Direct => f.write_str("direct"),
            AnnotationKind::Perspective => f.write_str("perspective"),
        }
    }
}

/// Five-point ordinal scale used for direct toxicity ratings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ToxicityLevel {
    VeryToxic,
    Toxic,
    Neither,
    Healthy,
    VeryHealthy,
}

impl ToxicityLevel {
    pub const ALL: [ToxicityLevel; 5] = [
        ToxicityLevel::VeryToxic,
        ToxicityLevel::Toxic,
        ToxicityLevel::Neither,
        ToxicityLevel::Healthy,
        ToxicityLevel::VeryHealthy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToxicityLevel::VeryToxic => "VeryToxic",
            ToxicityLevel::Toxic => "Toxic",
            ToxicityLevel::Neither => "Neither",
            ToxicityLevel::Healthy => "Healthy",
            ToxicityLevel::VeryHealthy => "VeryHealthy",
        }
    }
}

impl FromStr for ToxicityLevel {
    type Err = String;

    /// Case, spaces, underscores and hyphens are ignored, so "Very Toxic"
    /// and "very_toxic" both parse. Anything else is rejected.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        match norm.as_str() {
            "verytoxic" => Ok(ToxicityLevel::VeryToxic),
            "toxic" => Ok(ToxicityLevel::Toxic),
            "neither" => Ok(ToxicityLevel::Neither),
            "healthy" => Ok(ToxicityLevel::Healthy),
            "veryhealthy" => Ok(ToxicityLevel::VeryHealthy),
            _ => Err(format!("unknown ordinal level `{s}`")),
        }
    }
}

impl fmt::Display for ToxicityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AnnotationValue {
    Level(ToxicityLevel),
    Binary(bool),
    Fraction(f64),
}

impl AnnotationValue {
    fn parse(kind: AnnotationKind, raw: &str) -> std::result::Result<Self, String> {
        match kind {
            AnnotationKind::Direct => match raw.trim() {
                "0" => Ok(AnnotationValue::Binary(false)),
                "1" => Ok(AnnotationValue::Binary(true)),
                other => other.parse().map(AnnotationValue::Level),
            },
            AnnotationKind::Perspective => parse_fraction(raw).map(AnnotationValue::Fraction),
        }
    }

    fn render(&self) -> String {
        match self {
            AnnotationValue::Level(level) => level.name().to_string(),
            AnnotationValue::Binary(b) => u8::from(*b).to_string(),
            AnnotationValue::Fraction(v) => format_fraction(*v),
        }
    }
}

/// Parses a fraction written either as a decimal ("0.42") or as a percent
/// string ("42%"), returning a value in [0, 1].
pub fn parse_fraction(raw: &str) -> std::result::Result<f64, String> {
    let s = raw.trim();
    let (number, scale) = match s.strip_suffix('%') {
        Some(body) => (body.trim(), 100.0),
        None => (s, 1.0),
    };
    let parsed: f64 = number
        .parse()
        .map_err(|_| format!("cannot parse `{raw}` as a fraction or percent"))?;
    let value = parsed / scale;
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        return Err(format!("value `{raw}` outside [0, 1]"));
    }
    Ok(value)
}

pub fn format_fraction(v: f64) -> String {
    format!("{v:.prec$}", prec = OUTPUT_DECIMALS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub group_id: String,
    pub annotator_id: String,
    pub kind: AnnotationKind,
    pub value: AnnotationValue,
}

impl AnnotationRecord {
    pub fn key(&self) -> ItemGroup {
        ItemGroup::new(self.item_id.clone(), self.group_id.clone())
    }

    fn check(&self) -> std::result::Result<(), String> {
        match (self.kind, self.value) {
            (AnnotationKind::Perspective, AnnotationValue::Fraction(v)) => {
                if v.is_finite() && (0.0..=1.0).contains(&v) {
                    Ok(())
                } else {
                    Err(format!("perspective value {v} outside [0, 1]"))
                }
            }
            (AnnotationKind::Perspective, _) => {
                Err("perspective annotations must carry a fraction".into())
            }
            (AnnotationKind::Direct, AnnotationValue::Fraction(_)) => {
                Err("direct annotations must carry an ordinal level or a 0/1 label".into())
            }
            (AnnotationKind::Direct, _) => Ok(()),
        }
    }
}

/// Validated, immutable set of human annotations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotationTable {
    records: Vec<AnnotationRecord>,
}

impl AnnotationTable {
    /// Validates records in order; row numbers in errors assume the records
    /// came from a file with a header line.
    pub fn new(records: Vec<AnnotationRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (i, rec) in records.iter().enumerate() {
            let row = i as u64 + 2;
            rec.check().map_err(|message| Error::Row { row, message })?;
            let key = (
                rec.item_id.as_str(),
                rec.group_id.as_str(),
                rec.annotator_id.as_str(),
                rec.kind,
            );
            if !seen.insert(key) {
                return Err(Error::DuplicateKey {
                    row,
                    key: format!(
                        "(item={}, group={}, annotator={}, kind={})",
                        rec.item_id, rec.group_id, rec.annotator_id, rec.kind
                    ),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.group_id.clone()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file)
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let cols = column_indices(&mut rdr, &ANNOTATION_COLUMNS)?;
        let mut records = Vec::new();
        let mut rows = Vec::new();
        for result in rdr.records() {
            let raw = result?;
            let row = raw.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| raw.get(cols[i]).unwrap_or("").trim();
            let fail = |message: String| Error::Row { row, message };
            let kind: AnnotationKind = field(3).parse().map_err(fail)?;
            let value = AnnotationValue::parse(kind, field(4)).map_err(fail)?;
            for (i, name) in ANNOTATION_COLUMNS.iter().enumerate().take(3) {
                if field(i).is_empty() {
                    return Err(fail(format!("empty `{name}`")));
                }
            }
            records.push(AnnotationRecord {
                item_id: field(0).to_string(),
                group_id: field(1).to_string(),
                annotator_id: field(2).to_string(),
                kind,
                value,
            });
            rows.push(row);
        }
        Self::new(records).map_err(|e| remap_row(e, &rows))
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(ANNOTATION_COLUMNS)?;
        for r in &self.records {
            wtr.write_record([
                r.item_id.as_str(),
                r.group_id.as_str(),
                r.annotator_id.as_str(),
                &r.kind.to_string(),
                &r.value.render(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<annotations>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(file)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item_id: String,
    pub group_id: String,
    pub estimator_id: String,
    pub sample_idx: u64,
    pub value: f64,
}

/// Validated, immutable set of estimator predictions in [0, 1].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionTable {
    records: Vec<PredictionRecord>,
}

impl PredictionTable {
    pub fn new(records: Vec<PredictionRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (i, rec) in records.iter().enumerate() {
            let row = i as u64 + 2;
            if !rec.value.is_finite() || !(0.0..=1.0).contains(&rec.value) {
                return Err(Error::Row {
                    row,
                    message: format!("prediction {} outside [0, 1]", rec.value),
                });
            }
            let key = (
                rec.item_id.as_str(),
                rec.group_id.as_str(),
                rec.estimator_id.as_str(),
                rec.sample_idx,
            );
            if !seen.insert(key) {
                return Err(Error::DuplicateKey {
                    row,
                    key: format!(
                        "(item={}, group={}, estimator={}, sample={})",
                        rec.item_id, rec.group_id, rec.estimator_id, rec.sample_idx
                    ),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn estimators(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.estimator_id.clone()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file)
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let cols = column_indices(&mut rdr, &PREDICTION_COLUMNS)?;
        let mut records = Vec::new();
        let mut rows = Vec::new();
        for result in rdr.records() {
            let raw = result?;
            let row = raw.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| raw.get(cols[i]).unwrap_or("").trim();
            let fail = |message: String| Error::Row { row, message };
            for (i, name) in PREDICTION_COLUMNS.iter().enumerate().take(3) {
                if field(i).is_empty() {
                    return Err(fail(format!("empty `{name}`")));
                }
            }
            let sample_idx: u64 = field(3)
                .parse()
                .map_err(|_| fail(format!("invalid sample_idx `{}`", field(3))))?;
            let value = parse_fraction(field(4)).map_err(fail)?;
            records.push(PredictionRecord {
                item_id: field(0).to_string(),
                group_id: field(1).to_string(),
                estimator_id: field(2).to_string(),
                sample_idx,
                value,
            });
            rows.push(row);
        }
        Self::new(records).map_err(|e| remap_row(e, &rows))
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(PREDICTION_COLUMNS)?;
        for r in &self.records {
            wtr.write_record([
                r.item_id.as_str(),
                r.group_id.as_str(),
                r.estimator_id.as_str(),
                &r.sample_idx.to_string(),
                &format_fraction(r.value),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<predictions>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(file)
    }
}

fn column_indices<R: Read>(rdr: &mut csv::Reader<R>, names: &[&str]) -> Result<Vec<usize>> {
    let headers = rdr.headers()?.clone();
    names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim().trim_start_matches('\u{feff}') == *name)
                .ok_or_else(|| Error::MissingColumn((*name).to_string()))
        })
        .collect()
}

/// `new` reports positional rows; translate them to real file lines.
fn remap_row(err: Error, rows: &[u64]) -> Error {
    let lookup = |row: u64| rows.get(row as usize - 2).copied().unwrap_or(row);
    match err {
        Error::Row { row, message } => Error::Row {
            row: lookup(row),
            message,
        },
        Error::DuplicateKey { row, key } => Error::DuplicateKey {
            row: lookup(row),
            key,
        },
        other => other,
    }
}

/// Maps direct ratings onto {0, 1}. Levels in the positive set count as
/// toxic; pre-binarized labels pass through unchanged.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binarizer {
    positive: BTreeSet<ToxicityLevel>,
}

impl Default for Binarizer {
    fn default() -> Self {
        Self::from_levels([ToxicityLevel::VeryToxic, ToxicityLevel::Toxic])
    }
}

impl Binarizer {
    pub fn from_levels(levels: impl IntoIterator<Item = ToxicityLevel>) -> Self {
        Self {
            positive: levels.into_iter().collect(),
        }
    }

    pub fn binarize(&self, value: &AnnotationValue) -> Option<bool> {
        match value {
            AnnotationValue::Level(level) => Some(self.positive.contains(level)),
            AnnotationValue::Binary(b) => Some(*b),
            AnnotationValue::Fraction(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub f_star: f64,
    pub support_count: usize,
}

/// Empirical group means, one per (item, group).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTable {
    entries: BTreeMap<ItemGroup, GroundTruth>,
}

impl GroundTruthTable {
    pub fn from_entries(entries: impl IntoIterator<Item = (ItemGroup, GroundTruth)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (key, truth) in entries {
            if !(0.0..=1.0).contains(&truth.f_star) || truth.support_count == 0 {
                return Err(Error::param(format!(
                    "ground truth for {key}: f_star {} support {}",
                    truth.f_star, truth.support_count
                )));
            }
            if map.insert(key.clone(), truth).is_some() {
                return Err(Error::param(format!("duplicate ground truth for {key}")));
            }
        }
        Ok(Self { entries: map })
    }

    pub fn get(&self, key: &ItemGroup) -> Option<&GroundTruth> {
        self.entries.get(key)
    }

    pub fn f_star(&self, key: &ItemGroup) -> Option<f64> {
        self.entries.get(key).map(|t| t.f_star)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ItemGroup, &GroundTruth)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.entries.keys().map(|k| k.group.clone()).collect()
    }
}

/// Derives `f*(x, g)` as the fraction of direct annotators whose binarized
/// rating is 1, for every (item, group) that has direct annotations.
pub fn derive_ground_truth(table: &AnnotationTable, binarize: &Binarizer) -> Result<GroundTruthTable> {
    let mut counts: BTreeMap<ItemGroup, (usize, usize)> = BTreeMap::new();
    for rec in table.records() {
        if rec.kind != AnnotationKind::Direct {
            continue;
        }
        let positive = binarize
            .binarize(&rec.value)
            .ok_or_else(|| Error::param("direct annotation without a binarizable value"))?;
        let entry = counts.entry(rec.key()).or_default();
        entry.0 += usize::from(positive);
        entry.1 += 1;
    }
    GroundTruthTable::from_entries(counts.into_iter().map(|(key, (pos, total))| {
        (
            key,
            GroundTruth {
                f_star: pos as f64 / total as f64,
                support_count: total,
            },
        )
    }))
}

/// Like [`derive_ground_truth`] but restricted to `keys`, failing if any of
/// them has no direct annotation.
pub fn derive_ground_truth_for(
    table: &AnnotationTable,
    binarize: &Binarizer,
    keys: &[ItemGroup],
) -> Result<GroundTruthTable> {
    let all = derive_ground_truth(table, binarize)?;
    let mut entries = Vec::with_capacity(keys.len());
    for key in keys {
        let truth = all.get(key).ok_or_else(|| Error::NoDirectAnnotations {
            item: key.item.clone(),
            group: key.group.clone(),
        })?;
        entries.push((key.clone(), *truth));
    }
    GroundTruthTable::from_entries(entries)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoolKey {
    pub item: String,
    pub group: String,
    pub estimator: String,
}

impl PoolKey {
    pub fn new(item: impl Into<String>, group: impl Into<String>, estimator: impl Into<String>) -> Self {
        Self {
            item: item.into(),
            group: group.into(),
            estimator: estimator.into(),
        }
    }

    pub fn item_group(&self) -> ItemGroup {
        ItemGroup::new(self.item.clone(), self.group.clone())
    }
}

/// Per-(item, group, estimator) prediction pools. Human perspective
/// annotations and model predictions both end up here and are evaluated
/// identically.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionPools {
    pools: BTreeMap<PoolKey, Vec<f64>>,
}

impl PredictionPools {
    /// Pools ordered by `sample_idx`.
    pub fn from_predictions(table: &PredictionTable) -> Self {
        let mut staged: BTreeMap<PoolKey, Vec<(u64, f64)>> = BTreeMap::new();
        for r in table.records() {
            staged
                .entry(PoolKey::new(&r.item_id, &r.group_id, &r.estimator_id))
                .or_default()
                .push((r.sample_idx, r.value));
        }
        let pools = staged
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_by_key(|(idx, _)| *idx);
                (k, v.into_iter().map(|(_, x)| x).collect())
            })
            .collect();
        Self { pools }
    }

    /// Perspective annotations as one estimator, pools ordered by annotator id.
    pub fn from_perspective(table: &AnnotationTable, estimator: &str) -> Self {
        let mut staged: BTreeMap<PoolKey, Vec<(&str, f64)>> = BTreeMap::new();
        for r in table.records() {
            if let (AnnotationKind::Perspective, AnnotationValue::Fraction(v)) = (r.kind, r.value) {
                staged
                    .entry(PoolKey::new(&r.item_id, &r.group_id, estimator))
                    .or_default()
                    .push((r.annotator_id.as_str(), v));
            }
        }
        let pools = staged
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_by(|a, b| a.0.cmp(b.0));
                (k, v.into_iter().map(|(_, x)| x).collect())
            })
            .collect();
        Self { pools }
    }

    pub fn insert(&mut self, key: PoolKey, values: Vec<f64>) -> Result<()> {
        if self.pools.contains_key(&key) {
            return Err(Error::param(format!(
                "pool for item `{}`, group `{}`, estimator `{}` defined twice",
                key.item, key.group, key.estimator
            )));
        }
        self.pools.insert(key, values);
        Ok(())
    }

    pub fn merge(&mut self, other: PredictionPools) -> Result<()> {
        for (k, v) in other.pools {
            self.insert(k, v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &PoolKey) -> Option<&[f64]> {
        self.pools.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PoolKey, &[f64])> {
        self.pools.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }

    pub fn estimators(&self) -> BTreeSet<String> {
        self.pools.keys().map(|k| k.estimator.clone()).collect()
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.pools.keys().map(|k| k.group.clone()).collect()
    }

    /// Keeps pools whose group and estimator pass the filters; an empty
    /// filter keeps everything.
    pub fn filtered(&self, groups: &[String], estimators: &[String]) -> Self {
        let pools = self
            .pools
            .iter()
            .filter(|(k, _)| groups.is_empty() || groups.contains(&k.group))
            .filter(|(k, _)| estimators.is_empty() || estimators.contains(&k.estimator))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Self { pools }
    }

    /// Mean prediction per (item, group) for one estimator.
    pub fn means(&self, estimator: &str) -> BTreeMap<ItemGroup, f64> {
        self.pools
            .iter()
            .filter(|(k, v)| k.estimator == estimator && !v.is_empty())
            .map(|(k, v)| (k.item_group(), v.iter().sum::<f64>() / v.len() as f64))
            .collect()
    }
}
