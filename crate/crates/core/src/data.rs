//! Domain types, label encoding and dataset CSV ingestion/emission.
//!
//! A [`Dataset`] is a dense feature matrix with one ternary label per row.
//! The on-disk format is a UTF-8 CSV whose header lists the feature columns
//! followed by `label`; reals are written with the shortest decimal form that
//! parses back to the identical `f64`, so a save/load cycle is exact.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const N_CLASSES: usize = 3;
pub const N_FEATURES: usize = 13;
pub const LABEL_COLUMN: &str = "label";

/// Feature columns of the attack schema, in CSV and feature-vector order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "attacker_tx_count",
    "gas_price_ratio",
    "victim_gas_price_gwei",
    "attacker_gas_used",
    "victim_gas_used",
    "victim_value_eth",
    "attacker_value_eth",
    "block_position_delta",
    "same_block",
    "victim_failed",
    "interval_blocks",
    "cumulative_attacker_fee_eth",
    "gas_limit_utilization",
];

/// The three front-running attack categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackClass {
    /// The attacker outbids a pending victim transaction and takes its place.
    Displacement,
    /// The attacker brackets the victim with a higher-fee and a lower-fee transaction.
    Insertion,
    /// The attacker fills blocks with expensive transactions to keep the victim out.
    Suppression,
}

impl AttackClass {
    pub const ALL: [AttackClass; N_CLASSES] = [
        AttackClass::Displacement,
        AttackClass::Insertion,
        AttackClass::Suppression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackClass::Displacement => "displacement",
            AttackClass::Insertion => "insertion",
            AttackClass::Suppression => "suppression",
        }
    }
}

impl fmt::Display for AttackClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Integer class code: 0 displacement, 1 insertion, 2 suppression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct LabelId(u8);

impl LabelId {
    pub fn new(value: u64) -> Result<Self> {
        if value < N_CLASSES as u64 {
            Ok(LabelId(value as u8))
        } else {
            Err(Error::InvalidLabel(value))
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn value(self) -> u8 {
        self.0
    }

    pub fn all() -> [LabelId; N_CLASSES] {
        [LabelId(0), LabelId(1), LabelId(2)]
    }

    pub(crate) fn from_index(i: usize) -> Self {
        debug_assert!(i < N_CLASSES);
        LabelId(i as u8)
    }
}

impl TryFrom<u8> for LabelId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        LabelId::new(u64::from(v))
    }
}

impl From<LabelId> for u8 {
    fn from(l: LabelId) -> u8 {
        l.0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn encode_label(c: AttackClass) -> LabelId {
    match c {
        AttackClass::Displacement => LabelId(0),
        AttackClass::Insertion => LabelId(1),
        AttackClass::Suppression => LabelId(2),
    }
}

pub fn decode_label(id: LabelId) -> AttackClass {
    AttackClass::ALL[id.index()]
}

/// Decodes a raw integer code, rejecting anything outside `{0, 1, 2}`.
pub fn decode_label_value(value: u64) -> Result<AttackClass> {
    LabelId::new(value).map(decode_label)
}

impl From<AttackClass> for LabelId {
    fn from(c: AttackClass) -> Self {
        encode_label(c)
    }
}

impl From<LabelId> for AttackClass {
    fn from(id: LabelId) -> Self {
        decode_label(id)
    }
}

/// One raw front-running scenario: the observable facts about the attacker's
/// and the victim's transactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackInstance {
    pub attacker_tx_count: u32,
    /// Attacker's maximum gas price divided by the victim's gas price.
    pub gas_price_ratio: f64,
    pub victim_gas_price_gwei: f64,
    pub attacker_gas_used: f64,
    pub victim_gas_used: f64,
    pub victim_value_eth: f64,
    pub attacker_value_eth: f64,
    /// Victim index minus first attacker index; positive when the attacker was ordered first.
    pub block_position_delta: i64,
    pub same_block: bool,
    pub victim_failed: bool,
    pub interval_blocks: u32,
    pub cumulative_attacker_fee_eth: f64,
    pub gas_limit_utilization: f64,
    pub label: AttackClass,
}

impl AttackInstance {
    /// Checks the range bounds and the class-specific transaction counts.
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive and finite, got {v}")))
            }
        }
        fn nonneg(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be non-negative and finite, got {v}")))
            }
        }
        if self.attacker_tx_count < 1 {
            return Err(Error::param("attacker_tx_count", "must be at least 1"));
        }
        positive("gas_price_ratio", self.gas_price_ratio)?;
        positive("victim_gas_price_gwei", self.victim_gas_price_gwei)?;
        positive("attacker_gas_used", self.attacker_gas_used)?;
        positive("victim_gas_used", self.victim_gas_used)?;
        nonneg("victim_value_eth", self.victim_value_eth)?;
        nonneg("attacker_value_eth", self.attacker_value_eth)?;
        if self.interval_blocks < 1 {
            return Err(Error::param("interval_blocks", "must be at least 1"));
        }
        nonneg("cumulative_attacker_fee_eth", self.cumulative_attacker_fee_eth)?;
        if !(0.0..=1.0).contains(&self.gas_limit_utilization) {
            return Err(Error::param("gas_limit_utilization", "must lie in [0, 1]"));
        }
        match (self.label, self.attacker_tx_count) {
            (AttackClass::Displacement, n) if n != 1 => Err(Error::param(
                "attacker_tx_count",
                "displacement attacks use exactly one attacker transaction",
            )),
            (AttackClass::Insertion, n) if n != 2 => Err(Error::param(
                "attacker_tx_count",
                "insertion attacks use exactly two attacker transactions",
            )),
            _ => Ok(()),
        }
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Synthetic => "synthetic",
            Provenance::Ingested => "ingested",
        }
    }
}

/// Feature matrix plus ternary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<LabelId>,
    feature_names: Vec<String>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<LabelId>,
        feature_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        for (i, row) in features.iter_rows().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row: i + 1,
                    column: feature_names[j].clone(),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            provenance,
        })
    }

    /// An empty dataset over the attack schema.
    pub fn empty(provenance: Provenance) -> Self {
        Self {
            features: Matrix::zeros(0, N_FEATURES),
            labels: Vec::new(),
            feature_names: schema_names(),
            provenance,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            provenance: self.provenance,
        }
    }

    /// Same labels and names, new feature values (e.g. after standardization).
    pub fn with_features(&self, features: Matrix) -> Result<Dataset> {
        Dataset::new(
            features,
            self.labels.clone(),
            self.feature_names.clone(),
            self.provenance,
        )
    }

    /// Fails with `HeaderMismatch` unless the columns are exactly `names`.
    pub fn require_schema(&self, names: &[&str]) -> Result<()> {
        if self.feature_names.iter().map(String::as_str).eq(names.iter().copied()) {
            Ok(())
        } else {
            Err(Error::HeaderMismatch {
                expected: names.join(","),
                found: self.feature_names.join(","),
            })
        }
    }
}

pub fn schema_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

fn open_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

fn csv_err(path: &Path, row: usize, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::MalformedRow {
            row,
            reason: format!("{other:?}"),
        },
    }
}

fn parse_real(field: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::MalformedRow {
        row,
        reason: format!("column {column}: cannot parse {field:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            row,
            column: column.to_string(),
        });
    }
    Ok(v)
}

/// Reads a dataset CSV. The header must end with `label`; the preceding
/// columns become the feature names. Row numbers in errors count data rows
/// from 1 (the header is not counted).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_err(path, 0, e))?,
        None => {
            return Err(Error::HeaderMismatch {
                expected: format!("<features>,{LABEL_COLUMN}"),
                found: String::new(),
            })
        }
    };
    let columns: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    if columns.last().map(String::as_str) != Some(LABEL_COLUMN) || columns.len() < 2 {
        return Err(Error::HeaderMismatch {
            expected: format!("<features>,{LABEL_COLUMN}"),
            found: columns.join(","),
        });
    }
    let feature_names = columns[..columns.len() - 1].to_vec();
    let width = feature_names.len();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in records.enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(path, row, e))?;
        if record.len() != width + 1 {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {} fields, found {}", width + 1, record.len()),
            });
        }
        for (j, name) in feature_names.iter().enumerate() {
            data.push(parse_real(&record[j], row, name)?);
        }
        let raw = record[width].trim();
        let label = raw
            .parse::<u64>()
            .ok()
            .and_then(|v| LabelId::new(v).ok())
            .ok_or_else(|| Error::UnknownLabel {
                row,
                value: raw.to_string(),
            })?;
        labels.push(label);
    }
    let features = Matrix::new(labels.len(), width, data)?;
    Dataset::new(features, labels, feature_names, Provenance::Ingested)
}

/// Reads unlabeled rows for prediction. Accepts either the feature columns
/// alone or the full dataset layout (the label column is then ignored).
pub fn load_feature_rows(path: impl AsRef<Path>, expected: &[String]) -> Result<Matrix> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let mut records = reader.records();
    let header: Vec<String> = match records.next() {
        Some(r) => r
            .map_err(|e| csv_err(path, 0, e))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect(),
        None => Vec::new(),
    };
    let with_label = header.len() == expected.len() + 1
        && header.last().map(String::as_str) == Some(LABEL_COLUMN);
    let names = if with_label {
        &header[..expected.len()]
    } else {
        &header[..]
    };
    if names != expected {
        return Err(Error::HeaderMismatch {
            expected: expected.join(","),
            found: header.join(","),
        });
    }
    let width = header.len();
    let mut data = Vec::new();
    let mut n = 0;
    for (i, record) in records.enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(path, row, e))?;
        if record.len() != width {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (j, name) in expected.iter().enumerate() {
            data.push(parse_real(&record[j], row, name)?);
        }
        n += 1;
    }
    Matrix::new(n, expected.len(), data)
}

/// Writes `d` as CSV via a temporary file in the target directory followed by
/// an atomic rename.
pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().from_writer(&mut buf);
        let mut header: Vec<&str> = d.feature_names.iter().map(String::as_str).collect();
        header.push(LABEL_COLUMN);
        w.write_record(&header).map_err(|e| csv_err(path, 0, e))?;
        let mut fields = Vec::with_capacity(d.n_features() + 1);
        for (i, row) in d.features.iter_rows().enumerate() {
            fields.clear();
            fields.extend(row.iter().map(|v| v.to_string()));
            fields.push(d.labels[i].to_string());
            w.write_record(&fields).map_err(|e| csv_err(path, i + 1, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &buf)
}

/// Temp file + rename in the destination directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;

    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
