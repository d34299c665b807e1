//! Benchmark corpus ingestion.
//!
//! The four corpora ship in different delimited layouts. A [`ColumnFormat`]
//! maps each layout onto [`SentenceRecord`] so one loader serves them all.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read dataset file {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited input at line {line}: {source}")]
    Csv {
        line: u64,
        #[source]
        source: csv::Error,
    },
    #[error("line {line}: expected {expected} columns, found {found}")]
    MalformedRow { line: u64, expected: usize, found: usize },
    #[error("line {line}: cannot normalize label value {value:?} in column {column}")]
    BadLabel { line: u64, column: String, value: String },
    #[error("line {line}: sentence text is empty")]
    EmptyText { line: u64 },
    #[error("line {line}: duplicate record id {id:?}")]
    DuplicateId { line: u64, id: String },
    #[error("column {0} is not present in the file header")]
    UnknownColumn(String),
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
    #[error("canonical record on line {line}: {message}")]
    Canonical { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The benchmark a record came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataset {
    #[serde(rename = "HYPO")]
    Hypo,
    #[serde(rename = "HYPO_L", alias = "HYPO-L")]
    HypoL,
    #[serde(rename = "LCC")]
    Lcc,
    #[serde(rename = "TROFI", alias = "TroFi")]
    Trofi,
}

impl Dataset {
    pub const ALL: [Dataset; 4] = [Dataset::Hypo, Dataset::HypoL, Dataset::Lcc, Dataset::Trofi];

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Hypo => "HYPO",
            Dataset::HypoL => "HYPO_L",
            Dataset::Lcc => "LCC",
            Dataset::Trofi => "TROFI",
        }
    }

    /// Name as printed in report headers.
    pub fn display_name(self) -> &'static str {
        match self {
            Dataset::Hypo => "HYPO",
            Dataset::HypoL => "HYPO-L",
            Dataset::Lcc => "LCC",
            Dataset::Trofi => "TroFi",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "HYPO" => Ok(Dataset::Hypo),
            "HYPO_L" => Ok(Dataset::HypoL),
            "LCC" => Ok(Dataset::Lcc),
            "TROFI" => Ok(Dataset::Trofi),
            _ => Err(format!("unknown dataset {s:?}")),
        }
    }
}

/// Binary gold or predicted label. Serialized as `0` / `1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Label> {
        match bit {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    /// Normalizes a textual label cell. The accepted vocabulary is closed:
    /// `1/0`, `yes/no`, `true/false`, case-insensitive.
    pub fn normalize(raw: &str) -> Option<Label> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "1" | "yes" | "true" => Some(Label::Positive),
            "0" | "no" | "false" => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn as_word(self) -> &'static str {
        match self {
            Label::Negative => "no",
            Label::Positive => "yes",
        }
    }
}

impl From<bool> for Label {
    fn from(b: bool) -> Self {
        if b {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.bit())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let bit = u8::deserialize(deserializer)?;
        Label::from_bit(bit)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {bit}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub text: String,
    pub hyperbole_gold: Label,
    pub metaphor_gold: Label,
    pub source_dataset: Dataset,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Comma,
    Tab,
}

impl Delimiter {
    fn byte(self) -> u8 {
        match self {
            Delimiter::Comma => b',',
            Delimiter::Tab => b'\t',
        }
    }
}

/// A column addressed either by header name or by zero-based position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "#{i}"),
            ColumnRef::Name(n) => write!(f, "{n:?}"),
        }
    }
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        ColumnRef::Name(s.to_string())
    }
}

impl From<usize> for ColumnRef {
    fn from(i: usize) -> Self {
        ColumnRef::Index(i)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnFormat {
    pub delimiter: Delimiter,
    pub has_header: bool,
    pub quoting: bool,
    /// When absent, ids are the 1-based data row numbers.
    pub id: Option<ColumnRef>,
    pub text: ColumnRef,
    pub hyperbole: ColumnRef,
    pub metaphor: ColumnRef,
}

impl Default for ColumnFormat {
    fn default() -> Self {
        ColumnFormat {
            delimiter: Delimiter::Comma,
            has_header: true,
            quoting: true,
            id: Some("id".into()),
            text: "text".into(),
            hyperbole: "hyperbole".into(),
            metaphor: "metaphor".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, test: f64) -> Result<Self, CorpusError> {
        let f = SplitFractions { train, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, v) in [("train", self.train), ("test", self.test)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(CorpusError::InvalidSplit(format!(
                    "{name} fraction {v} outside [0, 1]"
                )));
            }
        }
        if (self.train + self.test - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidSplit(format!(
                "fractions sum to {}, expected 1",
                self.train + self.test
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(flatten)]
    pub fractions: SplitFractions,
    pub seed: u64,
    /// Which partition to evaluate on.
    #[serde(default)]
    pub use_partition: Partition,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    #[default]
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: Dataset,
    pub path: PathBuf,
    #[serde(default)]
    pub format: ColumnFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
}

/// Loads every row of the dataset file in file order.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<SentenceRecord>, CorpusError> {
    let file = std::fs::File::open(&spec.path).map_err(|source| CorpusError::Unreadable {
        path: spec.path.clone(),
        source,
    })?;
    parse_records(file, spec.name, &spec.format)
}

/// Loads the dataset and, when the spec carries a split, returns the
/// configured partition.
pub fn load_evaluation_set(spec: &DatasetSpec) -> Result<Vec<SentenceRecord>, CorpusError> {
    let records = load_dataset(spec)?;
    match &spec.split {
        None => Ok(records),
        Some(split) => {
            let (train, test) = split_dataset(&records, split.fractions, split.seed)?;
            Ok(match split.use_partition {
                Partition::Train => train,
                Partition::Test => test,
            })
        }
    }
}

struct ResolvedColumns {
    width: usize,
    id: Option<usize>,
    text: usize,
    hyperbole: usize,
    metaphor: usize,
}

fn resolve(
    col: &ColumnRef,
    header: Option<&csv::StringRecord>,
    width: usize,
) -> Result<usize, CorpusError> {
    match col {
        ColumnRef::Index(i) if *i < width => Ok(*i),
        ColumnRef::Index(_) => Err(CorpusError::UnknownColumn(col.to_string())),
        ColumnRef::Name(name) => header
            .and_then(|h| h.iter().position(|c| c.trim() == name))
            .ok_or_else(|| CorpusError::UnknownColumn(col.to_string())),
    }
}

pub fn parse_records<R: Read>(
    reader: R,
    dataset: Dataset,
    format: &ColumnFormat,
) -> Result<Vec<SentenceRecord>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter.byte())
        .has_headers(false)
        .flexible(true)
        .quoting(format.quoting)
        .from_reader(reader);

    let mut rows = rdr.records();
    let mut columns: Option<ResolvedColumns> = None;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut data_row = 0usize;

    let csv_err = |e: csv::Error| CorpusError::Csv {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        source: e,
    };

    if format.has_header {
        match rows.next() {
            None => return Ok(records),
            Some(header) => {
                let header = header.map_err(csv_err)?;
                columns = Some(resolve_all(format, Some(&header), header.len())?);
            }
        }
    }

    for row in rows {
        let row = row.map_err(csv_err)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let cols = match &columns {
            Some(c) => c,
            None => columns.insert(resolve_all(format, None, row.len())?),
        };
        if row.len() != cols.width {
            return Err(CorpusError::MalformedRow {
                line,
                expected: cols.width,
                found: row.len(),
            });
        }
        data_row += 1;

        let text = row[cols.text].trim();
        if text.is_empty() {
            return Err(CorpusError::EmptyText { line });
        }
        let label = |idx: usize, col: &ColumnRef| {
            Label::normalize(&row[idx]).ok_or_else(|| CorpusError::BadLabel {
                line,
                column: col.to_string(),
                value: row[idx].to_string(),
            })
        };
        let hyperbole_gold = label(cols.hyperbole, &format.hyperbole)?;
        let metaphor_gold = label(cols.metaphor, &format.metaphor)?;
        let id = match cols.id {
            Some(i) => row[i].trim().to_string(),
            None => data_row.to_string(),
        };
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line, id });
        }
        records.push(SentenceRecord {
            id,
            text: text.to_string(),
            hyperbole_gold,
            metaphor_gold,
            source_dataset: dataset,
        });
    }
    Ok(records)
}

fn resolve_all(
    format: &ColumnFormat,
    header: Option<&csv::StringRecord>,
    width: usize,
) -> Result<ResolvedColumns, CorpusError> {
    Ok(ResolvedColumns {
        width,
        id: format
            .id
            .as_ref()
            .map(|c| resolve(c, header, width))
            .transpose()?,
        text: resolve(&format.text, header, width)?,
        hyperbole: resolve(&format.hyperbole, header, width)?,
        metaphor: resolve(&format.metaphor, header, width)?,
    })
}

/// Seeded shuffle split. Each partition keeps the input order of its members.
pub fn split_dataset(
    records: &[SentenceRecord],
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Vec<SentenceRecord>, Vec<SentenceRecord>), CorpusError> {
    fractions.validate()?;
    let n = records.len();
    let n_train = ((n as f64) * fractions.train).round().min(n as f64) as usize;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&train_idx), pick(&test_idx)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub count: usize,
    pub hyperbole_positive: usize,
    pub metaphor_positive: usize,
    /// `None` when the collection is empty.
    pub hyperbole_rate: Option<f64>,
    pub metaphor_rate: Option<f64>,
}

pub fn dataset_stats(records: &[SentenceRecord]) -> DatasetStats {
    let count = records.len();
    let hyperbole_positive = records.iter().filter(|r| r.hyperbole_gold.is_positive()).count();
    let metaphor_positive = records.iter().filter(|r| r.metaphor_gold.is_positive()).count();
    let rate = |k: usize| (count > 0).then(|| k as f64 / count as f64);
    DatasetStats {
        count,
        hyperbole_positive,
        metaphor_positive,
        hyperbole_rate: rate(hyperbole_positive),
        metaphor_rate: rate(metaphor_positive),
    }
}

/// Writes records as one JSON object per line.
pub fn write_canonical<W: Write>(records: &[SentenceRecord], mut out: W) -> Result<(), CorpusError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_canonical<R: BufRead>(input: R) -> Result<Vec<SentenceRecord>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Canonical {
                line: line_no,
                message: e.to_string(),
            })?;
        if rec.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { line: line_no });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: rec.id });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn dump_canonical(records: &[SentenceRecord], path: &Path) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path)?;
    write_canonical(records, std::io::BufWriter::new(file))
}
