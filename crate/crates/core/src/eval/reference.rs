//! Published comparison numbers, keyed by (table, dataset, method, task, metric).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetMetrics, RunResult, TaskMetrics};
use crate::corpus::Dataset;
use crate::device::Device;

const BUILTIN: &str = include_str!("../../data/reference_tables.json");

#[derive(Debug, thiserror::Error)]
pub enum ReferenceError {
    #[error("cannot read reference table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("reference table is malformed: {0}")]
    Malformed(String),
    #[error("duplicate reference cell {0}")]
    Duplicate(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Main,
    Ablation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    P,
    R,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::P, Metric::R, Metric::F1];

    pub fn of(self, m: &TaskMetrics<f64>) -> f64 {
        match self {
            Metric::P => m.precision,
            Metric::R => m.recall,
            Metric::F1 => m.f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Baseline,
    Proposed,
    Ablation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceEntry {
    pub table: TableKind,
    pub dataset: Dataset,
    pub method: String,
    pub role: Role,
    pub task: Device,
    pub metric: Metric,
    /// Percent, as published.
    pub value: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceFile {
    #[serde(default)]
    provenance: String,
    entries: Vec<ReferenceEntry>,
}

type CellKey = (TableKind, Dataset, String, Device, Metric);

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTable {
    pub provenance: String,
    entries: Vec<ReferenceEntry>,
    cells: BTreeMap<CellKey, f64>,
}

impl ReferenceTable {
    pub fn builtin() -> ReferenceTable {
        ReferenceTable::parse(BUILTIN).expect("built-in reference table is valid")
    }

    pub fn load(path: &Path) -> Result<ReferenceTable, ReferenceError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReferenceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ReferenceTable::parse(&text)
    }

    /// `"builtin"` or a path to a reference file.
    pub fn resolve(id: &str) -> Result<ReferenceTable, ReferenceError> {
        if id == "builtin" {
            Ok(ReferenceTable::builtin())
        } else {
            ReferenceTable::load(Path::new(id))
        }
    }

    pub fn parse(text: &str) -> Result<ReferenceTable, ReferenceError> {
        let file: ReferenceFile =
            serde_json::from_str(text).map_err(|e| ReferenceError::Malformed(e.to_string()))?;
        let mut cells = BTreeMap::new();
        for e in &file.entries {
            if !e.value.is_finite() || !(0.0..=100.0).contains(&e.value) {
                return Err(ReferenceError::Malformed(format!(
                    "{} {} {} {:?} value {} outside [0, 100]",
                    e.dataset, e.method, e.task, e.metric, e.value
                )));
            }
            let key = (e.table, e.dataset, e.method.clone(), e.task, e.metric);
            if cells.insert(key, e.value).is_some() {
                return Err(ReferenceError::Duplicate(format!(
                    "{:?}/{}/{}/{}/{:?}",
                    e.table, e.dataset, e.method, e.task, e.metric
                )));
            }
        }
        Ok(ReferenceTable {
            provenance: file.provenance,
            entries: file.entries,
            cells,
        })
    }

    pub fn entries(&self) -> &[ReferenceEntry] {
        &self.entries
    }

    pub fn value(&self, table: TableKind, dataset: Dataset, method: &str, task: Device, metric: Metric) -> Option<f64> {
        self.cells
            .get(&(table, dataset, method.to_string(), task, metric))
            .copied()
    }

    /// Methods with `role` in `table` for `dataset`, in file order.
    pub fn methods(&self, table: TableKind, dataset: Dataset, role: Role) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if e.table == table && e.dataset == dataset && e.role == role && !out.contains(&e.method) {
                out.push(e.method.clone());
            }
        }
        out
    }

    pub fn datasets(&self, table: TableKind) -> Vec<Dataset> {
        let mut out: Vec<Dataset> = self.entries.iter().filter(|e| e.table == table).map(|e| e.dataset).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Rebuilds one method's rows as a [`RunResult`]. Values are converted
    /// from percent to fractions; missing metrics are zero.
    pub fn as_run(&self, table: TableKind, method: &str) -> RunResult {
        let datasets = self
            .datasets(table)
            .into_iter()
            .filter(|&d| Device::BOTH.iter().any(|&t| Metric::ALL.iter().any(|&m| self.value(table, d, method, t, m).is_some())))
            .map(|dataset| {
                let task = |t: Device| {
                    let get = |m: Metric| self.value(table, dataset, method, t, m).unwrap_or(0.0) / 100.0;
                    TaskMetrics {
                        precision: get(Metric::P),
                        recall: get(Metric::R),
                        f1: get(Metric::F1),
                        support: 0,
                        degenerate: false,
                    }
                };
                DatasetMetrics {
                    dataset,
                    hyperbole: task(Device::Hyperbole),
                    metaphor: task(Device::Metaphor),
                    hyperbole_confusion: None,
                    metaphor_confusion: None,
                    scored: 0,
                    failures: 0,
                }
            })
            .collect();
        RunResult {
            run_id: format!("reference:{method}"),
            config_fingerprint: "reference".into(),
            method: method.to_string(),
            datasets,
        }
    }
}
