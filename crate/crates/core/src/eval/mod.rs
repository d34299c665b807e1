//! Scoring, run summaries and comparison reports.

mod metrics;
mod reference;
mod report;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::device::Device;
use crate::pipeline::BatchOutput;

pub use metrics::{harmonic, metrics, metrics_with, score, Averaging, ConfusionMatrix, ScoreError, TaskMetrics};
pub use reference::{Metric, ReferenceEntry, ReferenceError, ReferenceTable, Role, TableKind};
pub use report::{ablation_report, compare_report, format_tenths, to_tenths, ReportError, ReportFormat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub dataset: Dataset,
    pub hyperbole: TaskMetrics<f64>,
    pub metaphor: TaskMetrics<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperbole_confusion: Option<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metaphor_confusion: Option<ConfusionMatrix>,
    #[serde(default)]
    pub scored: usize,
    #[serde(default)]
    pub failures: usize,
}

impl DatasetMetrics {
    pub fn task(&self, device: Device) -> &TaskMetrics<f64> {
        match device {
            Device::Hyperbole => &self.hyperbole,
            Device::Metaphor => &self.metaphor,
        }
    }

    /// Scores the successful traces of a batch against their gold labels.
    /// Failed sentences are counted but not scored.
    pub fn from_batch(dataset: Dataset, batch: &BatchOutput, averaging: Averaging) -> DatasetMetrics {
        let cm = |device: Device| {
            let (preds, golds): (Vec<u8>, Vec<u8>) = batch
                .traces
                .iter()
                .map(|t| {
                    let gold = match device {
                        Device::Hyperbole => t.record.hyperbole_gold,
                        Device::Metaphor => t.record.metaphor_gold,
                    };
                    (t.prediction(device).bit(), gold.bit())
                })
                .unzip();
            score(&preds, &golds).expect("labels are binary and paired")
        };
        let h = cm(Device::Hyperbole);
        let m = cm(Device::Metaphor);
        DatasetMetrics {
            dataset,
            hyperbole: metrics_with(&h, averaging),
            metaphor: metrics_with(&m, averaging),
            hyperbole_confusion: Some(h),
            metaphor_confusion: Some(m),
            scored: batch.traces.len(),
            failures: batch.failures.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub config_fingerprint: String,
    /// Row label in reports.
    pub method: String,
    pub datasets: Vec<DatasetMetrics>,
}

impl RunResult {
    pub fn dataset(&self, dataset: Dataset) -> Option<&DatasetMetrics> {
        self.datasets.iter().find(|d| d.dataset == dataset)
    }

    pub fn dataset_set(&self) -> BTreeSet<Dataset> {
        self.datasets.iter().map(|d| d.dataset).collect()
    }

    /// Every dataset must appear exactly once.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for d in &self.datasets {
            if !seen.insert(d.dataset) {
                return Err(format!("dataset {} appears more than once in run {}", d.dataset, self.run_id));
            }
        }
        Ok(())
    }
}
