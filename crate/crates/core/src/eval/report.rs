//! Text, CSV and Markdown tables for comparison and ablation reports.
//!
//! All numbers are shown as percentages with one decimal. Deltas are
//! computed on the displayed values (integer tenths of a percent), so a
//! reader can recompute every delta from the printed cells.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Metric, ReferenceTable, Role, RunResult, TableKind};
use crate::corpus::Dataset;
use crate::device::Device;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no run results to report")]
    Empty,
    #[error("run {0} is invalid: {1}")]
    InvalidRun(String, String),
    #[error("reference table has no baselines for {dataset}")]
    MissingBaselines { dataset: Dataset },
    #[error("reference table lacks {metric:?} for {method} / {dataset} / {task}")]
    MissingCell {
        dataset: Dataset,
        method: String,
        task: Device,
        metric: Metric,
    },
    #[error("ablation run {method} covers {found:?}, expected {expected:?}")]
    DatasetMismatch {
        method: String,
        expected: Vec<Dataset>,
        found: Vec<Dataset>,
    },
    #[error("csv output failed: {0}")]
    Csv(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Text => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}` (expected text, csv or markdown)")),
        }
    }
}

/// A fraction in [0, 1] as integer tenths of a percent.
pub fn to_tenths(fraction: f64) -> i64 {
    (fraction * 1000.0).round() as i64
}

/// `908` -> `"90.8"`, `-46` -> `"-4.6"`.
pub fn format_tenths(t: i64) -> String {
    let sign = if t < 0 { "-" } else { "" };
    format!("{sign}{}.{}", t.abs() / 10, t.abs() % 10)
}

fn signed_tenths(t: i64, negative_zero: bool) -> String {
    if t > 0 || (t == 0 && !negative_zero) {
        format!("+{}", format_tenths(t))
    } else {
        format!("-{}", format_tenths(t.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mark {
    None,
    Best,
    Second,
}

struct Table {
    title: String,
    header: Vec<String>,
    rows: Vec<Vec<(String, Mark)>>,
}

impl Table {
    fn text(&self, out: &mut String) {
        let cols = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (i, (c, _)) in row.iter().enumerate() {
                widths[i] = widths[i].max(c.chars().count());
            }
        }
        out.push_str(&self.title);
        out.push('\n');
        let line = |cells: Vec<&str>, out: &mut String| {
            let mut s = String::new();
            for (i, c) in cells.iter().enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                let pad = widths[i] - c.chars().count();
                if i == 0 {
                    s.push_str(c);
                    s.push_str(&" ".repeat(pad));
                } else {
                    s.push_str(&" ".repeat(pad));
                    s.push_str(c);
                }
            }
            out.push_str(s.trim_end());
            out.push('\n');
        };
        line(self.header.iter().map(String::as_str).collect(), out);
        let rule: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for row in &self.rows {
            line(row.iter().map(|(c, _)| c.as_str()).collect(), out);
        }
    }

    fn markdown(&self, out: &mut String) {
        out.push_str(&format!("### {}\n\n", self.title));
        out.push_str(&format!("| {} |\n", self.header.join(" | ")));
        let sep: Vec<&str> = (0..self.header.len()).map(|i| if i == 0 { "---" } else { "---:" }).collect();
        out.push_str(&format!("| {} |\n", sep.join(" | ")));
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|(c, m)| match m {
                    Mark::Best => format!("**{c}**"),
                    Mark::Second => format!("<u>{c}</u>"),
                    Mark::None => c.clone(),
                })
                .collect();
            out.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
    }
}

fn render(tables: &[Table], format: ReportFormat, csv_rows: Vec<Vec<String>>) -> Result<String, ReportError> {
    let mut out = String::new();
    match format {
        ReportFormat::Text => {
            for (i, t) in tables.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                t.text(&mut out);
            }
        }
        ReportFormat::Markdown => {
            for (i, t) in tables.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                t.markdown(&mut out);
            }
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in csv_rows {
                w.write_record(&r).map_err(|e| ReportError::Csv(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.to_string()))?;
            out = String::from_utf8(bytes).map_err(|e| ReportError::Csv(e.to_string()))?;
        }
    }
    Ok(out)
}

const CELLS: [(Device, Metric); 6] = [
    (Device::Hyperbole, Metric::P),
    (Device::Hyperbole, Metric::R),
    (Device::Hyperbole, Metric::F1),
    (Device::Metaphor, Metric::P),
    (Device::Metaphor, Metric::R),
    (Device::Metaphor, Metric::F1),
];

fn header_cells() -> Vec<String> {
    let mut h = vec!["Method".to_string()];
    for (d, m) in CELLS {
        h.push(format!("{} {:?}", if d == Device::Hyperbole { "Hyp" } else { "Met" }, m));
    }
    h
}

fn mark_columns(rows: &mut [Vec<(String, Mark)>], values: &[Option<[i64; 6]>]) {
    for col in 0..6 {
        let distinct: BTreeSet<i64> = values.iter().flatten().map(|v| v[col]).collect();
        let mut desc = distinct.into_iter().rev();
        let best = desc.next();
        let second = desc.next();
        for (row, v) in rows.iter_mut().zip(values) {
            if let Some(v) = v {
                row[col + 1].1 = if Some(v[col]) == best {
                    Mark::Best
                } else if Some(v[col]) == second {
                    Mark::Second
                } else {
                    Mark::None
                };
            }
        }
    }
}

/// One table per dataset with a row per run. With a reference, the
/// published baselines are listed first and each run gets a delta row
/// against the best baseline of every column.
pub fn compare_report(
    results: &[RunResult],
    reference: Option<&ReferenceTable>,
    format: ReportFormat,
) -> Result<String, ReportError> {
    if results.is_empty() {
        return Err(ReportError::Empty);
    }
    for r in results {
        r.validate().map_err(|e| ReportError::InvalidRun(r.run_id.clone(), e))?;
    }
    let datasets: BTreeSet<Dataset> = results.iter().flat_map(|r| r.dataset_set()).collect();

    let mut tables = Vec::new();
    let mut csv_rows = vec![{
        let mut h = vec!["dataset".to_string(), "method".into(), "row".into()];
        for (d, m) in CELLS {
            h.push(format!("{}_{}", d.as_str(), format!("{m:?}").to_lowercase()));
        }
        h
    }];

    for dataset in datasets {
        let mut rows: Vec<Vec<(String, Mark)>> = Vec::new();
        // values of rows that compete for best/second marks
        let mut values: Vec<Option<[i64; 6]>> = Vec::new();
        let push_values = |label: &str, kind: &str, v: [i64; 6], rows: &mut Vec<Vec<(String, Mark)>>, values: &mut Vec<Option<[i64; 6]>>, csv_rows: &mut Vec<Vec<String>>| {
            let mut row = vec![(label.to_string(), Mark::None)];
            row.extend(v.iter().map(|&t| (format_tenths(t), Mark::None)));
            rows.push(row);
            values.push(Some(v));
            let mut c = vec![dataset.display_name().to_string(), label.to_string(), kind.to_string()];
            c.extend(v.iter().map(|&t| format_tenths(t)));
            csv_rows.push(c);
        };

        let mut best: Option<[i64; 6]> = None;
        if let Some(reference) = reference {
            let baselines = reference.methods(TableKind::Main, dataset, Role::Baseline);
            if baselines.is_empty() {
                return Err(ReportError::MissingBaselines { dataset });
            }
            let mut max = [i64::MIN; 6];
            for method in &baselines {
                let mut v = [0i64; 6];
                for (i, (task, metric)) in CELLS.into_iter().enumerate() {
                    let pct = reference.value(TableKind::Main, dataset, method, task, metric).ok_or_else(|| {
                        ReportError::MissingCell {
                            dataset,
                            method: method.clone(),
                            task,
                            metric,
                        }
                    })?;
                    v[i] = (pct * 10.0).round() as i64;
                    max[i] = max[i].max(v[i]);
                }
                push_values(method, "baseline", v, &mut rows, &mut values, &mut csv_rows);
            }
            best = Some(max);
        }

        for run in results {
            let Some(dm) = run.dataset(dataset) else { continue };
            let mut v = [0i64; 6];
            for (i, (task, metric)) in CELLS.into_iter().enumerate() {
                v[i] = to_tenths(metric.of(dm.task(task)));
            }
            push_values(&run.method, "result", v, &mut rows, &mut values, &mut csv_rows);
            if let Some(best) = best {
                let deltas: Vec<i64> = (0..6).map(|i| v[i] - best[i]).collect();
                let mut row = vec![("  vs best baseline".to_string(), Mark::None)];
                row.extend(deltas.iter().map(|&d| (format!("({}%)", signed_tenths(d, false)), Mark::None)));
                rows.push(row);
                values.push(None);
                let mut c = vec![dataset.display_name().to_string(), run.method.clone(), "delta".into()];
                c.extend(deltas.iter().map(|&d| signed_tenths(d, false)));
                csv_rows.push(c);
            }
        }
        mark_columns(&mut rows, &values);
        tables.push(Table {
            title: dataset.display_name().to_string(),
            header: header_cells(),
            rows,
        });
    }
    render(&tables, format, csv_rows)
}

/// F1 of the full system and of each ablation, one column per dataset and
/// task. Ablation cells read `86.2 (-4.6)`, the change against the full
/// system.
pub fn ablation_report(full: &RunResult, ablations: &[RunResult], format: ReportFormat) -> Result<String, ReportError> {
    full.validate().map_err(|e| ReportError::InvalidRun(full.run_id.clone(), e))?;
    let expected = full.dataset_set();
    if expected.is_empty() {
        return Err(ReportError::Empty);
    }
    for a in ablations {
        a.validate().map_err(|e| ReportError::InvalidRun(a.run_id.clone(), e))?;
        if a.dataset_set() != expected {
            return Err(ReportError::DatasetMismatch {
                method: a.method.clone(),
                expected: expected.iter().copied().collect(),
                found: a.dataset_set().into_iter().collect(),
            });
        }
    }
    let columns: Vec<(Dataset, Device)> = expected
        .iter()
        .flat_map(|&d| Device::BOTH.into_iter().map(move |t| (d, t)))
        .collect();
    let f1 = |run: &RunResult, (d, t): (Dataset, Device)| to_tenths(run.dataset(d).expect("validated").task(t).f1);

    let mut header = vec!["Method".to_string()];
    header.extend(columns.iter().map(|(d, t)| format!("{} {}", d.display_name(), if *t == Device::Hyperbole { "Hyp" } else { "Met" })));

    let mut rows = vec![{
        let mut r = vec![(full.method.clone(), Mark::None)];
        r.extend(columns.iter().map(|&c| (format_tenths(f1(full, c)), Mark::None)));
        r
    }];
    let mut csv_rows = vec![vec![
        "method".to_string(),
        "dataset".into(),
        "task".into(),
        "f1".into(),
        "delta".into(),
    ]];
    for &c in &columns {
        csv_rows.push(vec![
            full.method.clone(),
            c.0.display_name().into(),
            c.1.as_str().into(),
            format_tenths(f1(full, c)),
            String::new(),
        ]);
    }
    for a in ablations {
        let mut r = vec![(a.method.clone(), Mark::None)];
        for &c in &columns {
            let v = f1(a, c);
            let d = v - f1(full, c);
            r.push((format!("{} ({})", format_tenths(v), signed_tenths(d, true)), Mark::None));
            csv_rows.push(vec![
                a.method.clone(),
                c.0.display_name().into(),
                c.1.as_str().into(),
                format_tenths(v),
                signed_tenths(d, true),
            ]);
        }
        rows.push(r);
    }
    let table = Table {
        title: "Ablation (F1)".into(),
        header,
        rows,
    };
    render(&[table], format, csv_rows)
}
