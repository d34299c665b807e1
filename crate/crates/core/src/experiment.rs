//! Experiment configuration and the run, ablate and cache commands.
//!
//! A run writes one directory named `<UTC timestamp>-<config fingerprint>`
//! under `out_dir`. Existing directories are never reused.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{load_evaluation_set, CorpusError, Dataset, DatasetSpec};
use crate::eval::{
    ablation_report, compare_report, Averaging, DatasetMetrics, ReferenceError, ReferenceTable, ReportError,
    ReportFormat, RunResult,
};
use crate::gateway::{CacheStats, Gateway, GatewayError, ProviderKind, ResponseCache};
use crate::pipeline::{Ablation, Pipeline, PipelineConfig, RunMode, SentenceFailure};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("cannot read config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    fn config(field: impl Into<String>, message: impl ToString) -> Self {
        ExperimentError::Config {
            field: field.into(),
            message: message.to_string(),
        }
    }

    fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| ExperimentError::Io { context, source }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_concurrency() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Row label for this configuration in reports. Defaults by run mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub report_format: ReportFormat,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// `"builtin"` or a path to a reference table file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default)]
    pub averaging: Averaging,
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

impl ExperimentConfig {
    /// Parses a TOML document. Errors name the offending field path.
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig, ExperimentError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ExperimentError::config("<document>", e))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let message = e.into_inner().message().trim().to_string();
            ExperimentError::config(if field == "." { "<document>".into() } else { field }, message)
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Reads, parses and validates a config file. Relative paths inside it
    /// are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = ExperimentConfig::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase_paths(base);
        }
        Ok(cfg)
    }

    pub fn rebase_paths(&mut self, base: &Path) {
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut self.out_dir);
        if let Some(c) = &mut self.cache_dir {
            rebase(c);
        }
        for d in &mut self.datasets {
            rebase(&mut d.path);
        }
        if let Some(r) = &mut self.reference {
            if r != "builtin" && Path::new(r).is_relative() {
                *r = base.join(&*r).display().to_string();
            }
        }
        let ts = &mut self.pipeline.template_set;
        if ts != "default" && Path::new(ts).is_relative() {
            *ts = base.join(&*ts).display().to_string();
        }
        self.pipeline.provider.rebase_paths(base);
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.datasets.is_empty() {
            return Err(ExperimentError::config("datasets", "at least one dataset is required"));
        }
        let mut seen = BTreeSet::new();
        for (i, d) in self.datasets.iter().enumerate() {
            if !seen.insert(d.name) {
                return Err(ExperimentError::config(format!("datasets[{i}].name"), format!("{} listed twice", d.name)));
            }
            if !d.path.is_file() {
                return Err(ExperimentError::config(
                    format!("datasets[{i}].path"),
                    format!("{} does not exist", d.path.display()),
                ));
            }
        }
        if self.concurrency == 0 {
            return Err(ExperimentError::config("concurrency", "must be at least 1"));
        }
        if self.out_dir.exists() && !self.out_dir.is_dir() {
            return Err(ExperimentError::config("out_dir", format!("{} is not a directory", self.out_dir.display())));
        }
        self.pipeline.validate().map_err(|e| ExperimentError::config("pipeline", e))?;
        self.pipeline
            .provider
            .validate()
            .map_err(|e| ExperimentError::config("pipeline.provider", e))?;
        Ok(())
    }

    pub fn method_label(&self) -> String {
        self.method.clone().unwrap_or_else(|| default_method(self.pipeline.run_mode).to_string())
    }
}

fn default_method(mode: RunMode) -> &'static str {
    match mode {
        RunMode::Emobi => "Ours",
        RunMode::Separate => "Separate",
        RunMode::Together => "Together",
        RunMode::BaselineStandard => "Standard prompting",
        RunMode::BaselineCot => "CoT prompting",
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    /// Restricts the run to these datasets, which must be in the config.
    pub datasets: Vec<Dataset>,
    pub mode: Option<RunMode>,
    pub provider: Option<ProviderKind>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_verification_rounds: Option<u32>,
    pub concurrency: Option<usize>,
    pub report_format: Option<ReportFormat>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), ExperimentError> {
        if !self.datasets.is_empty() {
            for d in &self.datasets {
                if !cfg.datasets.iter().any(|s| s.name == *d) {
                    return Err(ExperimentError::config("--dataset", format!("{d} is not defined in the config")));
                }
            }
            cfg.datasets.retain(|s| self.datasets.contains(&s.name));
        }
        let p = &mut cfg.pipeline;
        if let Some(m) = self.mode {
            p.run_mode = m;
        }
        if let Some(k) = self.provider {
            p.provider.kind = k;
        }
        if let Some(m) = &self.model {
            p.decoding.model_id = m.clone();
        }
        if let Some(t) = self.temperature {
            p.decoding.temperature = t;
        }
        if let Some(r) = self.max_verification_rounds {
            p.max_verification_rounds = r;
        }
        if let Some(c) = self.concurrency {
            cfg.concurrency = c;
        }
        if let Some(f) = self.report_format {
            cfg.report_format = f;
        }
        if let Some(d) = &self.cache_dir {
            cfg.cache_dir = Some(d.clone());
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        Ok(())
    }
}

/// What a finished run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub result: RunResult,
    pub failures: usize,
    pub provider_calls: u64,
    pub report_path: PathBuf,
}

impl RunOutcome {
    /// 0 when every sentence completed, 2 when some failed.
    pub fn exit_code(&self) -> i32 {
        if self.failures == 0 {
            0
        } else {
            2
        }
    }
}

#[derive(Debug)]
pub struct AblateOutcome {
    pub dir: PathBuf,
    pub full: RunOutcome,
    pub ablations: Vec<(Ablation, RunOutcome)>,
    pub report_path: PathBuf,
}

impl AblateOutcome {
    pub fn exit_code(&self) -> i32 {
        std::iter::once(&self.full)
            .chain(self.ablations.iter().map(|(_, r)| r))
            .map(RunOutcome::exit_code)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Serialize)]
struct FailureLine<'a> {
    config_fingerprint: &'a str,
    #[serde(flatten)]
    failure: &'a SentenceFailure,
}

/// Creates a fresh directory `<parent>/<stem>`, adding a numeric suffix
/// rather than reusing an existing one.
fn fresh_dir(parent: &Path, stem: &str) -> Result<PathBuf, ExperimentError> {
    std::fs::create_dir_all(parent).map_err(ExperimentError::io(format!("creating {}", parent.display())))?;
    for n in 0u32.. {
        let name = if n == 0 { stem.to_string() } else { format!("{stem}-{n}") };
        let dir = parent.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(ExperimentError::io(format!("creating {}", dir.display()))(e)),
        }
    }
    unreachable!("u32 suffixes exhausted")
}

fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ExperimentError> {
    std::fs::write(path, contents).map_err(ExperimentError::io(format!("writing {}", path.display())))
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(ExperimentError::io(format!("creating {}", path.display())))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| ExperimentError::io(format!("writing {}", path.display()))(e.into()))?;
        w.write_all(b"\n").map_err(ExperimentError::io(format!("writing {}", path.display())))?;
    }
    w.flush().map_err(ExperimentError::io(format!("writing {}", path.display())))
}

fn build_gateway(cfg: &ExperimentConfig) -> Result<Gateway, ExperimentError> {
    let gateway = Gateway::new(&cfg.pipeline.provider)?;
    Ok(match &cfg.cache_dir {
        Some(dir) => gateway.with_cache(
            ResponseCache::open(dir).map_err(ExperimentError::io(format!("opening cache {}", dir.display())))?,
        ),
        None => gateway,
    })
}

fn load_reference(cfg: &ExperimentConfig) -> Result<Option<ReferenceTable>, ExperimentError> {
    cfg.reference.as_deref().map(ReferenceTable::resolve).transpose().map_err(Into::into)
}

fn with_fingerprint(report: String, format: ReportFormat, fingerprint: &str) -> String {
    match format {
        ReportFormat::Csv => report,
        _ => format!("{report}\nconfig fingerprint: {fingerprint}\n"),
    }
}

fn execute(
    cfg: &ExperimentConfig,
    method: &str,
    out_dir: &Path,
    reference: Option<&ReferenceTable>,
) -> Result<RunOutcome, ExperimentError> {
    let pipeline = Pipeline::from_config(cfg.pipeline.clone()).map_err(|e| ExperimentError::config("pipeline", e))?;
    let gateway = build_gateway(cfg)?;
    let fingerprint = pipeline.fingerprint().to_string();

    let mut traces = Vec::new();
    let mut failures = Vec::new();
    let mut datasets = Vec::new();
    for spec in &cfg.datasets {
        let records = load_evaluation_set(spec)?;
        log::info!("{}: {} sentences", spec.name, records.len());
        let batch = pipeline.run_batch(&gateway, &records, cfg.concurrency);
        datasets.push(DatasetMetrics::from_batch(spec.name, &batch, cfg.averaging));
        traces.extend(batch.traces);
        failures.extend(batch.failures);
    }

    let run_dir = fresh_dir(out_dir, &format!("{}-{}", timestamp(), fingerprint))?;
    let result = RunResult {
        run_id: run_dir.file_name().unwrap().to_string_lossy().into_owned(),
        config_fingerprint: fingerprint.clone(),
        method: method.to_string(),
        datasets,
    };
    let report = compare_report(std::slice::from_ref(&result), reference, cfg.report_format)?;
    let report = with_fingerprint(report, cfg.report_format, &fingerprint);

    write_file(&run_dir.join("config.toml"), cfg.to_toml_string().as_bytes())?;
    write_jsonl(&run_dir.join("traces.jsonl"), &traces)?;
    write_jsonl(
        &run_dir.join("failures.jsonl"),
        failures.iter().map(|failure| FailureLine {
            config_fingerprint: &fingerprint,
            failure,
        }),
    )?;
    let json = serde_json::to_vec_pretty(&result).expect("run result serializes");
    write_file(&run_dir.join("result.json"), &json)?;
    let report_path = run_dir.join(format!("report.{}", cfg.report_format.extension()));
    write_file(&report_path, report.as_bytes())?;

    log::info!(
        "{method}: {} traces, {} failures, {} provider calls -> {}",
        traces.len(),
        failures.len(),
        gateway.provider_calls(),
        run_dir.display()
    );
    Ok(RunOutcome {
        run_dir,
        result,
        failures: failures.len(),
        provider_calls: gateway.provider_calls(),
        report_path,
    })
}

/// Runs the configured pipeline over every dataset and writes traces,
/// failures, the run result and a report into a new run directory.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let reference = load_reference(cfg)?;
    execute(cfg, &cfg.method_label(), &cfg.out_dir, reference.as_ref())
}

/// Runs the full pipeline and each single-component ablation, then writes
/// the ablation report. All five runs live under one new directory.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<AblateOutcome, ExperimentError> {
    cfg.validate()?;
    if cfg.pipeline.run_mode != RunMode::Emobi {
        return Err(ExperimentError::config(
            "pipeline.run_mode",
            format!("ablations need run_mode \"emobi\", found {:?}", cfg.pipeline.run_mode.as_str()),
        ));
    }
    let fingerprint = Pipeline::from_config(cfg.pipeline.clone())
        .map_err(|e| ExperimentError::config("pipeline", e))?
        .fingerprint()
        .to_string();
    let dir = fresh_dir(&cfg.out_dir, &format!("{}-{}-ablate", timestamp(), fingerprint))?;

    let full = execute(cfg, &cfg.method_label(), &dir, None)?;
    let mut ablations = Vec::new();
    for ablation in Ablation::ALL {
        let mut sub = cfg.clone();
        sub.pipeline = cfg.pipeline.ablated(ablation);
        ablations.push((ablation, execute(&sub, ablation.label(), &dir, None)?));
    }
    let results: Vec<RunResult> = ablations.iter().map(|(_, r)| r.result.clone()).collect();
    let report = ablation_report(&full.result, &results, cfg.report_format)?;
    let report = with_fingerprint(report, cfg.report_format, &fingerprint);
    let report_path = dir.join(format!("ablation_report.{}", cfg.report_format.extension()));
    write_file(&report_path, report.as_bytes())?;
    Ok(AblateOutcome {
        dir,
        full,
        ablations,
        report_path,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheAction {
    Stats,
    Clear,
}

/// Reports, or clears and then reports, the response cache in `dir`.
/// The directory must exist.
pub fn cmd_cache(action: CacheAction, dir: &Path) -> Result<CacheStats, ExperimentError> {
    if !dir.is_dir() {
        return Err(ExperimentError::Io {
            context: format!("cache directory {}", dir.display()),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "does not exist"),
        });
    }
    let cache = ResponseCache::open(dir).map_err(ExperimentError::io(format!("opening {}", dir.display())))?;
    if action == CacheAction::Clear {
        cache.clear().map_err(ExperimentError::io(format!("clearing {}", dir.display())))?;
    }
    cache.stats().map_err(ExperimentError::io(format!("reading {}", dir.display())))
}
