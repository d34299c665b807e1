use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use figlens::corpus::Dataset;
use figlens::eval::ReportFormat;
use figlens::experiment::{cmd_ablate, cmd_cache, cmd_run, CacheAction, ExperimentConfig, Overrides};
use figlens::gateway::ProviderKind;
use figlens::pipeline::RunMode;

/// Hyperbole and metaphor detection experiments over LLM providers.
#[derive(Parser)]
#[command(name = "figlens", version)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured pipeline and write traces, results and a report.
    Run(RunArgs),
    /// Run the full pipeline plus the four single-component ablations.
    Ablate(RunArgs),
    /// Inspect or clear the response cache.
    Cache {
        #[arg(value_enum)]
        action: CacheCmd,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Take the cache directory from this config file.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CacheCmd {
    Stats,
    Clear,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Restrict to these datasets (repeatable).
    #[arg(long = "dataset")]
    datasets: Vec<Dataset>,
    #[arg(long)]
    mode: Option<RunMode>,
    #[arg(long)]
    provider: Option<ProviderKind>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_verification_rounds: Option<u32>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    report_format: Option<ReportFormat>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        Overrides {
            datasets: self.datasets.clone(),
            mode: self.mode,
            provider: self.provider,
            model: self.model.clone(),
            temperature: self.temperature,
            max_verification_rounds: self.max_verification_rounds,
            concurrency: self.concurrency,
            report_format: self.report_format,
            cache_dir: self.cache_dir.clone(),
            out_dir: self.out_dir.clone(),
        }
        .apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let out = cmd_run(&cfg)?;
            print!("{}", std::fs::read_to_string(&out.report_path)?);
            println!("run directory: {}", out.run_dir.display());
            println!("provider calls: {}", out.provider_calls);
            if out.failures > 0 {
                println!("failed sentences: {} (see failures.jsonl)", out.failures);
            }
            Ok(out.exit_code())
        }
        Command::Ablate(args) => {
            let cfg = args.load()?;
            let out = cmd_ablate(&cfg)?;
            print!("{}", std::fs::read_to_string(&out.report_path)?);
            println!("ablation directory: {}", out.dir.display());
            Ok(out.exit_code())
        }
        Command::Cache {
            action,
            cache_dir,
            config,
        } => {
            let dir = match (cache_dir, config) {
                (Some(d), _) => d,
                (None, Some(c)) => ExperimentConfig::load(&c)?
                    .cache_dir
                    .with_context(|| format!("{} sets no cache_dir", c.display()))?,
                (None, None) => bail!("pass --cache-dir or --config"),
            };
            let action = match action {
                CacheCmd::Stats => CacheAction::Stats,
                CacheCmd::Clear => CacheAction::Clear,
            };
            let stats = cmd_cache(action, &dir)?;
            println!("entries: {}", stats.entries);
            println!("bytes: {}", stats.bytes);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    // exit code 2 is reserved for runs that completed with failures, so
    // argument errors exit with 1 like every other fatal error
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
