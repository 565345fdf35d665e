//! Command-line front end: run experiments from a TOML config, score the
//! resulting transcripts and manage the response cache.

pub mod config;
pub mod data;
pub mod plots;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mpt_core::backends::ResponseCache;

use crate::config::{ConfigError, Overrides, RunConfig};
use crate::report::{cmd_report, ReportOptions};
use crate::run::{cmd_run, RunError, RunStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_UNREACHABLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mpt", version, about = "Run and score multi-persona debiasing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute every configured method over the dataset.
    Run(RunArgs),
    /// Score a finished run directory.
    Report(ReportArgs),
    /// Check a config file without calling any backend.
    ValidateConfig(RunArgs),
    /// Inspect or compact a response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated method labels to keep, e.g. `direct-standard,mpt-r2`.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub replicates: Option<u32>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub subset_per_category: Option<usize>,
    /// Sets both the sampling and the decoding seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            methods: self.methods.clone(),
            replicates: self.replicates,
            concurrency: self.concurrency,
            subset_per_category: self.subset_per_category,
            seed: self.seed,
            output_dir: self.output_dir.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub run_dir: PathBuf,
    /// Two method labels, `A,B`, compared with a paired t-test over replicates.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub ttest: Option<Vec<String>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    Stats(CacheArgs),
    /// Drops duplicate and malformed lines.
    Gc(CacheArgs),
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    /// Cache file, or a run directory containing `cache/responses.jsonl`.
    pub path: PathBuf,
}

fn cache_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("cache/responses.jsonl")
    } else {
        path.to_owned()
    }
}

fn run_exit(error: &RunError) -> i32 {
    match error {
        RunError::Config(_) | RunError::Dataset(_) => EXIT_CONFIG,
        RunError::Backend(e) if e.is_unreachable() => EXIT_UNREACHABLE,
        _ => EXIT_PARTIAL,
    }
}

fn validate(args: &RunArgs) -> Result<String, ConfigError> {
    let base = args.config.parent().unwrap_or(Path::new("."));
    let resolved = RunConfig::load(&args.config)?.resolve(base, &args.overrides())?;
    let mut out = format!(
        "config ok: {} method(s), {} replicate(s), output {}\n",
        resolved.methods.len(),
        resolved.config.run.replicates,
        resolved.output_dir.display()
    );
    for spec in &resolved.methods {
        out.push_str(&format!("  {:<24} {} calls per instance\n", spec.label(), spec.call_budget()));
    }
    Ok(out)
}

/// Runs one parsed invocation and returns the process exit code.
pub async fn dispatch(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => match cmd_run(&args.config, &args.overrides()).await {
            Ok(summary) => {
                println!("{}", summary.describe());
                match summary.status() {
                    RunStatus::Success => EXIT_OK,
                    RunStatus::PartialFailure => EXIT_PARTIAL,
                    RunStatus::BackendUnreachable => EXIT_UNREACHABLE,
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                run_exit(&e)
            }
        },
        Command::ValidateConfig(args) => match validate(&args) {
            Ok(text) => {
                print!("{text}");
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
        },
        Command::Report(args) => {
            let ttest = match args.ttest.as_deref() {
                None => None,
                Some([a, b]) => Some((a.clone(), b.clone())),
                Some(_) => {
                    eprintln!("error: --ttest takes exactly two labels, A,B");
                    return EXIT_CONFIG;
                }
            };
            let options = ReportOptions {
                ttest,
                out_dir: args.out_dir,
            };
            match cmd_report(&args.run_dir, &options) {
                Ok((report, files)) => {
                    print!("{}", report::text_table(&report));
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_CONFIG
                }
            }
        }
        Command::Cache { action } => {
            let result = match &action {
                CacheAction::Stats(args) => ResponseCache::open(cache_file(&args.path)).map(|c| c.stats()),
                CacheAction::Gc(args) => ResponseCache::compact(&cache_file(&args.path)),
            };
            match result {
                Ok(s) => {
                    println!(
                        "{} entries, {} lines, {} malformed, {} bytes",
                        s.entries, s.lines, s.malformed_lines, s.bytes
                    );
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_CONFIG
                }
            }
        }
    }
}
