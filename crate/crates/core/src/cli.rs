//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid configuration or input, 2 runtime
//! failure. Diagnostics go to standard error; standard output carries only
//! machine-readable results (one path per line, or a YAML block).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::{keys_help, parse_override, validate_config, ExperimentConfig, CONFIG_DIR_ENV};
use crate::ensemble::{configure_attribute_guided, Attribute, ProfileStore};
use crate::error::{Error, Result};
use crate::pipeline::{emit_report, run_evaluation, run_image_job, run_video_job, EvaluationReport};

#[derive(Debug, Parser)]
#[command(name = "fdeid", about = "Face de-identification and evaluation", disable_version_flag = true)]
pub struct Cli {
    /// Increase log detail on standard error (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment YAML. Relative paths not found here are looked up in $FDEID_CONFIG_DIR.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a configuration key, e.g. `--set method.params.kernel_size=31`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, short)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// De-identify every image in the dataset manifest and evaluate.
    Deid(RunArgs),
    /// De-identify a frame sequence with detection skipping.
    Video(RunArgs),
    /// Evaluate outputs of a previous `deid` run.
    Eval(RunArgs),
    /// Print an attribute-guided `ensemble:` block.
    EnsembleConfig {
        /// Attributes to keep, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "")]
        preserve: Vec<String>,
        /// Attributes to remove, comma separated; must include `identity`.
        #[arg(long, value_delimiter = ',', default_value = "identity")]
        suppress: Vec<String>,
        /// Profile store JSON; the built-in benchmark profiles when omitted.
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Gallery filled into k-Same members.
        #[arg(long)]
        gallery: Option<PathBuf>,
    },
    /// Check a configuration; prints the resolved YAML with `--print`.
    Validate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        print: bool,
    },
    /// Print the version.
    Version,
}

/// The clap command with the accepted configuration keys appended to `--help`.
pub fn command() -> clap::Command {
    Cli::command().after_long_help(keys_help()).after_help(keys_help())
}

fn resolve_config_path(p: &Path) -> PathBuf {
    if p.is_relative() && !p.exists() {
        if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
            let candidate = Path::new(&dir).join(p);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    p.to_path_buf()
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let overrides = args
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    validate_config(resolve_config_path(&args.config), &overrides)
}

fn parse_attributes(names: &[String]) -> Result<Vec<Attribute>> {
    names.iter().filter(|s| !s.trim().is_empty()).map(|s| s.parse()).collect()
}

fn finish_run(
    cfg: &ExperimentConfig,
    report: EvaluationReport,
    started: Instant,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let n = report.records.len();
    let failed = report.failures().count();
    let secs = started.elapsed().as_secs_f64();
    let _ = writeln!(
        err,
        "processed {n} item(s), {failed} failed, in {secs:.2} s ({:.1} items/s)",
        n as f64 / secs.max(1e-9)
    );
    for r in report.failures() {
        let _ = writeln!(err, "  {}: {}", r.id, r.error.as_deref().unwrap_or("failed"));
    }
    let dir = cfg.resolve_path(&cfg.output_dir);
    let files = emit_report(&report, &dir)?;
    let _ = writeln!(out, "{}", dir.display());
    for f in files {
        let _ = writeln!(out, "{}", f.display());
    }
    Ok(())
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Deid(a) => {
            let cfg = load(&a.config)?;
            let started = Instant::now();
            let report = run_image_job(&cfg, jobs(a.jobs))?;
            finish_run(&cfg, report, started, out, err)
        }
        Command::Video(a) => {
            let cfg = load(&a.config)?;
            let started = Instant::now();
            let report = run_video_job(&cfg, jobs(a.jobs))?;
            finish_run(&cfg, report, started, out, err)
        }
        Command::Eval(a) => {
            let cfg = load(&a.config)?;
            let started = Instant::now();
            let report = run_evaluation(&cfg, jobs(a.jobs))?;
            finish_run(&cfg, report, started, out, err)
        }
        Command::EnsembleConfig {
            preserve,
            suppress,
            profiles,
            gallery,
        } => {
            let preserve = parse_attributes(&preserve)?;
            let suppress = parse_attributes(&suppress)?;
            let store = match &profiles {
                Some(p) => ProfileStore::load(resolve_config_path(p))?,
                None => ProfileStore::builtin(),
            };
            let mut spec = configure_attribute_guided(&preserve, &suppress, &store)?;
            if let Some(g) = &gallery {
                spec = spec.with_gallery(g);
            }
            let mut root = serde_yaml::Mapping::new();
            root.insert("ensemble".into(), spec.to_value());
            let yaml = serde_yaml::to_string(&root).map_err(|e| Error::Parse(e.to_string()))?;
            let _ = write!(out, "{yaml}");
            Ok(())
        }
        Command::Validate { config, print } => {
            let cfg = load(&config)?;
            let _ = writeln!(err, "configuration is valid (hash {})", cfg.hash());
            if print {
                let _ = write!(out, "{}", cfg.to_yaml());
            }
            Ok(())
        }
        Command::Version => {
            let _ = writeln!(out, "fdeid {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn jobs(requested: Option<usize>) -> usize {
    requested
        .filter(|&j| j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return 1;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    run(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
