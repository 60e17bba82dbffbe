//! `ticktack`: calendar conversion, temporal encodings, corpus profiling,
//! and the pretrain / Fisher / train / eval pipeline for toy models.
//!
//! Exit status is 0 on success, 2 for usage and configuration errors, and
//! 1 for runtime failures.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use toml::Value;

use config::{RunConfig, Source};
use output::Artifacts;

/// A problem with the command line or configuration (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(
    name = "ticktack",
    version,
    about = "Sexagenary-cycle temporal encodings and temporal-alignment training for toy language models",
    after_long_help = RunConfig::key_help(),
)]
struct Cli {
    /// TOML config file; sections and keys as listed below.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set training.epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Exact output directory (default: <paths.out_root>/<command>).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads; 1 gives the reference single-threaded schedule.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, value_name = "FILE")]
    corpus: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    general: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    vocab: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    checkpoint: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    fisher: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    items: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    pool: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print cycle index, term, polar and Cartesian coordinates per year.
    ///
    /// Years may be written 606, -75000, 75000BCE, "450 BC", AD606, or as an
    /// inclusive range such as 1800..1810.
    Convert {
        #[arg(required = true, allow_hyphen_values = true)]
        years: Vec<String>,
    },
    /// Print the temporal encodings TE(x) and TE(y) per year as CSV.
    Encode {
        #[arg(required = true, allow_hyphen_values = true)]
        years: Vec<String>,
    },
    /// Year histograms and uniformity metrics for a JSONL corpus.
    Profile {
        #[arg(value_name = "CORPUS")]
        input: PathBuf,
        #[arg(long)]
        bin_width: Option<u32>,
        #[arg(long, value_parser = ["gregorian", "sexagenary", "both"])]
        view: Option<String>,
    },
    /// Generate synthetic QA items, the matching training corpus, a general
    /// corpus, and a vocabulary.
    GenTasks,
    /// Pretrain a base model on the general corpus.
    Pretrain,
    /// Estimate the diagonal Fisher of the base model on the general corpus.
    Fisher,
    /// Post-train a base checkpoint on the year-annotated corpus.
    Train {
        #[arg(long, value_parser = ["ticktack", "pt"])]
        mode: Option<String>,
    },
    /// Score QA items, year similarity, and (with --corpus) clustering.
    Eval {
        /// Few-shot settings, e.g. `--shots 0,5`.
        #[arg(long, value_delimiter = ',')]
        shots: Vec<usize>,
    },
    /// Run the full pretrain / PT / Ticktack comparison for several seeds.
    Desk {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
}

impl Command {
    fn dir_name(&self, cfg: &RunConfig) -> String {
        match self {
            Command::Convert { .. } => "convert".into(),
            Command::Encode { .. } => "encode".into(),
            Command::Profile { .. } => "profile".into(),
            Command::GenTasks => "tasks".into(),
            Command::Pretrain => "pretrain".into(),
            Command::Fisher => "fisher".into(),
            Command::Train { .. } => format!("train-{}", cfg.str("training.mode")),
            Command::Eval { .. } => "eval".into(),
            Command::Desk { .. } => "desk".into(),
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, UsageError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let paths = [
        ("paths.corpus", &cli.corpus),
        ("paths.general", &cli.general),
        ("paths.vocab", &cli.vocab),
        ("paths.checkpoint", &cli.checkpoint),
        ("paths.fisher", &cli.fisher),
        ("paths.items", &cli.items),
        ("paths.pool", &cli.pool),
    ];
    for (key, v) in paths {
        if let Some(v) = v {
            cfg.set(key, Value::String(v.clone()), Source::Flag)?;
        }
    }
    match &cli.command {
        Command::Profile { bin_width, view, .. } => {
            if let Some(w) = bin_width {
                cfg.set("profile.bin_width", Value::Integer(i64::from(*w)), Source::Flag)?;
            }
            if let Some(v) = view {
                cfg.set("profile.view", Value::String(v.clone()), Source::Flag)?;
            }
        }
        Command::Train { mode: Some(m) } => {
            cfg.set("training.mode", Value::String(m.clone()), Source::Flag)?;
        }
        Command::Eval { shots } if !shots.is_empty() => {
            let list = shots.iter().map(|&k| Value::Integer(k as i64)).collect();
            cfg.set("eval.shots", Value::Array(list), Source::Flag)?;
        }
        _ => {}
    }
    for s in &cli.set {
        cfg.set_flag(s)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = resolve(&cli)?;
    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_root().join(cli.command.dir_name(&cfg)));
    let artifacts: Artifacts = match &cli.command {
        Command::Convert { years } => {
            print!("{}", commands::convert(&cfg, years)?);
            return Ok(());
        }
        Command::Encode { years } => {
            print!("{}", commands::encode(&cfg, years)?);
            return Ok(());
        }
        Command::Profile { input, .. } => {
            let mut warnings = Vec::new();
            let art = commands::profile(&cfg, input, &mut warnings)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            art
        }
        Command::GenTasks => commands::gen_tasks(&cfg)?,
        Command::Pretrain => commands::pretrain(&cfg)?,
        Command::Fisher => commands::fisher(&cfg)?,
        Command::Train { .. } => commands::train_cmd(&cfg)?,
        Command::Eval { .. } => commands::eval(&cfg)?,
        Command::Desk { seeds } => {
            let (art, checks) = commands::desk(&cfg, seeds)?;
            print!("{checks}");
            art
        }
    };
    let names: Vec<String> = artifacts.names().map(|p| p.display().to_string()).collect();
    artifacts.commit(&dir, &cfg)?;
    println!("wrote {} ({})", dir.display(), names.join(", "));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
