use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use readmit::models::ArchitectureSpec;
use readmit::pipeline::{self, RunConfig};

/// Time-aware readmission risk models: data generation, training,
/// benchmarking and Bayesian interpretation.
#[derive(Debug, Parser)]
#[command(name = "readmit", version)]
struct Cli {
    /// TOML run configuration. Keys can also be set through READMIT_*
    /// environment variables (nested keys joined by `__`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Architecture to run; repeat for several. Overrides the configuration.
    #[arg(long = "arch", global = true)]
    arch: Vec<ArchitectureSpec>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent benchmark trainings.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cohort (stays, events, planted codes).
    Synth,
    /// Train a single architecture and save its checkpoint.
    Train,
    /// Train and evaluate every requested architecture on one split.
    Benchmark,
    /// Bayes-by-Backprop training and interpretation tables.
    Interpret {
        /// Load this saved posterior instead of training one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Print the risk and 95% credible interval of this stay.
        #[arg(long)]
        stay_id: Option<u64>,
    },
    /// Assemble report.md from the result files in the output directory.
    Report,
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, cli.seed) {
        (Some(path), _) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(seed)) => RunConfig::from_toml_str(&format!("seed = {seed}"), std::env::vars())?,
        (None, None) => bail!("either --config or --seed is required"),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if !cli.arch.is_empty() {
        cfg.architectures = cli.arch.clone();
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Report = cli.command {
        let (out, top_k) = if cli.config.is_some() || cli.seed.is_some() {
            let cfg = run_config(&cli)?;
            (cfg.out_dir, cfg.top_k)
        } else {
            (cli.out.clone().unwrap_or_else(|| PathBuf::from("out")), 10)
        };
        let path = pipeline::cmd_report(&out, top_k)?;
        println!("wrote {}", path.display());
        return Ok(());
    }
    let cfg = run_config(&cli)?;
    let out = cfg.out_dir.clone();
    match cli.command {
        Command::Synth => {
            let syn = pipeline::cmd_synth(&cfg, &out)?;
            let n = syn.raw.stays.len();
            let pos = syn.raw.stays.iter().filter(|s| s.label == 1).count();
            println!("wrote {n} stays ({pos} readmitted) to {}", out.display());
        }
        Command::Train => {
            let [spec] = cfg.architectures[..] else {
                bail!("train takes exactly one --arch");
            };
            let t = pipeline::cmd_train(&cfg, spec, &out)?;
            println!("{spec}: best epoch {}, test", t.outcome.best_epoch);
            for (name, e) in t.metrics.entries() {
                println!("  {name:<12} {}", pipeline::fmt_estimate(&e));
            }
        }
        Command::Benchmark => {
            let report = pipeline::cmd_benchmark(&cfg, &out)?;
            print!("{}", std::fs::read_to_string(out.join(pipeline::BENCHMARK_MD))?);
            println!("split hash {}", report.split_hash);
            if report.rows.iter().all(|r| r.error.is_some()) {
                bail!("every architecture failed");
            }
        }
        Command::Interpret { checkpoint, stay_id } => {
            let interp = pipeline::cmd_interpret(&cfg, &out, checkpoint.as_deref(), stay_id)?;
            print!("{}", std::fs::read_to_string(out.join(pipeline::ODDS_RATIOS_MD))?);
            if let Some((id, risk)) = interp.stay_risk {
                println!("stay {id}: risk {}", pipeline::fmt_estimate(&risk));
            }
        }
        Command::Report => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
