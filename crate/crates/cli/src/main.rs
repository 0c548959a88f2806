use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mapft::args::ConfigArgs;
use mapft::bench::{self, BenchOptions};
use mapft::config::AdapterChoice;
use mapft::error::{CliError, Result};
use mapft::{gradcheck, merge, params, train};
use mapft_core::adapters::{AdapterKind, ParamRole};

#[derive(Debug, Parser)]
#[command(name = "mapft", version, about = "Train, verify and time low-rank adapters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Corrupt the analytic gradient of one parameter group (a, b,
        /// alpha, beta, mags) to confirm the check catches it.
        #[arg(long, value_parser = parse_role)]
        inject_fault: Option<ParamRole>,
    },
    /// Trainable parameter counts and overhead relative to plain LoRA.
    CountParams {
        /// Only this kind (default: all three).
        #[arg(long, value_enum)]
        kind: Option<AdapterChoice>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        r: usize,
    },
    /// Run (or resume) a training job and write its artifacts.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, required_unless_present = "resume")]
        seed: Option<u64>,
        /// Output directory (default with --resume: the checkpoint's).
        #[arg(long, required_unless_present = "resume")]
        out: Option<PathBuf>,
        /// Stop once this global step count is reached.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Continue from a checkpoint manifest; the config comes from it.
        #[arg(long, conflicts_with = "seed")]
        resume: Option<PathBuf>,
    },
    /// Materialize a checkpoint's adapters into dense weights.
    Merge {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest path; the payload is written next to it as `.bin`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Median step time of every adapter kind at one shape.
    Bench {
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 512)]
        m: usize,
        #[arg(long, default_value_t = 8)]
        r: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_role(s: &str) -> std::result::Result<ParamRole, String> {
    ParamRole::from_name(s).ok_or_else(|| format!("unknown parameter group {s:?}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gradcheck {
            cfg,
            seed,
            inject_fault,
        } => {
            let cfg = cfg.resolve(Some(seed))?;
            let report = gradcheck::run(&cfg, inject_fault)?;
            print!("{}", report.render());
            let failed: Vec<&str> = report.failures().iter().map(|g| g.group.as_str()).collect();
            if !failed.is_empty() {
                return Err(CliError::Verification(format!(
                    "relative error above {:e} in {}",
                    gradcheck::TOLERANCE,
                    failed.join(", ")
                )));
            }
        }
        Command::CountParams { kind, n, m, r } => {
            let kinds: Vec<AdapterKind> = match kind {
                Some(k) => vec![k.into()],
                None => AdapterKind::ALL.to_vec(),
            };
            print!("{}", params::render(&params::count(&kinds, n, m, r)?));
        }
        Command::Train {
            cfg,
            seed,
            out,
            stop_after,
            resume,
        } => {
            let outcome = match resume {
                Some(ckpt) => {
                    if cfg.any_set() {
                        return Err(CliError::Config(
                            "config flags cannot be combined with --resume; the checkpoint fixes the config".into(),
                        ));
                    }
                    train::resume(&ckpt, out.as_deref(), stop_after)?
                }
                None => {
                    let cfg = cfg.resolve(seed)?;
                    train::train(&cfg, out.as_deref().expect("required by clap"), stop_after)?
                }
            };
            print!("{}", outcome.summary.render());
        }
        Command::Merge { checkpoint, out } => {
            let merged = merge::merge_checkpoint(&checkpoint, &out)?;
            println!(
                "wrote {} merged layer(s) at step {} to {}",
                merged.weights.len(),
                merged.step,
                out.display()
            );
        }
        Command::Bench {
            n,
            m,
            r,
            batch,
            warmup,
            steps,
            seed,
        } => {
            let rows = bench::run(&BenchOptions {
                n,
                m,
                r,
                batch,
                warmup,
                steps,
                seed,
            })?;
            print!("{}", bench::render(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
