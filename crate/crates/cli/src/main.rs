use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dxmi_cli::commands::{self, resolve_config};
use dxmi_cli::{Checkpoint, CliError, RunConfig};

/// Diffusion samplers and energy models trained by maximum-entropy IRL.
#[derive(Parser)]
#[command(name = "dxmi", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Denoising pretraining of the sampler; writes pretrained.json.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train from scratch or from a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw samples, optionally value-guided.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also dump every intermediate state and noise.
        #[arg(long)]
        trajectory: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print SW, AUC and the Bayes AUC as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// DDPM checkpoint whose SW is reported alongside.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Energy heat map over the data domain (CSV and PPM).
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Temperature sweep with one summary CSV.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Pretrain { config, out, seed } => {
            let cfg = resolve_config(config.as_deref(), None, seed)?;
            let path = commands::cmd_pretrain(&cfg, &out)?;
            println!("{}", path.display());
        }
        Cmd::Train { config, resume, out, seed } => {
            let ckpt = resume.as_deref().map(Checkpoint::load).transpose()?;
            let cfg = resolve_config(config.as_deref(), ckpt.as_ref(), seed)?;
            let r = commands::cmd_train(&cfg, ckpt.as_ref(), &out)?;
            if let Some(e) = r.eval {
                println!("sw {} auc {}", e.sw, e.auc);
            }
            println!("{}", r.final_checkpoint.display());
        }
        Cmd::Sample { checkpoint, n, lambda, out, trajectory, seed } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            commands::cmd_sample(&ckpt, n, lambda, &out, trajectory, seed)?;
        }
        Cmd::Eval { checkpoint, config, seed, baseline } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let base = baseline.as_deref().map(Checkpoint::load).transpose()?;
            print!("{}", commands::cmd_eval(&ckpt, cfg.as_ref(), seed, base.as_ref())?.to_json());
        }
        Cmd::Render { checkpoint, grid, out } => {
            commands::cmd_render(&Checkpoint::load(&checkpoint)?, grid, &out)?;
        }
        Cmd::Ablate { config, out, seed } => {
            let cfg = resolve_config(config.as_deref(), None, seed)?;
            for r in commands::cmd_ablate(&cfg, &out)? {
                match r.eval {
                    Some(e) => println!("tau {} sw {} auc {}", r.tau, e.sw, e.auc),
                    None => println!("tau {} {}", r.tau, if r.diverged { "diverged" } else { "no eval" }),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
