use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use capsim_pipeline::commands::{cmd_crossval, cmd_gen, cmd_report, cmd_run, cmd_sweep};
use capsim_pipeline::{PipelineConfig, PipelineError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "capsim", version, about = "Clip-based execution-time prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate workloads and oracle traces.
    Gen(Common),
    /// Slice, sample, split, train and evaluate on the mixed corpus.
    Run(Common),
    /// Train on each set, evaluate on every set.
    Crossval(Common),
    /// Fine-tune the baseline checkpoint on microarchitecture variants.
    Sweep(Common),
    /// Summarize a run directory.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn execute(cmd: &Command) -> Result<(), PipelineError> {
    let (Command::Gen(c) | Command::Run(c) | Command::Crossval(c) | Command::Sweep(c) | Command::Report(c)) = cmd;
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.validate()?;
    }
    if let Some(j) = c.jobs {
        if j == 0 {
            return Err(PipelineError::Config("--jobs must be >= 1".into()));
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let out = &c.out;
    match cmd {
        Command::Gen(_) => {
            let s = cmd_gen(&cfg, out)?;
            let intervals: usize = s.benchmarks.iter().map(|b| b.intervals).sum();
            println!("generated {} workloads, {intervals} interval traces under {}", s.benchmarks.len(), out.display());
        }
        Command::Run(_) => {
            let r = cmd_run(&cfg, out)?;
            println!(
                "clips {} (sampled {}), split {:?}, train MAPE {:.4}, test MAPE {:.4}",
                r.clips_total, r.clips_sampled, r.split_sizes, r.train_mape, r.average_error
            );
        }
        Command::Crossval(_) => {
            let r = cmd_crossval(&cfg, out)?;
            println!("diagonal mean {:.4}, off-diagonal mean {:.4}", r.diagonal_mean, r.off_diagonal_mean);
        }
        Command::Sweep(_) => {
            for row in cmd_sweep(&cfg, out)? {
                println!("{:<24} error {:.4}", row.name, row.average_error);
            }
        }
        Command::Report(_) => {
            cmd_report(&cfg, out)?;
            let text = std::fs::read_to_string(out.join("summary").join("summary.txt"))
                .map_err(|source| PipelineError::Io { path: out.join("summary"), source })?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command).context("capsim failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(3, |p| p.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
