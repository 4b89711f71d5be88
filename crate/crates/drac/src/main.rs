use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use drac::run::{self, RunOptions};
use drac::{checkpoint, plot, registry, remote, robustness};
use drac_core::env::{level_split, GridEnv};
use drac_core::trainer::{rng_stream, Trainer};

#[derive(Parser)]
#[command(name = "drac", version, about = "Regularized data augmentation for actor-critic agents")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one run.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, applied after the config file.
        #[arg(long = "override")]
        overrides: Vec<String>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
        /// Stop after this many updates (a checkpoint is written).
        #[arg(long)]
        max_updates: Option<u64>,
        #[arg(long, default_value_t = 10)]
        progress_every: u64,
    },
    /// Mean return of a checkpoint on a level split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        split: Split,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        greedy: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Background-perturbation robustness probes; writes robustness.csv beside the checkpoint.
    Robustness {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = robustness::PROBE_LEVELS)]
        levels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Curves and tables for every run below a directory.
    Plot {
        #[arg(long)]
        log_dir: PathBuf,
    },
    /// One training process per seed.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long = "override")]
        overrides: Vec<String>,
        /// Concurrent processes (defaults to the number of CPUs).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print the augmentation registry as JSON.
    Registry,
    /// Serve a grid environment over stdin/stdout.
    ServeEnv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        stream: u64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Cmd::Train { config, overrides, resume, max_updates, progress_every } => {
            let opts = RunOptions { max_updates, progress_every };
            let dir = match resume {
                Some(ckpt) => run::resume(&ckpt, &opts)?,
                None => run::start(run::load_config(&config, &overrides)?, &opts)?,
            };
            println!("{}", dir.display());
        }
        Cmd::Eval { checkpoint, split, episodes, greedy, seed } => {
            let ckpt = checkpoint::load(&checkpoint)?;
            let trainer = Trainer::from_state(ckpt.state)?;
            let mut rng = rng_stream(seed, 0);
            let test = matches!(split, Split::Test);
            let result = trainer.evaluate(test, episodes, greedy, &mut rng)?;
            let row = serde_json::json!({
                "checkpoint": checkpoint.display().to_string(),
                "method": trainer.config().method.as_str(),
                "split": if test { "test" } else { "train" },
                "episodes": episodes,
                "greedy": greedy,
                "mean_return": result.mean_return,
            });
            println!("{row}");
        }
        Cmd::Robustness { checkpoint, levels, out } => {
            let row = robustness::probe_checkpoint(&checkpoint, levels)?;
            let csv = robustness::to_csv(std::slice::from_ref(&row));
            let out = out.unwrap_or_else(|| {
                checkpoint.parent().unwrap_or(Path::new(".")).join(plot::ROBUSTNESS_FILE)
            });
            std::fs::write(&out, &csv).with_context(|| format!("writing {}", out.display()))?;
            print!("{csv}");
        }
        Cmd::Plot { log_dir } => {
            for p in plot::emit_plots(&log_dir)? {
                println!("{}", p.display());
            }
        }
        Cmd::Sweep { config, seeds, overrides, jobs } => sweep(&config, &seeds, &overrides, jobs)?,
        Cmd::Registry => println!("{}", registry::registry_json()),
        Cmd::ServeEnv { config, stream } => {
            let cfg = run::load_config(&config, &[])?;
            let (train, _) = level_split(cfg.n_train_levels, cfg.test_pool_size)?;
            let mut env = GridEnv::new(cfg.env, train, stream)?;
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            remote::serve(&mut env, BufReader::new(stdin), stdout)?;
        }
    }
    Ok(())
}

fn sweep(config: &Path, seeds: &[u64], overrides: &[String], jobs: Option<usize>) -> Result<()> {
    run::load_config(config, overrides)?;
    let exe = std::env::current_exe()?;
    let jobs = jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1);
    let mut pending: Vec<u64> = seeds.iter().rev().copied().collect();
    let mut running: Vec<(u64, Child)> = Vec::new();
    let mut failed = Vec::new();
    while !pending.is_empty() || !running.is_empty() {
        while running.len() < jobs {
            let Some(seed) = pending.pop() else { break };
            let mut cmd = Command::new(&exe);
            cmd.arg("train").arg("--config").arg(config);
            for o in overrides {
                cmd.arg("--override").arg(o);
            }
            cmd.arg("--override").arg(format!("seeds={seed}"));
            running.push((seed, cmd.spawn().with_context(|| format!("launching seed {seed}"))?));
        }
        let (seed, mut child) = running.remove(0);
        let status = child.wait()?;
        if !status.success() {
            failed.push(seed);
        }
        let _ = std::io::stdout().flush();
    }
    if !failed.is_empty() {
        bail!("seeds {failed:?} failed");
    }
    Ok(())
}
