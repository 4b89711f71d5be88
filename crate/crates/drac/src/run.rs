//! Training runs on disk: run directories, checkpoints, logs and manifests.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use drac_core::config::ExperimentConfig;
use drac_core::eval::EvalResult;
use drac_core::trainer::{rng_stream, Trainer};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::runlog::{LogHeader, LogWriter, METRICS_FILE, SCHEMA_VERSION};
use crate::CODE_VERSION;

pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const FINAL_CHECKPOINT_FILE: &str = "final.ckpt";
pub const FINAL_EVAL_FILE: &str = "final_eval.json";
pub const LOG_DIR_ENV: &str = "DRAC_LOG_DIR";

/// Stream used for the end-of-run evaluation, distinct from training streams.
const FINAL_EVAL_STREAM: u64 = 100;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub git_revision: Option<String>,
    pub run: String,
    pub method: String,
    pub seed: u64,
    pub created_unix: u64,
    pub schema: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalEval {
    pub episodes: usize,
    pub train_mean_return: f64,
    pub test_mean_return: f64,
    pub updates: u64,
    pub env_steps: u64,
}

/// Reads a config file, applies overrides and the log-directory variable.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    for o in overrides {
        cfg.apply_override(o)?;
    }
    if let Ok(dir) = std::env::var(LOG_DIR_ENV) {
        if !dir.is_empty() {
            cfg.log_dir = dir;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Directory name identifying a run.
pub fn run_name(cfg: &ExperimentConfig) -> String {
    let aug = cfg.effective_fixed_aug().map(|a| format!("-{}", a.as_str())).unwrap_or_default();
    format!("{}{}-{}-s{}", cfg.method.as_str(), aug, cfg.env.nuisance_mode.as_str(), cfg.seeds[0])
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

pub struct RunOptions {
    /// Stop once this many updates have completed (for staged runs).
    pub max_updates: Option<u64>,
    /// Print a progress line every this many updates (0 = silent).
    pub progress_every: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { max_updates: None, progress_every: 10 }
    }
}

fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    checkpoint::save(path, &Checkpoint { code_version: CODE_VERSION.into(), state: trainer.state() })
}

/// Starts a run in `<log_dir>/<run_name>`; returns the run directory.
pub fn start(cfg: ExperimentConfig, opts: &RunOptions) -> Result<PathBuf> {
    if cfg.seeds.len() != 1 {
        bail!("train runs one seed per process; use `sweep` for {} seeds", cfg.seeds.len());
    }
    let name = run_name(&cfg);
    let dir = Path::new(&cfg.log_dir).join(&name);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    let manifest = Manifest {
        code_version: CODE_VERSION.into(),
        git_revision: git_revision(),
        run: name.clone(),
        method: cfg.method.as_str().into(),
        seed: cfg.seeds[0],
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        schema: SCHEMA_VERSION,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    let header = LogHeader {
        schema: SCHEMA_VERSION,
        run: name,
        method: cfg.method.as_str().into(),
        fixed_aug: cfg.effective_fixed_aug().map(|a| a.as_str().into()),
        nuisance_mode: cfg.env.nuisance_mode.as_str().into(),
        seed: cfg.seeds[0],
        code_version: CODE_VERSION.into(),
    };
    let log = LogWriter::create(&dir.join(METRICS_FILE), &header)?;
    let trainer = Trainer::new(cfg)?;
    drive(trainer, log, &dir, opts)?;
    Ok(dir)
}

/// Continues the run a checkpoint belongs to; returns the run directory.
pub fn resume(checkpoint_path: &Path, opts: &RunOptions) -> Result<PathBuf> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let dir = checkpoint_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let trainer = Trainer::from_state(ckpt.state)?;
    let log = LogWriter::resume(&dir.join(METRICS_FILE), trainer.update_count())?;
    drive(trainer, log, &dir, opts)?;
    Ok(dir)
}

fn drive(mut trainer: Trainer, mut log: LogWriter, dir: &Path, opts: &RunOptions) -> Result<()> {
    let start = Instant::now();
    let total = trainer.total_updates();
    let interval = trainer.config().checkpoint_interval;
    while !trainer.is_finished() {
        if opts.max_updates.is_some_and(|m| trainer.update_count() >= m) {
            save_checkpoint(&trainer, &dir.join(CHECKPOINT_FILE))?;
            return Ok(());
        }
        let mut record = trainer.step()?;
        record.wall_clock = start.elapsed().as_secs_f64();
        log.append(&record)?;
        if opts.progress_every > 0 && (record.update % opts.progress_every == 0 || record.update == total) {
            eprintln!(
                "[{}] update {}/{} steps {} return {:.3} aug {} test {}",
                dir.file_name().and_then(|n| n.to_str()).unwrap_or("run"),
                record.update,
                total,
                record.env_steps,
                record.mean_episode_return,
                record.aug_id.map_or("-", |a| a.as_str()),
                record.test_return.map_or("-".to_string(), |t| format!("{t:.3}")),
            );
        }
        if interval > 0 && record.update % interval == 0 {
            save_checkpoint(&trainer, &dir.join(CHECKPOINT_FILE))?;
        }
    }
    save_checkpoint(&trainer, &dir.join(CHECKPOINT_FILE))?;
    save_checkpoint(&trainer, &dir.join(FINAL_CHECKPOINT_FILE))?;
    let final_eval = final_evaluation(&trainer)?;
    std::fs::write(dir.join(FINAL_EVAL_FILE), serde_json::to_string_pretty(&final_eval)?)?;
    Ok(())
}

/// Train- and test-pool evaluation with the configured episode count.
pub fn final_evaluation(trainer: &Trainer) -> Result<FinalEval> {
    let cfg = trainer.config();
    let mut rng = rng_stream(cfg.seeds[0], FINAL_EVAL_STREAM);
    let train: EvalResult = trainer.evaluate(false, cfg.eval_episodes, cfg.eval_greedy, &mut rng)?;
    let test: EvalResult = trainer.evaluate(true, cfg.eval_episodes, cfg.eval_greedy, &mut rng)?;
    Ok(FinalEval {
        episodes: cfg.eval_episodes,
        train_mean_return: train.mean_return,
        test_mean_return: test.mean_return,
        updates: trainer.update_count(),
        env_steps: trainer.env_steps(),
    })
}

pub fn read_final_eval(dir: &Path) -> Result<FinalEval> {
    let path = dir.join(FINAL_EVAL_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
