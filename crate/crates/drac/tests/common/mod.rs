#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drac_core::config::ExperimentConfig;

/// A run small enough to train in about a second: 4×4 grids at 8×8 pixels,
/// 4 environments × 16 steps per update, 6 updates.
pub const TINY: &str = "\
method = ppo
seeds = 1
total_env_steps = 384
num_envs = 4
rollout_length = 16
epochs = 2
minibatches = 2
grid_size = 4
observation_size = 8
max_episode_steps = 12
n_train_levels = 5
test_pool_size = 20
conv_layers = 4:4:2
hidden_size = 16
eval_interval = 2
eval_episodes = 4
checkpoint_interval = 2
";

pub fn tiny_config(log_dir: &Path, extra: &[&str]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(TINY).unwrap();
    cfg.log_dir = log_dir.display().to_string();
    for o in extra {
        cfg.apply_override(o).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

pub fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.conf");
    std::fs::write(&path, TINY).unwrap();
    path
}

pub fn drac() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drac"))
}

pub fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}
