//! Experiment configuration in a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored; any key may be
//! omitted to take its default. [`ExperimentConfig::to_text`] always writes
//! every key in a fixed order, so writing, parsing and writing again
//! reproduces the same bytes.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationId;
use crate::drac::{DracConfig, DracMode};
use crate::env::{EnvConfig, NuisanceMode};
use crate::error::{bail, Error, Result};
use crate::nn::{ConvSpec, NetArch};
use crate::ppo::PpoConfig;
use crate::select::{MetaConfig, Rl2Config};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ppo,
    DracFixed,
    RadNaive,
    UcbDrac,
    Rl2Drac,
    MetaDrac,
    RandDrac,
    CropDrac,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ppo,
        Method::DracFixed,
        Method::RadNaive,
        Method::UcbDrac,
        Method::Rl2Drac,
        Method::MetaDrac,
        Method::RandDrac,
        Method::CropDrac,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ppo => "ppo",
            Method::DracFixed => "drac_fixed",
            Method::RadNaive => "rad_naive",
            Method::UcbDrac => "ucb_drac",
            Method::Rl2Drac => "rl2_drac",
            Method::MetaDrac => "meta_drac",
            Method::RandDrac => "rand_drac",
            Method::CropDrac => "crop_drac",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub fixed_aug: Option<AugmentationId>,
    pub seeds: Vec<u64>,
    pub log_dir: String,
    pub ppo: PpoConfig,
    pub drac: DracConfig,
    pub env: EnvConfig,
    pub n_train_levels: usize,
    pub test_pool_size: usize,
    pub conv_layers: Vec<ConvSpec>,
    pub hidden_size: usize,
    pub ucb_c: f64,
    pub ucb_window: usize,
    pub rl2: Rl2Config,
    pub meta: MetaConfig,
    /// Updates between held-out evaluations; 0 disables them.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub eval_greedy: bool,
    /// Updates between checkpoints; 0 saves only the final one.
    pub checkpoint_interval: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let arch = NetArch::desk(64, 5);
        Self {
            method: Method::UcbDrac,
            fixed_aug: None,
            seeds: vec![1],
            log_dir: "runs".into(),
            ppo: PpoConfig::default(),
            drac: DracConfig::default(),
            env: EnvConfig::default(),
            n_train_levels: 50,
            test_pool_size: 1000,
            conv_layers: arch.convs,
            hidden_size: arch.hidden,
            ucb_c: 0.1,
            ucb_window: 10,
            rl2: Rl2Config::default(),
            meta: MetaConfig::default(),
            eval_interval: 10,
            eval_episodes: 100,
            eval_greedy: false,
            checkpoint_interval: 25,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bail!(Config, "invalid value {value:?} for key `{key}` (expected true or false)"),
    }
}

fn format_convs(convs: &[ConvSpec]) -> String {
    convs
        .iter()
        .map(|c| format!("{}:{}:{}", c.channels, c.kernel, c.stride))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_convs(key: &str, value: &str) -> Result<Vec<ConvSpec>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|layer| {
            let parts: Vec<&str> = layer.trim().split(':').collect();
            if parts.len() != 3 {
                bail!(Config, "invalid layer {layer:?} for key `{key}` (expected channels:kernel:stride)");
            }
            Ok(ConvSpec {
                channels: parse_value(key, parts[0])?,
                kernel: parse_value(key, parts[1])?,
                stride: parse_value(key, parts[2])?,
            })
        })
        .collect()
}

impl ExperimentConfig {
    /// Every key with its current value, in serialization order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.ppo;
        let e = &self.env;
        vec![
            ("method", self.method.as_str().into()),
            ("fixed_aug", self.fixed_aug.map_or("none", |a| a.as_str()).into()),
            ("seeds", self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")),
            ("log_dir", self.log_dir.clone()),
            ("total_env_steps", p.total_steps.to_string()),
            ("num_envs", p.num_envs.to_string()),
            ("rollout_length", p.rollout_length.to_string()),
            ("epochs", p.epochs.to_string()),
            ("minibatches", p.minibatches.to_string()),
            ("gamma", p.gamma.to_string()),
            ("gae_lambda", p.gae_lambda.to_string()),
            ("clip", p.clip.to_string()),
            ("entropy_coef", p.entropy_coef.to_string()),
            ("value_coef", p.value_coef.to_string()),
            ("learning_rate", p.learning_rate.to_string()),
            ("adam_eps", p.adam_eps.to_string()),
            ("max_grad_norm", p.max_grad_norm.to_string()),
            ("normalize_rewards", p.normalize_rewards.to_string()),
            ("lr_decay", p.lr_decay.to_string()),
            ("alpha_r", self.drac.alpha_r.to_string()),
            ("drac_mode", self.drac.mode.as_str().into()),
            ("grid_size", e.grid_size.to_string()),
            ("nuisance_mode", e.nuisance_mode.as_str().into()),
            ("palette_size", e.palette_size.to_string()),
            ("max_episode_steps", e.max_episode_steps.to_string()),
            ("observation_size", e.observation_size.to_string()),
            ("n_train_levels", self.n_train_levels.to_string()),
            ("test_pool_size", self.test_pool_size.to_string()),
            ("conv_layers", format_convs(&self.conv_layers)),
            ("hidden_size", self.hidden_size.to_string()),
            ("ucb_c", self.ucb_c.to_string()),
            ("ucb_window", self.ucb_window.to_string()),
            ("rl2_hidden", self.rl2.hidden.to_string()),
            ("rl2_learning_rate", self.rl2.learning_rate.to_string()),
            ("rl2_entropy_coef", self.rl2.entropy_coef.to_string()),
            ("rl2_baseline_decay", self.rl2.baseline_decay.to_string()),
            ("meta_inner_lr", self.meta.inner_lr.to_string()),
            ("meta_outer_lr", self.meta.outer_lr.to_string()),
            ("meta_train_fraction", self.meta.train_fraction.to_string()),
            ("meta_batch_size", self.meta.batch_size.to_string()),
            ("meta_first_order", self.meta.first_order.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("eval_greedy", self.eval_greedy.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "method" => {
                self.method =
                    Method::parse(value).ok_or_else(|| Error::Config(format!("unknown method {value:?}")))?
            }
            "fixed_aug" => {
                self.fixed_aug = match value {
                    "none" | "" => None,
                    v => Some(
                        AugmentationId::parse(v)
                            .ok_or_else(|| Error::Config(format!("unknown augmentation {v:?}")))?,
                    ),
                }
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_value(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "log_dir" => self.log_dir = value.into(),
            "total_env_steps" => self.ppo.total_steps = parse_value(key, value)?,
            "num_envs" => self.ppo.num_envs = parse_value(key, value)?,
            "rollout_length" => self.ppo.rollout_length = parse_value(key, value)?,
            "epochs" => self.ppo.epochs = parse_value(key, value)?,
            "minibatches" => self.ppo.minibatches = parse_value(key, value)?,
            "gamma" => self.ppo.gamma = parse_value(key, value)?,
            "gae_lambda" => self.ppo.gae_lambda = parse_value(key, value)?,
            "clip" => self.ppo.clip = parse_value(key, value)?,
            "entropy_coef" => self.ppo.entropy_coef = parse_value(key, value)?,
            "value_coef" => self.ppo.value_coef = parse_value(key, value)?,
            "learning_rate" => self.ppo.learning_rate = parse_value(key, value)?,
            "adam_eps" => self.ppo.adam_eps = parse_value(key, value)?,
            "max_grad_norm" => self.ppo.max_grad_norm = parse_value(key, value)?,
            "normalize_rewards" => self.ppo.normalize_rewards = parse_bool(key, value)?,
            "lr_decay" => self.ppo.lr_decay = parse_bool(key, value)?,
            "alpha_r" => self.drac.alpha_r = parse_value(key, value)?,
            "drac_mode" => {
                self.drac.mode =
                    DracMode::parse(value).ok_or_else(|| Error::Config(format!("unknown drac_mode {value:?}")))?
            }
            "grid_size" => self.env.grid_size = parse_value(key, value)?,
            "nuisance_mode" => {
                self.env.nuisance_mode = NuisanceMode::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown nuisance_mode {value:?}")))?
            }
            "palette_size" => self.env.palette_size = parse_value(key, value)?,
            "max_episode_steps" => self.env.max_episode_steps = parse_value(key, value)?,
            "observation_size" => self.env.observation_size = parse_value(key, value)?,
            "n_train_levels" => self.n_train_levels = parse_value(key, value)?,
            "test_pool_size" => self.test_pool_size = parse_value(key, value)?,
            "conv_layers" => self.conv_layers = parse_convs(key, value)?,
            "hidden_size" => self.hidden_size = parse_value(key, value)?,
            "ucb_c" => self.ucb_c = parse_value(key, value)?,
            "ucb_window" => self.ucb_window = parse_value(key, value)?,
            "rl2_hidden" => self.rl2.hidden = parse_value(key, value)?,
            "rl2_learning_rate" => self.rl2.learning_rate = parse_value(key, value)?,
            "rl2_entropy_coef" => self.rl2.entropy_coef = parse_value(key, value)?,
            "rl2_baseline_decay" => self.rl2.baseline_decay = parse_value(key, value)?,
            "meta_inner_lr" => self.meta.inner_lr = parse_value(key, value)?,
            "meta_outer_lr" => self.meta.outer_lr = parse_value(key, value)?,
            "meta_train_fraction" => self.meta.train_fraction = parse_value(key, value)?,
            "meta_batch_size" => self.meta.batch_size = parse_value(key, value)?,
            "meta_first_order" => self.meta.first_order = parse_bool(key, value)?,
            "eval_interval" => self.eval_interval = parse_value(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_value(key, value)?,
            "eval_greedy" => self.eval_greedy = parse_bool(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse_value(key, value)?,
            _ => bail!(Config, "unknown config key `{key}`"),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
        self.set(key.trim(), value)
    }

    /// Parses the text format on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                bail!(Config, "line {}: duplicate key `{key}`", lineno + 1);
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
            seen.push(key.into());
        }
        Ok(cfg)
    }

    /// Mode actually used by the update for this method.
    pub fn effective_mode(&self) -> DracMode {
        match self.method {
            Method::Ppo => DracMode::None,
            Method::RadNaive => DracMode::NaiveRad,
            _ => self.drac.mode,
        }
    }

    /// The fixed augmentation of single-augmentation methods.
    pub fn effective_fixed_aug(&self) -> Option<AugmentationId> {
        match self.method {
            Method::CropDrac => Some(AugmentationId::Crop),
            Method::DracFixed | Method::RadNaive => self.fixed_aug,
            _ => None,
        }
    }

    pub fn arch(&self) -> NetArch {
        NetArch {
            input_size: self.env.observation_size,
            input_channels: 3,
            convs: self.conv_layers.clone(),
            hidden: self.hidden_size,
            num_actions: crate::env::NUM_ACTIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.drac.validate()?;
        self.env.validate()?;
        self.arch().num_params()?;
        if self.seeds.is_empty() {
            bail!(Config, "seeds must list at least one seed");
        }
        if self.n_train_levels == 0 || self.test_pool_size == 0 {
            bail!(Config, "n_train_levels and test_pool_size must be positive");
        }
        if self.ppo.total_steps == 0 {
            bail!(Config, "total_env_steps must be positive");
        }
        if self.eval_episodes == 0 {
            bail!(Config, "eval_episodes must be positive");
        }
        match self.method {
            Method::DracFixed | Method::RadNaive => match self.fixed_aug {
                None => bail!(Config, "method {} requires fixed_aug", self.method.as_str()),
                Some(AugmentationId::LearnedConv) => {
                    bail!(Config, "fixed_aug = learned_conv is only available through meta_drac")
                }
                Some(_) => {}
            },
            Method::MetaDrac if self.ppo.num_envs < 2 => {
                bail!(Config, "meta_drac splits environments 9:1 and needs num_envs >= 2")
            }
            _ => {}
        }
        if self.drac.mode == DracMode::NaiveRad && !matches!(self.method, Method::Ppo | Method::RadNaive) {
            bail!(Config, "drac_mode = naive_rad is selected with method = rad_naive");
        }
        if self.ucb_window == 0 || !(self.ucb_c >= 0.0) {
            bail!(Config, "ucb_window must be positive and ucb_c non-negative");
        }
        Ok(())
    }
}
