//! Orchestrates selection, collection, update and feedback for one run.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentationId, SAMPLED};
use crate::config::{ExperimentConfig, Method};
use crate::drac::{drac_update, Agent, AugmentationSource, DracConfig, SampledAugmenter, UpdateStats};
use crate::env::{grid_vec_env, level_split, GridEnv, LevelSeed, VecEnv};
use crate::error::{bail, Error, Result};
use crate::eval::{evaluate_policy, summarize, EvalResult};
use crate::nn::{NetArch, PolicyValueNet};
use crate::optim::Adam;
use crate::ppo::{collect_rollout, RewardNormalizer};
use crate::select::{MetaAugmenter, Rl2Selector, UcbSelector};

/// Completed episodes kept for the running train-return statistics.
pub const RETURN_WINDOW: usize = 100;
/// Environments evaluated in lock-step during held-out evaluation.
pub const EVAL_PARALLEL: usize = 16;

/// Independent random stream `stream` of a run seeded with `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_ACTIONS: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const STREAM_SELECTOR: u64 = 4;
const STREAM_EVAL: u64 = 5;
const STREAM_META: u64 = 6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Selector {
    /// No augmentation (plain PPO).
    None,
    Fixed(AugmentationId),
    Ucb(UcbSelector),
    Rl2(Rl2Selector),
    Random { rng: ChaCha8Rng },
    Meta,
}

impl Selector {
    fn for_config(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        Ok(match cfg.method {
            Method::Ppo => Selector::None,
            Method::DracFixed | Method::RadNaive | Method::CropDrac => Selector::Fixed(
                cfg.effective_fixed_aug()
                    .ok_or_else(|| Error::Config("method requires fixed_aug".into()))?,
            ),
            Method::UcbDrac => Selector::Ucb(UcbSelector::new(SAMPLED.len(), cfg.ucb_c, cfg.ucb_window)?),
            Method::Rl2Drac => Selector::Rl2(Rl2Selector::new(
                SAMPLED.len(),
                cfg.rl2.clone(),
                rng_stream(seed, STREAM_SELECTOR).random(),
            )?),
            Method::RandDrac => Selector::Random { rng: rng_stream(seed, STREAM_SELECTOR) },
            Method::MetaDrac => Selector::Meta,
        })
    }

    fn feedback(&mut self, mean_return: f64) -> Result<()> {
        match self {
            Selector::Ucb(ucb) => match ucb.pending() {
                Some(arm) => ucb.feedback(arm, mean_return),
                None => Ok(()),
            },
            Selector::Rl2(rl2) if rl2.pending().is_some() => rl2.learn(mean_return),
            _ => Ok(()),
        }
    }

    fn choose(&mut self) -> Result<Option<AugmentationId>> {
        Ok(match self {
            Selector::None => None,
            Selector::Fixed(id) => Some(*id),
            Selector::Ucb(ucb) => Some(SAMPLED[ucb.select()?]),
            Selector::Rl2(rl2) => Some(SAMPLED[rl2.select()?]),
            Selector::Random { rng } => Some(crate::select::rand_select(rng)),
            Selector::Meta => Some(AugmentationId::LearnedConv),
        })
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub update: u64,
    pub env_steps: u64,
    pub mode: String,
    pub aug_id: Option<AugmentationId>,
    #[serde(rename = "J_pi")]
    pub j_pi: f64,
    #[serde(rename = "J_V")]
    pub j_v: f64,
    pub entropy: f64,
    #[serde(rename = "G_pi")]
    pub g_pi: f64,
    #[serde(rename = "G_V")]
    pub g_v: f64,
    pub mean_ratio: f64,
    pub max_ratio_dev: f64,
    pub first_ratio_dev: f64,
    pub grad_norm: f64,
    /// Mean over the last completed training episodes (0 before any).
    pub mean_episode_return: f64,
    pub median_episode_return: f64,
    pub episodes_completed: u64,
    /// Mean return of the rollout fed back to the selector.
    pub rollout_return: f64,
    pub q_values: Vec<f64>,
    pub counts: Vec<u64>,
    pub selector_probs: Vec<f64>,
    pub test_return: Option<f64>,
    pub learning_rate: f64,
    /// Seconds since the start of training; filled in by the caller.
    pub wall_clock: f64,
}

/// Everything needed to resume a run exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: ExperimentConfig,
    pub arch: NetArch,
    pub params: Vec<f32>,
    pub optimizer: Adam<f32>,
    pub envs: VecEnv<GridEnv>,
    pub normalizer: Option<RewardNormalizer>,
    pub selector: Selector,
    pub augmenter: SampledAugmenter,
    pub meta: Option<MetaAugmenter>,
    pub action_rng: ChaCha8Rng,
    pub shuffle_rng: ChaCha8Rng,
    pub eval_rng: ChaCha8Rng,
    pub update: u64,
    pub env_steps: u64,
    pub episodes_completed: u64,
    pub recent_returns: VecDeque<f64>,
    pub last_rollout_return: f64,
}

pub struct Trainer {
    state: TrainerState,
    agent: Agent<f32>,
    train_seeds: Vec<LevelSeed>,
    test_seeds: Vec<LevelSeed>,
}

impl Trainer {
    /// Fresh run for `config` using its first seed.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seeds[0];
        let (train_seeds, _) = level_split(config.n_train_levels, config.test_pool_size)?;
        let arch = config.arch();
        let net = PolicyValueNet::<f32>::new(arch.clone(), seed)?;
        let agent = Agent::new(net, &config.ppo);
        let envs = grid_vec_env(config.env, &train_seeds, config.ppo.num_envs, seed)?;
        let normalizer = config
            .ppo
            .normalize_rewards
            .then(|| RewardNormalizer::new(config.ppo.num_envs, config.ppo.gamma));
        let selector = Selector::for_config(&config, seed)?;
        let augmenter = SampledAugmenter::new(AugmentationId::Identity, rng_stream(seed, STREAM_AUGMENT))?;
        let meta = match config.method {
            Method::MetaDrac => Some(MetaAugmenter::new(config.meta.clone(), rng_stream(seed, STREAM_META).random())?),
            _ => None,
        };
        let state = TrainerState {
            arch,
            params: agent.net.params().to_vec(),
            optimizer: agent.optimizer.clone(),
            envs,
            normalizer,
            selector,
            augmenter,
            meta,
            action_rng: rng_stream(seed, STREAM_ACTIONS),
            shuffle_rng: rng_stream(seed, STREAM_SHUFFLE),
            eval_rng: rng_stream(seed, STREAM_EVAL),
            update: 0,
            env_steps: 0,
            episodes_completed: 0,
            recent_returns: VecDeque::with_capacity(RETURN_WINDOW),
            last_rollout_return: 0.0,
            config,
        };
        Self::from_state(state)
    }

    /// Resumes from a saved state.
    pub fn from_state(state: TrainerState) -> Result<Self> {
        state.config.validate()?;
        let (train_seeds, test_seeds) = level_split(state.config.n_train_levels, state.config.test_pool_size)?;
        let net = PolicyValueNet::from_params(state.arch.clone(), state.params.clone())?;
        let agent = Agent { net, optimizer: state.optimizer.clone() };
        Ok(Self { state, agent, train_seeds, test_seeds })
    }

    /// Snapshot of the complete run state.
    pub fn state(&self) -> TrainerState {
        let mut s = self.state.clone();
        s.params = self.agent.net.params().to_vec();
        s.optimizer = self.agent.optimizer.clone();
        s
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.state.config
    }

    pub fn net(&self) -> &PolicyValueNet<f32> {
        &self.agent.net
    }

    pub fn update_count(&self) -> u64 {
        self.state.update
    }

    pub fn env_steps(&self) -> u64 {
        self.state.env_steps
    }

    pub fn total_updates(&self) -> u64 {
        let per = self.state.config.ppo.steps_per_update();
        self.state.config.ppo.total_steps.div_ceil(per)
    }

    pub fn is_finished(&self) -> bool {
        self.state.update >= self.total_updates()
    }

    pub fn train_seeds(&self) -> &[LevelSeed] {
        &self.train_seeds
    }

    pub fn test_seeds(&self) -> &[LevelSeed] {
        &self.test_seeds
    }

    pub fn selector(&self) -> &Selector {
        &self.state.selector
    }

    pub fn meta(&self) -> Option<&MetaAugmenter> {
        self.state.meta.as_ref()
    }

    /// Collect a rollout, feed its return back to the selector, pick this
    /// update's augmentation and run the update.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        if self.is_finished() {
            bail!(State, "training already reached {} updates", self.total_updates());
        }
        let st = &mut self.state;
        let cfg = st.config.clone();
        let mut rollout = collect_rollout(
            &self.agent.net,
            &mut st.envs,
            cfg.ppo.rollout_length,
            &mut st.action_rng,
            st.normalizer.as_mut(),
        )?;
        st.env_steps += cfg.ppo.steps_per_update();
        let completed = &rollout.completed_returns;
        if !completed.is_empty() {
            st.last_rollout_return = completed.iter().sum::<f64>() / completed.len() as f64;
        }
        st.episodes_completed += completed.len() as u64;
        for &r in completed {
            if st.recent_returns.len() == RETURN_WINDOW {
                st.recent_returns.pop_front();
            }
            st.recent_returns.push_back(r);
        }
        st.selector.feedback(st.last_rollout_return)?;
        let selector_probs = match &st.selector {
            Selector::Rl2(rl2) => rl2.probabilities(),
            _ => Vec::new(),
        };
        let aug = st.selector.choose()?;
        rollout.compute_advantages(cfg.ppo.gamma, cfg.ppo.gae_lambda);

        if cfg.ppo.lr_decay {
            let total = cfg.ppo.total_steps.div_ceil(cfg.ppo.steps_per_update());
            let frac = 1.0 - st.update as f64 / total as f64;
            self.agent.optimizer.lr = cfg.ppo.learning_rate * frac;
        }
        let drac = DracConfig { alpha_r: cfg.drac.alpha_r, mode: cfg.effective_mode() };
        let stats: UpdateStats = {
            let source: &mut dyn AugmentationSource<f32> = match (&mut st.meta, aug) {
                (Some(meta), _) => meta,
                (None, Some(id)) => {
                    st.augmenter.id = id;
                    &mut st.augmenter
                }
                (None, None) => &mut st.augmenter,
            };
            drac_update(&mut self.agent, &rollout, source, &cfg.ppo, &drac, &mut st.shuffle_rng)?
        };
        st.update += 1;

        let test_return = if cfg.eval_interval > 0 && st.update % cfg.eval_interval == 0 {
            Some(
                evaluate_policy(
                    &self.agent.net,
                    &cfg.env,
                    &self.test_seeds,
                    cfg.eval_episodes,
                    cfg.eval_greedy,
                    EVAL_PARALLEL,
                    &mut st.eval_rng,
                )?
                .mean_return,
            )
        } else {
            None
        };
        let recent: Vec<f64> = st.recent_returns.iter().copied().collect();
        let (mean_ret, median_ret) = match summarize(&recent) {
            Ok(s) => (s.mean, s.median),
            Err(_) => (0.0, 0.0),
        };
        let (q_values, counts) = match &st.selector {
            Selector::Ucb(ucb) => (ucb.q_values().to_vec(), ucb.counts().to_vec()),
            _ => (Vec::new(), Vec::new()),
        };
        Ok(MetricsRecord {
            update: st.update,
            env_steps: st.env_steps,
            mode: drac.mode.as_str().into(),
            aug_id: aug,
            j_pi: stats.j_pi,
            j_v: stats.j_v,
            entropy: stats.entropy,
            g_pi: stats.g_pi,
            g_v: stats.g_v,
            mean_ratio: stats.mean_ratio,
            max_ratio_dev: stats.max_ratio_dev,
            first_ratio_dev: stats.first_ratio_dev,
            grad_norm: stats.grad_norm,
            mean_episode_return: mean_ret,
            median_episode_return: median_ret,
            episodes_completed: st.episodes_completed,
            rollout_return: st.last_rollout_return,
            q_values,
            counts,
            selector_probs,
            test_return,
            learning_rate: self.agent.optimizer.lr,
            wall_clock: 0.0,
        })
    }

    /// Evaluates the current policy on the train or test level pool.
    pub fn evaluate<R: Rng + ?Sized>(&self, test: bool, episodes: usize, greedy: bool, rng: &mut R) -> Result<EvalResult> {
        let pool = if test { &self.test_seeds } else { &self.train_seeds };
        evaluate_policy(&self.agent.net, &self.state.config.env, pool, episodes, greedy, EVAL_PARALLEL, rng)
    }
}
