//! Actor-critic machinery: rollout collection, generalized advantage
//! estimation and the clipped surrogate objective.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::{entropy, log_softmax, sample};
use crate::env::{Environment, VecEnv};
use crate::error::{bail, Result};
use crate::nn::PolicyValueNet;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub rollout_length: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub max_grad_norm: f64,
    pub num_envs: usize,
    pub total_steps: u64,
    pub normalize_rewards: bool,
    pub lr_decay: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            gae_lambda: 0.95,
            rollout_length: 256,
            epochs: 3,
            minibatches: 8,
            entropy_coef: 0.01,
            value_coef: 0.5,
            clip: 0.2,
            learning_rate: 5e-4,
            adam_eps: 1e-5,
            max_grad_norm: 0.5,
            num_envs: 16,
            total_steps: 500_000,
            normalize_rewards: true,
            lr_decay: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollout_length == 0 || self.num_envs == 0 || self.epochs == 0 || self.minibatches == 0 {
            bail!(Config, "rollout_length, num_envs, epochs and minibatches must be positive");
        }
        if (self.rollout_length * self.num_envs) % self.minibatches != 0 {
            bail!(
                Config,
                "rollout_length x num_envs = {} is not divisible by minibatches = {}",
                self.rollout_length * self.num_envs,
                self.minibatches
            );
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            bail!(Config, "gamma and gae_lambda must lie in [0, 1]");
        }
        if self.clip <= 0.0 || self.learning_rate <= 0.0 {
            bail!(Config, "clip and learning_rate must be positive");
        }
        Ok(())
    }

    pub fn minibatch_size(&self) -> usize {
        self.rollout_length * self.num_envs / self.minibatches
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.rollout_length * self.num_envs) as u64
    }
}

/// Fixed-horizon trajectory storage, indexed `t * envs + env`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub steps: usize,
    pub envs: usize,
    pub obs_size: usize,
    /// `steps × envs × obs_size² × 3` raw pixels.
    pub observations: Vec<u8>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub old_log_probs: Vec<f64>,
    pub old_values: Vec<f64>,
    /// Empty until [`RolloutBatch::compute_advantages`].
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// `V(s_T)` per environment.
    pub bootstrap_values: Vec<f64>,
    /// Undiscounted returns of episodes that finished during collection.
    pub completed_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.steps * self.envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn obs_len(&self) -> usize {
        self.obs_size * self.obs_size * 3
    }

    pub fn observation(&self, index: usize) -> &[u8] {
        let l = self.obs_len();
        &self.observations[index * l..(index + 1) * l]
    }

    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let (adv, ret) = compute_gae(
            &self.rewards,
            &self.old_values,
            &self.dones,
            &self.bootstrap_values,
            self.envs,
            gamma,
            lambda,
        );
        self.advantages = adv;
        self.returns = ret;
    }

    pub fn has_advantages(&self) -> bool {
        self.advantages.len() == self.len()
    }
}

/// GAE over a `T × N` batch:
/// `δ_t = r_t + γ V(s_{t+1})(1 − d_t) − V(s_t)`,
/// `A_t = δ_t + γλ(1 − d_t) A_{t+1}`, returns `= A + V`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    envs: usize,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let len = rewards.len();
    assert_eq!(values.len(), len);
    assert_eq!(dones.len(), len);
    assert_eq!(bootstrap.len(), envs);
    let steps = len / envs;
    let mut adv = vec![0.0; len];
    for e in 0..envs {
        let mut next_adv = 0.0;
        let mut next_value = bootstrap[e];
        for t in (0..steps).rev() {
            let i = t * envs + e;
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * live - values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
            next_value = values[i];
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Scales rewards by a running estimate of the discounted-return standard
/// deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    gamma: f64,
    running: Vec<f64>,
    mean: f64,
    var: f64,
    count: f64,
    clip: f64,
}

impl RewardNormalizer {
    pub fn new(envs: usize, gamma: f64) -> Self {
        Self { gamma, running: vec![0.0; envs], mean: 0.0, var: 1.0, count: 1e-4, clip: 10.0 }
    }

    pub fn normalize(&mut self, rewards: &[f64], dones: &[bool]) -> Vec<f64> {
        for (g, &r) in self.running.iter_mut().zip(rewards) {
            *g = *g * self.gamma + r;
        }
        // Batched moment update over this step's discounted returns.
        let n = self.running.len() as f64;
        let batch_mean = self.running.iter().sum::<f64>() / n;
        let batch_var = self.running.iter().map(|g| (g - batch_mean) * (g - batch_mean)).sum::<f64>() / n;
        let delta = batch_mean - self.mean;
        let total = self.count + n;
        self.mean += delta * n / total;
        let m2 = self.var * self.count + batch_var * n + delta * delta * self.count * n / total;
        self.var = m2 / total;
        self.count = total;
        let scale = libm::sqrt(self.var + 1e-8);
        let out = rewards.iter().map(|&r| (r / scale).clamp(-self.clip, self.clip)).collect();
        for (g, &d) in self.running.iter_mut().zip(dones) {
            if d {
                *g = 0.0;
            }
        }
        out
    }
}

/// Runs the current policy for `steps` steps in every environment.
///
/// `rng` drives action sampling only.
pub fn collect_rollout<S: Scalar, E: Environment, R: Rng + ?Sized>(
    net: &PolicyValueNet<S>,
    envs: &mut VecEnv<E>,
    steps: usize,
    rng: &mut R,
    mut normalizer: Option<&mut RewardNormalizer>,
) -> Result<RolloutBatch> {
    let n = envs.len();
    let obs_size = envs.observation_size();
    let obs_len = obs_size * obs_size * 3;
    if net.input_len() != obs_len {
        bail!(Input, "network expects {} inputs but observations have {obs_len}", net.input_len());
    }
    let mut batch = RolloutBatch {
        steps,
        envs: n,
        obs_size,
        observations: Vec::with_capacity(steps * n * obs_len),
        actions: Vec::with_capacity(steps * n),
        rewards: Vec::with_capacity(steps * n),
        dones: Vec::with_capacity(steps * n),
        old_log_probs: Vec::with_capacity(steps * n),
        old_values: Vec::with_capacity(steps * n),
        advantages: Vec::new(),
        returns: Vec::new(),
        bootstrap_values: Vec::new(),
        completed_returns: Vec::new(),
    };
    let a = net.num_actions();
    let mut input = Vec::with_capacity(n * obs_len);
    for _ in 0..steps {
        input.clear();
        for obs in envs.observations() {
            batch.observations.extend_from_slice(&obs.pixels);
            input.extend(obs.pixels.iter().map(|&p| S::from_f64(p as f64 / 255.0)));
        }
        let pass = net.forward(&input, n)?;
        let mut actions = Vec::with_capacity(n);
        for e in 0..n {
            let logp = log_softmax(&pass.logits[e * a..(e + 1) * a]);
            let probs: Vec<f64> = logp.iter().map(|l| l.exp().to_f64()).collect();
            let action = sample(&probs, rng);
            batch.old_log_probs.push(logp[action].to_f64());
            batch.old_values.push(pass.values[e].to_f64());
            actions.push(action);
        }
        let out = envs.step(&actions)?;
        let rewards = match normalizer.as_deref_mut() {
            Some(norm) => norm.normalize(&out.rewards, &out.dones),
            None => out.rewards.clone(),
        };
        batch.actions.extend(actions);
        batch.rewards.extend(rewards);
        batch.dones.extend(out.dones);
        batch.completed_returns.extend(out.completed_returns);
    }
    input.clear();
    for obs in envs.observations() {
        input.extend(obs.pixels.iter().map(|&p| S::from_f64(p as f64 / 255.0)));
    }
    let last = net.forward(&input, n)?;
    batch.bootstrap_values = last.values.iter().map(|v| v.to_f64()).collect();
    Ok(batch)
}

/// A gathered minibatch with per-minibatch normalized advantages.
#[derive(Clone, Debug)]
pub struct Minibatch<S> {
    pub size: usize,
    pub obs_size: usize,
    /// `size × obs_size² × 3`, unit interval.
    pub observations: Vec<S>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl<S: Scalar> Minibatch<S> {
    pub fn gather(rollout: &RolloutBatch, indices: &[usize]) -> Result<Self> {
        if !rollout.has_advantages() {
            bail!(State, "advantages have not been computed for this rollout");
        }
        let mut observations = Vec::with_capacity(indices.len() * rollout.obs_len());
        for &i in indices {
            observations.extend(rollout.observation(i).iter().map(|&p| S::from_f64(p as f64 / 255.0)));
        }
        let raw: Vec<f64> = indices.iter().map(|&i| rollout.advantages[i]).collect();
        Ok(Self {
            size: indices.len(),
            obs_size: rollout.obs_size,
            observations,
            actions: indices.iter().map(|&i| rollout.actions[i]).collect(),
            old_log_probs: indices.iter().map(|&i| rollout.old_log_probs[i]).collect(),
            advantages: normalize_advantages(&raw),
            returns: indices.iter().map(|&i| rollout.returns[i]).collect(),
        })
    }

    pub fn obs_len(&self) -> usize {
        self.obs_size * self.obs_size * 3
    }
}

/// Zero mean, unit standard deviation (population), epsilon 1e-8.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Epoch-wise random partitions of `0..len` into `minibatches` parts.
pub fn minibatch_indices<R: Rng + ?Sized>(len: usize, minibatches: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(rng);
    let size = len / minibatches;
    perm.chunks(size).take(minibatches).map(|c| c.to_vec()).collect()
}

/// `min(r·Â, clip(r, 1−ε, 1+ε)·Â)` and its derivative with respect to `r`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped_ratio = ratio.clamp(1.0 - clip, 1.0 + clip);
    let clipped = clipped_ratio * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else if ratio > 1.0 - clip && ratio < 1.0 + clip {
        (clipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

/// Per-sample PPO terms and the gradient of the per-sample *loss*
/// `−(surr − c_v (V − R)² + c_e H)` with respect to logits and value.
#[derive(Clone, Debug)]
pub struct PpoSample<S> {
    pub surrogate: f64,
    pub value_error: f64,
    pub entropy: f64,
    pub ratio: f64,
    pub grad_logits: Vec<S>,
    pub grad_value: S,
}

pub fn ppo_sample<S: Scalar>(
    logits: &[S],
    value: S,
    action: usize,
    old_log_prob: f64,
    advantage: f64,
    ret: f64,
    cfg: &PpoConfig,
) -> PpoSample<S> {
    let logp = log_softmax(logits);
    let ratio_s = (logp[action] - S::from_f64(old_log_prob)).exp();
    let ratio = ratio_s.to_f64();
    let (surrogate, d_ratio) = clipped_surrogate(ratio, advantage, cfg.clip);
    let h = entropy(&logp);
    let diff = value - S::from_f64(ret);
    // ∂surr/∂z = d_ratio · r · (onehot − p); ∂H/∂z_j = −p_j (log p_j + H).
    let surr_scale = S::from_f64(d_ratio) * ratio_s;
    let c_e = S::from_f64(cfg.entropy_coef);
    let grad_logits = logp
        .iter()
        .enumerate()
        .map(|(j, &lp)| {
            let p = lp.exp();
            let onehot = if j == action { S::ONE } else { S::ZERO };
            let d_surr = surr_scale * (onehot - p);
            let d_ent = -p * (lp + h);
            -(d_surr + c_e * d_ent)
        })
        .collect();
    let grad_value = S::from_f64(2.0 * cfg.value_coef) * diff;
    PpoSample {
        surrogate,
        value_error: diff.to_f64() * diff.to_f64(),
        entropy: h.to_f64(),
        ratio,
        grad_logits,
        grad_value,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub mean: f64,
    pub max_abs_deviation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoLosses {
    pub j_pi: f64,
    pub j_v: f64,
    pub entropy: f64,
    pub ratio: RatioStats,
}

impl PpoLosses {
    /// `J_PPO = J_π − c_v J_V + c_e S`, to be maximised.
    pub fn objective(&self, cfg: &PpoConfig) -> f64 {
        self.j_pi - cfg.value_coef * self.j_v + cfg.entropy_coef * self.entropy
    }
}

/// Evaluates the PPO terms on a minibatch without updating anything.
pub fn ppo_losses<S: Scalar>(net: &PolicyValueNet<S>, mb: &Minibatch<S>, cfg: &PpoConfig) -> Result<PpoLosses> {
    let pass = net.forward(&mb.observations, mb.size)?;
    let a = net.num_actions();
    let mut acc = PpoLosses { j_pi: 0.0, j_v: 0.0, entropy: 0.0, ratio: RatioStats::default() };
    for i in 0..mb.size {
        let s = ppo_sample(
            &pass.logits[i * a..(i + 1) * a],
            pass.values[i],
            mb.actions[i],
            mb.old_log_probs[i],
            mb.advantages[i],
            mb.returns[i],
            cfg,
        );
        acc.j_pi += s.surrogate;
        acc.j_v += s.value_error;
        acc.entropy += s.entropy;
        acc.ratio.mean += s.ratio;
        acc.ratio.max_abs_deviation = acc.ratio.max_abs_deviation.max(libm::fabs(s.ratio - 1.0));
    }
    let n = mb.size as f64;
    acc.j_pi /= n;
    acc.j_v /= n;
    acc.entropy /= n;
    acc.ratio.mean /= n;
    if !(acc.j_pi.is_finite() && acc.j_v.is_finite() && acc.entropy.is_finite()) {
        bail!(Numeric, "non-finite PPO loss (J_pi={}, J_V={}, S={})", acc.j_pi, acc.j_v, acc.entropy);
    }
    Ok(acc)
}
