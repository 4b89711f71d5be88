//! Data-regularized actor-critic: the policy and value regularizers, the
//! regularized update, and the naive augmentation baseline.
//!
//! The objective maximised per minibatch is
//! `J_PPO − α_r (G_π + G_V)` with
//! `G_π = mean KL[π̂(·|s) ‖ π(·|f(s, ν))]` and `G_V = mean (V̂(s) − V(f(s, ν)))²`,
//! where hatted quantities come from the clean forward pass and receive no
//! gradient.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply, sample_params, AugmentationId};
use crate::categorical::{kl_from_log_probs, log_softmax};
use crate::error::{bail, Result};
use crate::nn::{ForwardPass, PolicyValueNet};
use crate::optim::{clip_global_norm, Adam};
use crate::ppo::{minibatch_indices, ppo_sample, Minibatch, PpoConfig, RolloutBatch};
use crate::Scalar;

/// Samples processed per forward/backward pass inside a minibatch.
pub const CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DracMode {
    Drac,
    DraPolicyOnly,
    DrcValueOnly,
    NaiveRad,
    None,
}

impl DracMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DracMode::Drac => "drac",
            DracMode::DraPolicyOnly => "dra_policy_only",
            DracMode::DrcValueOnly => "drc_value_only",
            DracMode::NaiveRad => "naive_rad",
            DracMode::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Drac, Self::DraPolicyOnly, Self::DrcValueOnly, Self::NaiveRad, Self::None]
            .into_iter()
            .find(|m| m.as_str() == s)
    }

    /// Weights of `(G_π, G_V)` in the regularizer.
    pub fn regularizer_weights(self) -> (f64, f64) {
        match self {
            DracMode::Drac => (1.0, 1.0),
            DracMode::DraPolicyOnly => (1.0, 0.0),
            DracMode::DrcValueOnly => (0.0, 1.0),
            DracMode::NaiveRad | DracMode::None => (0.0, 0.0),
        }
    }

    pub fn uses_augmentation(self) -> bool {
        self != DracMode::None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DracConfig {
    pub alpha_r: f64,
    pub mode: DracMode,
}

impl Default for DracConfig {
    fn default() -> Self {
        Self { alpha_r: 0.1, mode: DracMode::Drac }
    }
}

impl DracConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_r >= 0.0 && self.alpha_r.is_finite()) {
            bail!(Config, "alpha_r must be a finite non-negative number, got {}", self.alpha_r);
        }
        Ok(())
    }
}

/// Produces augmented copies of observation batches for the update.
pub trait AugmentationSource<S> {
    /// Called once at the start of every epoch of an update.
    fn begin_epoch(&mut self, _net: &PolicyValueNet<S>, _rollout: &RolloutBatch) -> Result<()> {
        Ok(())
    }

    /// Augments `batch` images of `size × size × 3`, one fresh `ν` per image.
    fn augment(&mut self, observations: &[S], batch: usize, size: usize) -> Result<Vec<S>>;
}

/// A fixed transformation with `ν` drawn per sample from a dedicated stream.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampledAugmenter {
    pub id: AugmentationId,
    rng: ChaCha8Rng,
}

impl SampledAugmenter {
    pub fn new(id: AugmentationId, rng: ChaCha8Rng) -> Result<Self> {
        if id == AugmentationId::LearnedConv {
            bail!(Usage, "learned_conv cannot be sampled; use the meta-learned augmenter");
        }
        Ok(Self { id, rng })
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl<S: Scalar> AugmentationSource<S> for SampledAugmenter {
    fn augment(&mut self, observations: &[S], batch: usize, size: usize) -> Result<Vec<S>> {
        augment_with(self.id, observations, batch, size, &mut self.rng)
    }
}

/// Applies `id` with an independent `ν` per image.
pub fn augment_with<S: Scalar, R: Rng + ?Sized>(
    id: AugmentationId,
    observations: &[S],
    batch: usize,
    size: usize,
    rng: &mut R,
) -> Result<Vec<S>> {
    let stride = size * size * 3;
    if observations.len() != batch * stride {
        bail!(Input, "expected {batch} images of {size}x{size}x3, got {} values", observations.len());
    }
    let mut out = Vec::with_capacity(observations.len());
    for image in observations.chunks_exact(stride) {
        let params = sample_params(id, size, rng)?;
        out.extend(apply(&params, image, size)?);
    }
    Ok(out)
}

/// Per-sample regularizer values and the gradient of
/// `w_π·KL + w_V·(V̂ − V_aug)²` with respect to the augmented-branch outputs.
#[derive(Clone, Debug)]
pub struct RegularizerTerms<S> {
    pub kl: Vec<f64>,
    pub value_gap: Vec<f64>,
    pub grad_logits: Vec<S>,
    pub grad_values: Vec<S>,
}

/// Regularizer terms from a clean pass (treated as constant) and an
/// augmented pass over the same samples.
pub fn regularizer_terms<S: Scalar>(
    clean: &ForwardPass<S>,
    augmented: &ForwardPass<S>,
    num_actions: usize,
    w_pi: f64,
    w_v: f64,
) -> Result<RegularizerTerms<S>> {
    let n = clean.batch;
    assert_eq!(augmented.batch, n);
    let a = num_actions;
    let mut terms = RegularizerTerms {
        kl: Vec::with_capacity(n),
        value_gap: Vec::with_capacity(n),
        grad_logits: vec![S::ZERO; n * a],
        grad_values: vec![S::ZERO; n],
    };
    let (w_pi_s, w_v_s) = (S::from_f64(w_pi), S::from_f64(w_v));
    for i in 0..n {
        let lp = log_softmax(&clean.logits[i * a..(i + 1) * a]);
        let lq = log_softmax(&augmented.logits[i * a..(i + 1) * a]);
        let kl = kl_from_log_probs(&lp, &lq);
        // ∂KL[p̂ ‖ softmax(z)]/∂z = q − p̂.
        for j in 0..a {
            terms.grad_logits[i * a + j] = w_pi_s * (lq[j].exp() - lp[j].exp());
        }
        let gap = augmented.values[i] - clean.values[i];
        terms.grad_values[i] = w_v_s * S::from_f64(2.0) * gap;
        terms.kl.push(kl.to_f64());
        terms.value_gap.push(gap.to_f64() * gap.to_f64());
    }
    if terms.kl.iter().chain(&terms.value_gap).any(|v| !v.is_finite()) {
        bail!(Numeric, "non-finite regularizer value");
    }
    Ok(terms)
}

/// `G_π` over a batch of clean observations and their augmented copies.
pub fn policy_regularizer<S: Scalar>(
    net: &PolicyValueNet<S>,
    observations: &[S],
    augmented: &[S],
    batch: usize,
) -> Result<f64> {
    let clean = net.forward(observations, batch)?;
    let aug = net.forward(augmented, batch)?;
    let terms = regularizer_terms(&clean, &aug, net.num_actions(), 1.0, 0.0)?;
    Ok(terms.kl.iter().sum::<f64>() / batch as f64)
}

/// `G_V` over a batch of clean observations and their augmented copies.
pub fn value_regularizer<S: Scalar>(
    net: &PolicyValueNet<S>,
    observations: &[S],
    augmented: &[S],
    batch: usize,
) -> Result<f64> {
    let clean = net.forward(observations, batch)?;
    let aug = net.forward(augmented, batch)?;
    let terms = regularizer_terms(&clean, &aug, net.num_actions(), 0.0, 1.0)?;
    Ok(terms.value_gap.iter().sum::<f64>() / batch as f64)
}

/// Value and parameter gradient of `w_π G_π + w_V G_V`, optionally also the
/// gradient with respect to the augmented observations.
pub fn regularizer_gradient<S: Scalar>(
    net: &PolicyValueNet<S>,
    observations: &[S],
    augmented: &[S],
    batch: usize,
    (w_pi, w_v): (f64, f64),
    grads: &mut [S],
    grad_augmented: Option<&mut [S]>,
) -> Result<(f64, f64)> {
    let clean = net.forward(observations, batch)?;
    let aug = net.forward(augmented, batch)?;
    let inv = 1.0 / batch as f64;
    let terms = regularizer_terms(&clean, &aug, net.num_actions(), w_pi * inv, w_v * inv)?;
    net.backward(augmented, &aug, &terms.grad_logits, &terms.grad_values, grads, grad_augmented);
    let g_pi = terms.kl.iter().sum::<f64>() * inv;
    let g_v = terms.value_gap.iter().sum::<f64>() * inv;
    Ok((g_pi, g_v))
}

/// Means over the minibatches of one update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub j_pi: f64,
    pub j_v: f64,
    pub entropy: f64,
    pub g_pi: f64,
    pub g_v: f64,
    pub mean_ratio: f64,
    /// Largest `|r − 1|` over every sample of the update.
    pub max_ratio_dev: f64,
    /// Largest `|r − 1|` on the first minibatch of the first epoch.
    pub first_ratio_dev: f64,
    /// Mean pre-clipping gradient norm.
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// The PPO learner: network plus optimizer.
#[derive(Clone, Debug)]
pub struct Agent<S> {
    pub net: PolicyValueNet<S>,
    pub optimizer: Adam<S>,
}

impl<S: Scalar> Agent<S> {
    pub fn new(net: PolicyValueNet<S>, cfg: &PpoConfig) -> Self {
        let optimizer = Adam::new(net.num_params(), cfg.learning_rate, cfg.adam_eps);
        Self { net, optimizer }
    }
}

/// One DrAC update (`epochs × minibatches` gradient steps). `shuffle` drives
/// minibatch partitioning only; `source` owns the augmentation randomness.
/// With `mode = NaiveRad` the augmented observations replace the clean ones
/// inside the PPO terms instead.
pub fn drac_update<S: Scalar, R: Rng + ?Sized>(
    agent: &mut Agent<S>,
    rollout: &RolloutBatch,
    source: &mut dyn AugmentationSource<S>,
    ppo: &PpoConfig,
    drac: &DracConfig,
    shuffle: &mut R,
) -> Result<UpdateStats> {
    ppo.validate()?;
    drac.validate()?;
    if !rollout.has_advantages() {
        bail!(State, "advantages have not been computed for this rollout");
    }
    let mut stats = UpdateStats::default();
    let size = rollout.obs_size;
    for epoch in 0..ppo.epochs {
        if drac.mode.uses_augmentation() {
            source.begin_epoch(&agent.net, rollout)?;
        }
        for (mi, indices) in minibatch_indices(rollout.len(), ppo.minibatches, shuffle).into_iter().enumerate() {
            let step = minibatch_step(agent, rollout, &indices, source, ppo, drac, size)
                .map_err(|e| e.in_minibatch(epoch * ppo.minibatches + mi))?;
            if epoch == 0 && mi == 0 {
                stats.first_ratio_dev = step.max_ratio_dev;
            }
            stats.j_pi += step.j_pi;
            stats.j_v += step.j_v;
            stats.entropy += step.entropy;
            stats.g_pi += step.g_pi;
            stats.g_v += step.g_v;
            stats.mean_ratio += step.mean_ratio;
            stats.max_ratio_dev = stats.max_ratio_dev.max(step.max_ratio_dev);
            stats.grad_norm += step.grad_norm;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches as f64;
    stats.j_pi /= m;
    stats.j_v /= m;
    stats.entropy /= m;
    stats.g_pi /= m;
    stats.g_v /= m;
    stats.mean_ratio /= m;
    stats.grad_norm /= m;
    Ok(stats)
}

/// The naive baseline: augmented observations inside the PPO surrogate, so
/// the ratio is `π(a|f(s)) / π_old(a|s)`, and no regularization.
pub fn naive_aug_update<S: Scalar, R: Rng + ?Sized>(
    agent: &mut Agent<S>,
    rollout: &RolloutBatch,
    source: &mut dyn AugmentationSource<S>,
    ppo: &PpoConfig,
    alpha_r: f64,
    shuffle: &mut R,
) -> Result<UpdateStats> {
    let cfg = DracConfig { alpha_r, mode: DracMode::NaiveRad };
    drac_update(agent, rollout, source, ppo, &cfg, shuffle)
}

/// Loss terms of one minibatch, as means over its samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MinibatchStats {
    pub j_pi: f64,
    pub j_v: f64,
    pub entropy: f64,
    pub g_pi: f64,
    pub g_v: f64,
    pub mean_ratio: f64,
    pub max_ratio_dev: f64,
    pub grad_norm: f64,
}

/// Unclipped parameter gradient of `−J_PPO + α_r (w_π G_π + w_V G_V)` on one
/// minibatch; `grad_norm` is left at zero. `augmented` holds the transformed
/// minibatch observations when the mode uses augmentation.
pub fn minibatch_gradient<S: Scalar>(
    net: &PolicyValueNet<S>,
    mb: &Minibatch<S>,
    augmented: Option<&[S]>,
    ppo: &PpoConfig,
    drac: &DracConfig,
) -> Result<(Vec<S>, MinibatchStats)> {
    let n = mb.size;
    let l = mb.obs_len();
    let a = net.num_actions();
    if let Some(x) = augmented {
        if x.len() != mb.observations.len() {
            bail!(Input, "augmented batch has {} values, expected {}", x.len(), mb.observations.len());
        }
    }
    let naive = drac.mode == DracMode::NaiveRad;
    let (w_pi, w_v) = drac.mode.regularizer_weights();
    let regularize = w_pi + w_v > 0.0;
    let scale = 1.0 / n as f64;
    let reg_scale = drac.alpha_r * scale;

    let mut grads = net.zero_grads();
    let mut out = MinibatchStats::default();
    let inv_n = S::from_f64(scale);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let c = end - start;
        let clean_obs = &mb.observations[start * l..end * l];
        let aug_obs = augmented.map(|x| &x[start * l..end * l]);
        let ppo_obs = if naive { aug_obs.unwrap_or(clean_obs) } else { clean_obs };
        let pass = net.forward(ppo_obs, c)?;
        let mut grad_logits = vec![S::ZERO; c * a];
        let mut grad_values = vec![S::ZERO; c];
        for i in 0..c {
            let k = start + i;
            let s = ppo_sample(
                &pass.logits[i * a..(i + 1) * a],
                pass.values[i],
                mb.actions[k],
                mb.old_log_probs[k],
                mb.advantages[k],
                mb.returns[k],
                ppo,
            );
            for (g, &d) in grad_logits[i * a..(i + 1) * a].iter_mut().zip(&s.grad_logits) {
                *g = d * inv_n;
            }
            grad_values[i] = s.grad_value * inv_n;
            out.j_pi += s.surrogate;
            out.j_v += s.value_error;
            out.entropy += s.entropy;
            out.mean_ratio += s.ratio;
            out.max_ratio_dev = out.max_ratio_dev.max(libm::fabs(s.ratio - 1.0));
        }
        net.backward(ppo_obs, &pass, &grad_logits, &grad_values, &mut grads, None);

        if let (false, Some(aug_obs)) = (naive, aug_obs) {
            let aug_pass = net.forward(aug_obs, c)?;
            let terms = regularizer_terms(&pass, &aug_pass, a, w_pi * reg_scale, w_v * reg_scale)?;
            out.g_pi += terms.kl.iter().sum::<f64>();
            out.g_v += terms.value_gap.iter().sum::<f64>();
            if regularize && drac.alpha_r > 0.0 {
                net.backward(aug_obs, &aug_pass, &terms.grad_logits, &terms.grad_values, &mut grads, None);
            }
        }
    }
    out.j_pi *= scale;
    out.j_v *= scale;
    out.entropy *= scale;
    out.g_pi *= scale;
    out.g_v *= scale;
    out.mean_ratio *= scale;
    if !(out.j_pi.is_finite() && out.j_v.is_finite() && out.entropy.is_finite()) {
        bail!(Numeric, "non-finite loss (J_pi={}, J_V={}, S={})", out.j_pi, out.j_v, out.entropy);
    }
    Ok((grads, out))
}

fn minibatch_step<S: Scalar>(
    agent: &mut Agent<S>,
    rollout: &RolloutBatch,
    indices: &[usize],
    source: &mut dyn AugmentationSource<S>,
    ppo: &PpoConfig,
    drac: &DracConfig,
    size: usize,
) -> Result<MinibatchStats> {
    let mb = Minibatch::<S>::gather(rollout, indices)?;
    let augmented = if drac.mode.uses_augmentation() {
        Some(source.augment(&mb.observations, mb.size, size)?)
    } else {
        None
    };
    let (mut grads, mut out) = minibatch_gradient(&agent.net, &mb, augmented.as_deref(), ppo, drac)?;
    out.grad_norm = clip_global_norm(&mut grads, ppo.max_grad_norm);
    if !out.grad_norm.is_finite() {
        bail!(Numeric, "non-finite gradient norm");
    }
    let Agent { net, optimizer } = agent;
    optimizer.step(net.params_mut(), &grads);
    Ok(out)
}
