use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{learned_conv_apply, learned_conv_backward, KERNEL_LEN};
use crate::drac::{regularizer_gradient, AugmentationSource};
use crate::error::{bail, Result};
use crate::nn::PolicyValueNet;
use crate::ppo::RolloutBatch;
use crate::scalar::{cast_slice, Dual};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Inner adaptation step size.
    pub inner_lr: f64,
    /// Outer (meta) step size.
    pub outer_lr: f64,
    /// Fraction of environments whose transitions form the meta-train split.
    pub train_fraction: f64,
    /// Samples drawn from the meta-train split per meta-update; the meta-test
    /// split contributes proportionally fewer.
    pub batch_size: usize,
    pub first_order: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self { inner_lr: 1e-2, outer_lr: 7e-4, train_fraction: 0.9, batch_size: 64, first_order: false }
    }
}

/// `G_π + G_V` of the learned convolution `psi` on a frozen network, and its
/// gradient with respect to `psi`.
pub fn meta_objective<S: Scalar>(
    net: &PolicyValueNet<S>,
    observations: &[S],
    batch: usize,
    size: usize,
    psi: &[S],
) -> Result<(f64, Vec<S>)> {
    let stride = size * size * 3;
    if observations.len() != batch * stride {
        bail!(Input, "expected {batch} images of {size}x{size}x3");
    }
    let mut augmented = Vec::with_capacity(observations.len());
    for image in observations.chunks_exact(stride) {
        augmented.extend(learned_conv_apply(psi, image, size)?);
    }
    let mut scratch = net.zero_grads();
    let mut grad_aug = alloc::vec![S::ZERO; augmented.len()];
    let (g_pi, g_v) =
        regularizer_gradient(net, observations, &augmented, batch, (1.0, 1.0), &mut scratch, Some(&mut grad_aug))?;
    let mut grad_psi = alloc::vec![S::ZERO; KERNEL_LEN];
    for (image, g) in observations.chunks_exact(stride).zip(grad_aug.chunks_exact(stride)) {
        learned_conv_backward(image, g, size, &mut grad_psi);
    }
    Ok((g_pi + g_v, grad_psi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaGradient {
    pub train_loss: f64,
    pub adapted: Vec<f64>,
    pub test_loss: f64,
    /// `∇ψ L_test(ψ − α ∇L_train(ψ))`.
    pub gradient: Vec<f64>,
}

/// Gradient of the meta-test objective through one inner step on the
/// meta-train objective. The second-order term `(I − α H_train) ∇L_test(ψ')`
/// uses an exact Hessian-vector product from forward-over-reverse dual
/// numbers; `first_order` drops it.
#[allow(clippy::too_many_arguments)]
pub fn meta_gradient(
    net: &PolicyValueNet<f64>,
    train_obs: &[f64],
    n_train: usize,
    test_obs: &[f64],
    n_test: usize,
    size: usize,
    psi: &[f64],
    inner_lr: f64,
    first_order: bool,
) -> Result<MetaGradient> {
    let (train_loss, g_train) = meta_objective(net, train_obs, n_train, size, psi)?;
    let adapted: Vec<f64> = psi.iter().zip(&g_train).map(|(p, g)| p - inner_lr * g).collect();
    let (test_loss, g_test) = meta_objective(net, test_obs, n_test, size, &adapted)?;
    let gradient = if first_order {
        g_test
    } else {
        let dual_net: PolicyValueNet<Dual<f64>> = net.cast();
        let dual_obs: Vec<Dual<f64>> = train_obs.iter().map(|&v| Dual::constant(v)).collect();
        let dual_psi: Vec<Dual<f64>> = psi.iter().zip(&g_test).map(|(&p, &v)| Dual::new(p, v)).collect();
        let (_, g) = meta_objective(&dual_net, &dual_obs, n_train, size, &dual_psi)?;
        g_test.iter().zip(&g).map(|(gt, hv)| gt - inner_lr * hv.eps).collect()
    };
    if gradient.iter().any(|g| !g.is_finite()) {
        bail!(Numeric, "non-finite meta-gradient");
    }
    Ok(MetaGradient { train_loss, adapted, test_loss, gradient })
}

/// Learned 3×3×3×3 convolution augmentation, meta-updated once per epoch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetaAugmenter {
    weights: Vec<f32>,
    config: MetaConfig,
    rng: ChaCha8Rng,
    last: Option<(f64, f64)>,
}

impl MetaAugmenter {
    pub fn new(config: MetaConfig, seed: u64) -> Result<Self> {
        if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) || config.batch_size == 0 {
            bail!(Config, "meta split fraction must lie in (0, 1) and batch size be positive");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / libm::sqrt(27.0);
        let weights = (0..KERNEL_LEN).map(|_| rng.random_range(-bound..bound) as f32).collect();
        Ok(Self { weights, config, rng, last: None })
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f32>) -> Result<()> {
        if weights.len() != KERNEL_LEN || weights.iter().any(|w| !w.is_finite()) {
            bail!(Input, "learned conv weights must be {KERNEL_LEN} finite values");
        }
        self.weights = weights;
        Ok(())
    }

    /// Meta-train and meta-test losses of the most recent meta-update.
    pub fn last_losses(&self) -> Option<(f64, f64)> {
        self.last
    }

    /// One meta-update of the convolution weights against the frozen `net`.
    pub fn meta_update<S: Scalar>(&mut self, net: &PolicyValueNet<S>, rollout: &RolloutBatch) -> Result<MetaGradient> {
        let envs = rollout.envs;
        if envs < 2 || rollout.steps == 0 {
            bail!(Input, "meta-update needs at least two environments to split, got {envs}");
        }
        let n_train_envs = ((envs as f64 * self.config.train_fraction).round() as usize).clamp(1, envs - 1);
        let train_pool: Vec<usize> = (0..rollout.len()).filter(|i| i % envs < n_train_envs).collect();
        let test_pool: Vec<usize> = (0..rollout.len()).filter(|i| i % envs >= n_train_envs).collect();
        let n_train = self.config.batch_size.min(train_pool.len());
        let n_test = ((n_train as f64 * (1.0 - self.config.train_fraction) / self.config.train_fraction).ceil() as usize)
            .max(1)
            .min(test_pool.len());
        let gather = |pool: &[usize], n: usize, rng: &mut ChaCha8Rng| {
            let mut obs = Vec::with_capacity(n * rollout.obs_len());
            for k in index::sample(rng, pool.len(), n) {
                obs.extend(rollout.observation(pool[k]).iter().map(|&p| p as f64 / 255.0));
            }
            obs
        };
        let train_obs = gather(&train_pool, n_train, &mut self.rng);
        let test_obs = gather(&test_pool, n_test, &mut self.rng);
        let net64: PolicyValueNet<f64> = net.cast();
        let psi: Vec<f64> = cast_slice(&self.weights);
        let meta = meta_gradient(
            &net64,
            &train_obs,
            n_train,
            &test_obs,
            n_test,
            rollout.obs_size,
            &psi,
            self.config.inner_lr,
            self.config.first_order,
        )?;
        let updated: Vec<f32> =
            psi.iter().zip(&meta.gradient).map(|(p, g)| (p - self.config.outer_lr * g) as f32).collect();
        if updated.iter().any(|w| !w.is_finite()) {
            bail!(Numeric, "meta-update produced non-finite weights");
        }
        self.weights = updated;
        self.last = Some((meta.train_loss, meta.test_loss));
        Ok(meta)
    }
}

impl AugmentationSource<f32> for MetaAugmenter {
    fn begin_epoch(&mut self, net: &PolicyValueNet<f32>, rollout: &RolloutBatch) -> Result<()> {
        self.meta_update(net, rollout).map(|_| ())
    }

    fn augment(&mut self, observations: &[f32], batch: usize, size: usize) -> Result<Vec<f32>> {
        let stride = size * size * 3;
        if observations.len() != batch * stride {
            bail!(Input, "expected {batch} images of {size}x{size}x3");
        }
        let mut out = Vec::with_capacity(observations.len());
        for image in observations.chunks_exact(stride) {
            out.extend(learned_conv_apply(&self.weights, image, size)?);
        }
        Ok(out)
    }
}
