//! Automatic augmentation selection between agent updates.

mod meta;
mod rl2;
mod ucb;

pub use meta::{meta_gradient, meta_objective, MetaAugmenter, MetaConfig, MetaGradient};
pub use rl2::{reinforce_logit_grad, Rl2Config, Rl2Net, Rl2Pass, Rl2Selector};
pub use ucb::UcbSelector;

use rand::Rng;

use crate::augment::{AugmentationId, SAMPLED};

/// Uniform draw over the eight augmentations with sampled parameters.
pub fn rand_select<R: Rng + ?Sized>(rng: &mut R) -> AugmentationId {
    SAMPLED[rng.random_range(0..SAMPLED.len())]
}
