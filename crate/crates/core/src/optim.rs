use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<S>,
    v: Vec<S>,
    t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(num_params: usize, lr: f64, eps: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps, m: vec![S::ZERO; num_params], v: vec![S::ZERO; num_params], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends `grads` (gradients of a loss to minimise).
    pub fn step(&mut self, params: &mut [S], grads: &[S]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let t = self.t as f64;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one_b1 = S::from_f64(1.0 - self.beta1);
        let one_b2 = S::from_f64(1.0 - self.beta2);
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        let step = S::from_f64(self.lr / c1);
        let c2_sqrt = S::from_f64(libm::sqrt(c2));
        let eps = S::from_f64(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            let denom = self.v[i].sqrt() / c2_sqrt + eps;
            params[i] -= step * self.m[i] / denom;
        }
    }
}

/// L2 norm of `grads`.
pub fn global_norm<S: Scalar>(grads: &[S]) -> f64 {
    libm::sqrt(grads.iter().map(|g| g.to_f64() * g.to_f64()).sum())
}

/// Rescales `grads` so the global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [S], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let scale = S::from_f64(max_norm / (norm + 1e-6));
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
