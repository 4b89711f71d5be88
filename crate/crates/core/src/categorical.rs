//! Numerically stable helpers for categorical distributions given logits.

use alloc::vec::Vec;

use rand::Rng;

use crate::Scalar;

pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(logits[0], S::max);
    let mut sum = S::ZERO;
    for &z in logits {
        sum += (z - max).exp();
    }
    let lse = max + sum.ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    log_softmax(logits).into_iter().map(S::exp).collect()
}

/// Entropy in nats from log-probabilities.
pub fn entropy<S: Scalar>(log_probs: &[S]) -> S {
    let mut h = S::ZERO;
    for &lp in log_probs {
        h -= lp.exp() * lp;
    }
    h
}

/// `KL[p ‖ q]` in nats from log-probabilities. Terms with `p = 0` contribute 0.
pub fn kl_from_log_probs<S: Scalar>(log_p: &[S], log_q: &[S]) -> S {
    let mut kl = S::ZERO;
    for (&lp, &lq) in log_p.iter().zip(log_q) {
        let p = lp.exp();
        if p > S::ZERO {
            kl += p * (lp - lq);
        }
    }
    kl
}

/// `KL[p ‖ q]` in nats for probability vectors. Terms with `p = 0` contribute 0.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (libm::log(pi) - libm::log(qi)))
        .sum()
}

/// Inverse-CDF draw from a probability vector.
pub fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
