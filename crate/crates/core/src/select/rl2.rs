use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::{entropy, log_softmax, sample};
use crate::error::{bail, Result};
use crate::optim::Adam;

/// Single-layer LSTM followed by a linear head over the arms.
///
/// Parameters are one flat vector: `W (4H×D)`, `U (4H×H)`, `b (4H)`,
/// `V (A×H)`, `c (A)` with gate order input, forget, cell, output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rl2Net {
    pub arms: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

/// Activations of one recurrent step.
#[derive(Clone, Debug)]
pub struct Rl2Pass {
    pub input: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-nonlinearity gates `[i, f, g, o]`, each of length `H`.
    gates: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Rl2Net {
    pub fn new(arms: usize, hidden: usize, seed: u64) -> Self {
        let d = arms + 1;
        let n = 4 * hidden * d + 4 * hidden * hidden + 4 * hidden + arms * hidden + arms;
        let bound = 1.0 / libm::sqrt(hidden as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Self { arms, hidden, params }
    }

    pub fn input_dim(&self) -> usize {
        self.arms + 1
    }

    fn offsets(&self) -> [usize; 5] {
        let (h, d, a) = (self.hidden, self.input_dim(), self.arms);
        let w = 0;
        let u = w + 4 * h * d;
        let b = u + 4 * h * h;
        let v = b + 4 * h;
        let c = v + a * h;
        [w, u, b, v, c]
    }

    /// Network input for the previous choice and the return it earned.
    pub fn encode(&self, prev_choice: Option<usize>, prev_return: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.input_dim()];
        if let Some(k) = prev_choice {
            x[k] = 1.0;
        }
        x[self.arms] = prev_return;
        x
    }

    pub fn forward(&self, input: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Rl2Pass {
        let (hd, d, a) = (self.hidden, self.input_dim(), self.arms);
        let [w, u, b, v, c_off] = self.offsets();
        let p = &self.params;
        let mut gates = vec![0.0; 4 * hd];
        for (r, gate) in gates.iter_mut().enumerate() {
            let mut z = p[b + r];
            for j in 0..d {
                z += p[w + r * d + j] * input[j];
            }
            for j in 0..hd {
                z += p[u + r * hd + j] * h_prev[j];
            }
            *gate = if (2 * hd..3 * hd).contains(&r) { libm::tanh(z) } else { 1.0 / (1.0 + libm::exp(-z)) };
        }
        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for k in 0..hd {
            c[k] = gates[hd + k] * c_prev[k] + gates[k] * gates[2 * hd + k];
            h[k] = gates[3 * hd + k] * libm::tanh(c[k]);
        }
        let logits = (0..a)
            .map(|i| p[c_off + i] + (0..hd).map(|k| p[v + i * hd + k] * h[k]).sum::<f64>())
            .collect();
        Rl2Pass { input: input.to_vec(), h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), gates, c, h, logits }
    }

    /// Parameter gradient of a scalar given `∂/∂logits`, treating the
    /// previous hidden and cell states as constants.
    pub fn backward(&self, pass: &Rl2Pass, d_logits: &[f64]) -> Vec<f64> {
        let (hd, d, a) = (self.hidden, self.input_dim(), self.arms);
        let [w, u, b, v, c_off] = self.offsets();
        let p = &self.params;
        let g = &pass.gates;
        let mut grads = vec![0.0; p.len()];
        let mut dh = vec![0.0; hd];
        for i in 0..a {
            grads[c_off + i] += d_logits[i];
            for k in 0..hd {
                grads[v + i * hd + k] += d_logits[i] * pass.h[k];
                dh[k] += d_logits[i] * p[v + i * hd + k];
            }
        }
        let mut dz = vec![0.0; 4 * hd];
        for k in 0..hd {
            let tc = libm::tanh(pass.c[k]);
            let (gi, gf, gg, go) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let d_o = dh[k] * tc;
            let dc = dh[k] * go * (1.0 - tc * tc);
            dz[k] = dc * gg * gi * (1.0 - gi);
            dz[hd + k] = dc * pass.c_prev[k] * gf * (1.0 - gf);
            dz[2 * hd + k] = dc * gi * (1.0 - gg * gg);
            dz[3 * hd + k] = d_o * go * (1.0 - go);
        }
        for (r, &dzr) in dz.iter().enumerate() {
            grads[b + r] += dzr;
            for j in 0..d {
                grads[w + r * d + j] += dzr * pass.input[j];
            }
            for j in 0..hd {
                grads[u + r * hd + j] += dzr * pass.h_prev[j];
            }
        }
        grads
    }

    pub fn log_prob(&self, input: &[f64], h_prev: &[f64], c_prev: &[f64], choice: usize) -> f64 {
        log_softmax(&self.forward(input, h_prev, c_prev).logits)[choice]
    }
}

/// Gradient of the REINFORCE loss `−(advantage · log π(choice) + β H(π))`
/// with respect to the logits.
pub fn reinforce_logit_grad(logits: &[f64], choice: usize, advantage: f64, entropy_coef: f64) -> Vec<f64> {
    let logp = log_softmax(logits);
    let h = entropy(&logp);
    logp.iter()
        .enumerate()
        .map(|(j, &lp)| {
            let p = libm::exp(lp);
            let onehot = if j == choice { 1.0 } else { 0.0 };
            -(advantage * (onehot - p) + entropy_coef * (-p * (lp + h)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rl2Config {
    pub hidden: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub baseline_decay: f64,
}

impl Default for Rl2Config {
    fn default() -> Self {
        Self { hidden: 32, learning_rate: 5e-4, entropy_coef: 1e-3, baseline_decay: 0.99 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Pending {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    choice: usize,
}

/// Recurrent selector trained with REINFORCE on the returns that follow each
/// choice.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Rl2Selector {
    net: Rl2Net,
    optimizer: Adam<f64>,
    config: Rl2Config,
    h: Vec<f64>,
    c: Vec<f64>,
    prev_choice: Option<usize>,
    prev_return: f64,
    /// `None` until the first reward, which initialises it.
    baseline: Option<f64>,
    pending: Option<Pending>,
    rng: ChaCha8Rng,
}

impl Rl2Selector {
    pub fn new(arms: usize, config: Rl2Config, seed: u64) -> Result<Self> {
        if arms == 0 || config.hidden == 0 {
            bail!(Config, "RL2 selector needs at least one arm and a positive hidden size");
        }
        let net = Rl2Net::new(arms, config.hidden, seed);
        let optimizer = Adam::new(net.params.len(), config.learning_rate, 1e-5);
        let hidden = config.hidden;
        Ok(Self {
            net,
            optimizer,
            config,
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
            prev_choice: None,
            prev_return: 0.0,
            baseline: None,
            pending: None,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5e1e_c70f),
        })
    }

    pub fn net(&self) -> &Rl2Net {
        &self.net
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    /// Probabilities the next [`Rl2Selector::select`] would sample from.
    pub fn probabilities(&self) -> Vec<f64> {
        let x = self.net.encode(self.prev_choice, self.prev_return);
        let pass = self.net.forward(&x, &self.h, &self.c);
        log_softmax(&pass.logits).into_iter().map(libm::exp).collect()
    }

    /// Advances the recurrent state and samples an arm.
    pub fn select(&mut self) -> Result<usize> {
        if self.pending.is_some() {
            bail!(State, "RL2 selection is still awaiting its reward");
        }
        let x = self.net.encode(self.prev_choice, self.prev_return);
        let pass = self.net.forward(&x, &self.h, &self.c);
        if pass.logits.iter().any(|l| !l.is_finite()) {
            bail!(Numeric, "non-finite RL2 selector logits");
        }
        let probs: Vec<f64> = log_softmax(&pass.logits).into_iter().map(libm::exp).collect();
        let choice = sample(&probs, &mut self.rng);
        self.pending = Some(Pending { input: x, h_prev: self.h.clone(), c_prev: self.c.clone(), choice });
        self.h = pass.h;
        self.c = pass.c;
        Ok(choice)
    }

    /// One REINFORCE step on the reward that followed the pending choice.
    pub fn learn(&mut self, reward: f64) -> Result<()> {
        let Some(p) = self.pending.take() else {
            bail!(State, "RL2 reward without a pending selection");
        };
        if !reward.is_finite() {
            bail!(Input, "non-finite RL2 reward {reward}");
        }
        let baseline = *self.baseline.get_or_insert(reward);
        let pass = self.net.forward(&p.input, &p.h_prev, &p.c_prev);
        let d_logits = reinforce_logit_grad(&pass.logits, p.choice, reward - baseline, self.config.entropy_coef);
        let grads = self.net.backward(&pass, &d_logits);
        self.optimizer.step(&mut self.net.params, &grads);
        let decay = self.config.baseline_decay;
        self.baseline = Some(decay * baseline + (1.0 - decay) * reward);
        self.prev_choice = Some(p.choice);
        self.prev_return = reward;
        Ok(())
    }

    pub fn pending(&self) -> Option<usize> {
        self.pending.as_ref().map(|p| p.choice)
    }
}
