use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Sliding-window UCB over a fixed list of arms.
///
/// Scores are `Q(f) + c·sqrt(ln t / N(f))`; `Q(f)` is the mean of the last
/// `window` returns fed back for `f`. Counts start at 1, `t` at 1, and ties go
/// to the lowest index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcbSelector {
    counts: Vec<u64>,
    windows: Vec<VecDeque<f64>>,
    q_values: Vec<f64>,
    t: u64,
    c: f64,
    window: usize,
    pending: Option<usize>,
}

impl UcbSelector {
    pub fn new(arms: usize, c: f64, window: usize) -> Result<Self> {
        if arms == 0 || window == 0 {
            bail!(Config, "UCB needs at least one arm and a positive window");
        }
        if !(c >= 0.0) {
            bail!(Config, "UCB exploration coefficient must be non-negative");
        }
        Ok(Self {
            counts: vec![1; arms],
            windows: vec![VecDeque::with_capacity(window); arms],
            q_values: vec![0.0; arms],
            t: 1,
            c,
            window,
            pending: None,
        })
    }

    /// A selector with explicit `Q`, `N` and `t`, and empty windows.
    pub fn with_estimates(q_values: Vec<f64>, counts: Vec<u64>, t: u64, c: f64, window: usize) -> Result<Self> {
        if q_values.len() != counts.len() || counts.iter().any(|&n| n == 0) || t == 0 {
            bail!(Config, "estimates need matching lengths, counts >= 1 and t >= 1");
        }
        let mut s = Self::new(counts.len(), c, window)?;
        s.q_values = q_values;
        s.counts = counts;
        s.t = t;
        Ok(s)
    }

    pub fn arms(&self) -> usize {
        self.counts.len()
    }

    pub fn score(&self, arm: usize) -> f64 {
        let t = self.t as f64;
        self.q_values[arm] + self.c * libm::sqrt(libm::log(t) / self.counts[arm] as f64)
    }

    /// The arm the next selection would pick, without committing to it.
    pub fn peek(&self) -> usize {
        let mut best = 0;
        let mut best_score = self.score(0);
        for arm in 1..self.arms() {
            let s = self.score(arm);
            if s > best_score {
                best = arm;
                best_score = s;
            }
        }
        best
    }

    pub fn select(&mut self) -> Result<usize> {
        if let Some(arm) = self.pending {
            bail!(State, "UCB selection of arm {arm} is still awaiting feedback");
        }
        let arm = self.peek();
        self.pending = Some(arm);
        Ok(arm)
    }

    pub fn feedback(&mut self, arm: usize, mean_return: f64) -> Result<()> {
        match self.pending {
            Some(p) if p == arm => {}
            Some(p) => bail!(State, "feedback for arm {arm} but arm {p} was selected"),
            None => bail!(State, "feedback without a pending selection"),
        }
        if !mean_return.is_finite() {
            bail!(Input, "non-finite mean return {mean_return}");
        }
        let w = &mut self.windows[arm];
        if w.len() == self.window {
            w.pop_front();
        }
        w.push_back(mean_return);
        self.q_values[arm] = w.iter().sum::<f64>() / w.len() as f64;
        self.counts[arm] += 1;
        self.t += 1;
        self.pending = None;
        Ok(())
    }

    pub fn pending(&self) -> Option<usize> {
        self.pending
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q_values
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn window(&self, arm: usize) -> &VecDeque<f64> {
        &self.windows[arm]
    }

    pub fn window_len(&self) -> usize {
        self.window
    }

    pub fn t(&self) -> u64 {
        self.t
    }
}
