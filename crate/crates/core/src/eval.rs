//! Score aggregation, policy evaluation, and the robustness probes
//! (Jensen-Shannon divergence and trajectory cycle-consistency).

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::{log_softmax, sample};
use crate::env::{make_level, EnvConfig, EnvState, LevelSeed, NuisanceMode, Observation};
use crate::error::{bail, Result};
use crate::nn::PolicyValueNet;
use crate::Scalar;

/// `100 · score / reference`.
pub fn normalized_return(score: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        bail!(Evaluation, "reference score must be positive, got {reference}");
    }
    Ok(100.0 * score / reference)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (`n − 1`); zero for a single value.
    pub std: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        bail!(Evaluation, "cannot summarize an empty list");
    }
    if values.iter().any(|v| !v.is_finite()) {
        bail!(Evaluation, "cannot summarize non-finite values");
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let std = if n > 1 {
        libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
    } else {
        0.0
    };
    Ok(Summary { mean, median, std, count: n })
}

/// Jensen-Shannon divergence in nats between two probability vectors.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let half_kl = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&ai, _)| ai > 0.0)
            .map(|(&ai, &bi)| ai * libm::log(2.0 * ai / (ai + bi)))
            .sum::<f64>()
    };
    (0.5 * half_kl(p, q) + 0.5 * half_kl(q, p)).clamp(0.0, core::f64::consts::LN_2)
}

/// Action probabilities for a batch of observations.
pub fn policy_probs<S: Scalar>(net: &PolicyValueNet<S>, observations: &[&Observation]) -> Result<Vec<Vec<f64>>> {
    let mut input = Vec::with_capacity(observations.len() * net.input_len());
    for obs in observations {
        input.extend(obs.normalized::<S>());
    }
    let pass = net.forward(&input, observations.len())?;
    let a = net.num_actions();
    Ok(pass
        .logits
        .chunks_exact(a)
        .map(|z| log_softmax(z).into_iter().map(|l| l.exp().to_f64()).collect())
        .collect())
}

/// JSD between the policy on `obs` and on its background-perturbed twin.
pub fn jsd_probe<S: Scalar>(net: &PolicyValueNet<S>, obs: &Observation, perturbed: &Observation) -> Result<f64> {
    if obs.size != perturbed.size || obs.pixels.len() != perturbed.pixels.len() {
        bail!(Input, "observation shapes differ ({} vs {})", obs.size, perturbed.size);
    }
    let probs = policy_probs(net, &[obs, perturbed])?;
    Ok(jsd(&probs[0], &probs[1]))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest point (squared Euclidean, lowest index on ties).
pub fn nearest(point: &[f64], set: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, x) in set.iter().enumerate() {
        let d = squared_distance(point, x);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn check_trajectory(name: &str, traj: &[Vec<f64>], dim: usize) -> Result<()> {
    if traj.is_empty() {
        bail!(Input, "trajectory {name} is empty");
    }
    if let Some(v) = traj.iter().find(|v| v.len() != dim) {
        bail!(Input, "trajectory {name} has a {}-dimensional point, expected {dim}", v.len());
    }
    Ok(())
}

/// Fraction of points of `v` whose nearest-neighbour round trip through the
/// other trajectories lands within one index of the start. With `j`, a point
/// counts only if both `V→U→J→V` and `V→J→U→V` return.
pub fn cycle_consistency(v: &[Vec<f64>], u: &[Vec<f64>], j: Option<&[Vec<f64>]>) -> Result<f64> {
    let dim = v.first().map(|x| x.len()).unwrap_or(0);
    check_trajectory("V", v, dim)?;
    check_trajectory("U", u, dim)?;
    if let Some(j) = j {
        check_trajectory("J", j, dim)?;
    }
    let returns = |i: usize, path: &[&[Vec<f64>]]| {
        let mut point = &v[i];
        for set in path {
            point = &set[nearest(point, set)];
        }
        let k = nearest(point, v);
        i.abs_diff(k) <= 1
    };
    let consistent = (0..v.len())
        .filter(|&i| match j {
            None => returns(i, &[u]),
            Some(j) => returns(i, &[u, j]) && returns(i, &[j, u]),
        })
        .count();
    Ok(consistent as f64 / v.len() as f64)
}

/// Result of running a policy for a number of episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub returns: Vec<f64>,
    pub mean_return: f64,
}

/// Runs `episodes` episodes on levels drawn with replacement from `pool`.
/// Episodes run in lock-step batches of `parallel`.
pub fn evaluate_policy<S: Scalar, R: Rng + ?Sized>(
    net: &PolicyValueNet<S>,
    config: &EnvConfig,
    pool: &[LevelSeed],
    episodes: usize,
    greedy: bool,
    parallel: usize,
    rng: &mut R,
) -> Result<EvalResult> {
    if episodes == 0 {
        bail!(Evaluation, "evaluation needs at least one episode");
    }
    if pool.is_empty() {
        bail!(Evaluation, "evaluation level pool is empty");
    }
    let seeds: Vec<LevelSeed> = (0..episodes).map(|_| *pool.choose(rng).expect("non-empty pool")).collect();
    let mut returns = Vec::with_capacity(episodes);
    for group in seeds.chunks(parallel.max(1)) {
        let mut states = group.iter().map(|&s| make_level(config, s)).collect::<Result<Vec<EnvState>>>()?;
        let mut obs: Vec<Observation> = states.iter_mut().map(|s| s.reset()).collect();
        let mut totals = vec![0.0; states.len()];
        loop {
            let live: Vec<usize> = (0..states.len()).filter(|&i| !states[i].done).collect();
            if live.is_empty() {
                break;
            }
            let refs: Vec<&Observation> = live.iter().map(|&i| &obs[i]).collect();
            let probs = policy_probs(net, &refs)?;
            for (&i, p) in live.iter().zip(&probs) {
                let action = if greedy { argmax(p) } else { sample(p, rng) };
                let (o, r, _) = states[i].step(action)?;
                obs[i] = o;
                totals[i] += r;
            }
        }
        returns.extend(totals);
    }
    let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(EvalResult { returns, mean_return })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Per-level robustness measurements.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// Mean JSD along each probed trajectory.
    pub jsd: Vec<f64>,
    pub cycle2: Vec<f64>,
    pub cycle3: Vec<f64>,
}

/// Background-perturbation probes on the given levels.
///
/// For each level the agent acts greedily on the original rendering; the
/// same states are re-rendered under two other themes (chosen with `rng`).
/// JSD compares the policies on original and first-twin frames; cycle
/// consistency pairs the penultimate-layer trajectories of the original (`V`)
/// and twins (`U`, `J`).
pub fn robustness_probe<S: Scalar, R: Rng + ?Sized>(
    net: &PolicyValueNet<S>,
    config: &EnvConfig,
    levels: &[LevelSeed],
    rng: &mut R,
) -> Result<RobustnessReport> {
    if config.nuisance_mode != NuisanceMode::Background {
        bail!(Evaluation, "robustness probes need the background nuisance mode");
    }
    if config.palette_size < 3 {
        bail!(Evaluation, "robustness probes need at least three themes");
    }
    let mut report = RobustnessReport::default();
    for &seed in levels {
        let mut state = make_level(config, seed)?;
        state.reset();
        let own = state.nuisance.theme;
        let others: Vec<usize> = (0..config.palette_size).filter(|&t| t != own).collect();
        let picked: Vec<usize> = others.choose_multiple(rng, 2).copied().collect();
        let (tu, tj) = (picked[0], picked[1]);
        let mut visited = vec![state.clone()];
        while !state.done {
            let probs = policy_probs(net, &[&state.render()])?;
            state.step(argmax(&probs[0]))?;
            visited.push(state.clone());
        }
        let frames = |theme: Option<usize>| -> Result<Vec<Observation>> {
            visited
                .iter()
                .map(|s| match theme {
                    None => Ok(s.render()),
                    Some(t) => Ok(s.with_theme(t)?.render()),
                })
                .collect()
        };
        let (v_obs, u_obs, j_obs) = (frames(None)?, frames(Some(tu))?, frames(Some(tj))?);
        let embed = |frames: &[Observation]| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
            let mut input = Vec::with_capacity(frames.len() * net.input_len());
            for f in frames {
                input.extend(f.normalized::<S>());
            }
            let pass = net.forward(&input, frames.len())?;
            let a = net.num_actions();
            let h = pass.features.len() / frames.len();
            let feats = pass.features.chunks_exact(h).map(|c| c.iter().map(|x| x.to_f64()).collect()).collect();
            let probs = pass
                .logits
                .chunks_exact(a)
                .map(|z| log_softmax(z).into_iter().map(|l| l.exp().to_f64()).collect())
                .collect();
            Ok((feats, probs))
        };
        let (v, pv) = embed(&v_obs)?;
        let (u, pu) = embed(&u_obs)?;
        let (j, _) = embed(&j_obs)?;
        let jsd_mean = pv.iter().zip(&pu).map(|(p, q)| jsd(p, q)).sum::<f64>() / pv.len() as f64;
        report.jsd.push(jsd_mean);
        report.cycle2.push(cycle_consistency(&v, &u, None)?);
        report.cycle3.push(cycle_consistency(&v, &u, Some(&j))?);
    }
    Ok(report)
}
