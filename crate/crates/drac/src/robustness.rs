//! Robustness report for trained checkpoints, written as CSV.

use std::path::Path;

use anyhow::{bail, Context, Result};
use drac_core::env::level_split;
use drac_core::eval::{robustness_probe, summarize, RobustnessReport};
use drac_core::nn::PolicyValueNet;
use drac_core::trainer::{rng_stream, TrainerState};
use serde::{Deserialize, Serialize};

use crate::checkpoint;

/// Held-out levels probed per checkpoint.
pub const PROBE_LEVELS: usize = 100;
const PROBE_STREAM: u64 = 101;

pub const CSV_HEADER: &str = "method,jsd_mean,jsd_median,cycle2_mean,cycle2_median,cycle3_mean,cycle3_median";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub method: String,
    pub jsd_mean: f64,
    pub jsd_median: f64,
    pub cycle2_mean: f64,
    pub cycle2_median: f64,
    pub cycle3_mean: f64,
    pub cycle3_median: f64,
}

impl RobustnessRow {
    pub fn from_report(method: &str, report: &RobustnessReport) -> Result<Self> {
        let jsd = summarize(&report.jsd)?;
        let c2 = summarize(&report.cycle2)?;
        let c3 = summarize(&report.cycle3)?;
        Ok(Self {
            method: method.into(),
            jsd_mean: jsd.mean,
            jsd_median: jsd.median,
            cycle2_mean: c2.mean,
            cycle2_median: c2.median,
            cycle3_mean: c3.mean,
            cycle3_median: c3.median,
        })
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.method,
            self.jsd_mean,
            self.jsd_median,
            self.cycle2_mean,
            self.cycle2_median,
            self.cycle3_mean,
            self.cycle3_median
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 7 {
            bail!("robustness row needs 7 fields, got {}: {line:?}", fields.len());
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse().with_context(|| format!("field {i} of {line:?}"))
        };
        Ok(Self {
            method: fields[0].into(),
            jsd_mean: num(1)?,
            jsd_median: num(2)?,
            cycle2_mean: num(3)?,
            cycle2_median: num(4)?,
            cycle3_mean: num(5)?,
            cycle3_median: num(6)?,
        })
    }
}

pub fn to_csv(rows: &[RobustnessRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<RobustnessRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        Some(h) => bail!("unexpected robustness header {h:?}"),
        None => bail!("empty robustness CSV"),
    }
    lines.filter(|l| !l.trim().is_empty()).map(RobustnessRow::parse_csv_line).collect()
}

/// Probes the policy stored in a trainer state on the first `levels` test levels.
pub fn probe_state(state: &TrainerState, levels: usize) -> Result<RobustnessReport> {
    let cfg = &state.config;
    let net = PolicyValueNet::from_params(state.arch.clone(), state.params.clone())?;
    let (_, test) = level_split(cfg.n_train_levels, cfg.test_pool_size)?;
    let take = levels.min(test.len());
    let mut rng = rng_stream(cfg.seeds[0], PROBE_STREAM);
    Ok(robustness_probe(&net, &cfg.env, &test[..take], &mut rng)?)
}

pub fn probe_checkpoint(path: &Path, levels: usize) -> Result<RobustnessRow> {
    let ckpt = checkpoint::load(path)?;
    let report = probe_state(&ckpt.state, levels)?;
    RobustnessRow::from_report(ckpt.state.config.method.as_str(), &report)
}
