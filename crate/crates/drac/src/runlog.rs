//! JSONL metric logs. The first line is a header record carrying
//! `"schema": 1`; every following line is one [`MetricsRecord`].

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drac_core::trainer::MetricsRecord;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u64 = 1;
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: u64,
    pub run: String,
    pub method: String,
    pub fixed_aug: Option<String>,
    pub nuisance_mode: String,
    pub seed: u64,
    pub code_version: String,
}

pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = Self { out: BufWriter::new(file) };
        w.write_value(header)?;
        Ok(w)
    }

    /// Reopens an existing log, keeping the header and the records whose
    /// `update` is at most `keep_through`.
    pub fn resume(path: &Path, keep_through: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut kept = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                kept.push(line.to_string());
                continue;
            }
            let v: Value = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            if v.get("update").and_then(Value::as_u64).is_some_and(|u| u <= keep_through) {
                kept.push(line.to_string());
            }
        }
        let mut body = kept.join("\n");
        body.push('\n');
        std::fs::write(path, body)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { out: BufWriter::new(file) })
    }

    fn write_value<T: Serialize>(&mut self, v: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, v)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        self.write_value(record)
    }
}

/// Keys every metrics record must carry.
pub const REQUIRED_KEYS: [&str; 16] = [
    "update",
    "env_steps",
    "mode",
    "aug_id",
    "J_pi",
    "J_V",
    "entropy",
    "G_pi",
    "G_V",
    "mean_ratio",
    "max_ratio_dev",
    "grad_norm",
    "mean_episode_return",
    "q_values",
    "counts",
    "wall_clock",
];

#[derive(Clone, Debug)]
pub struct RunLog {
    pub path: PathBuf,
    pub header: LogHeader,
    pub records: Vec<MetricsRecord>,
}

/// Reads and validates a metrics log; a missing field is reported by name.
pub fn read_log(path: &Path) -> Result<RunLog> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let Some(first) = lines.next() else {
        bail!("schema error: {} is empty (missing header record)", path.display());
    };
    let header_value: Value = serde_json::from_str(&first?).with_context(|| format!("{}: header", path.display()))?;
    match header_value.get("schema").and_then(Value::as_u64) {
        Some(SCHEMA_VERSION) => {}
        Some(v) => bail!("schema error: {} has schema {v}, expected {SCHEMA_VERSION}", path.display()),
        None => bail!("schema error: {} header is missing key `schema`", path.display()),
    }
    let header: LogHeader = serde_json::from_value(header_value)
        .map_err(|e| anyhow::anyhow!("schema error: {} header: {e}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 2))?;
        for key in REQUIRED_KEYS {
            if v.get(key).is_none() {
                bail!("schema error: {}:{} is missing key `{key}`", path.display(), i + 2);
            }
        }
        let record: MetricsRecord = serde_json::from_value(v)
            .map_err(|e| anyhow::anyhow!("schema error: {}:{}: {e}", path.display(), i + 2))?;
        records.push(record);
    }
    Ok(RunLog { path: path.to_path_buf(), header, records })
}

/// All metrics logs below `dir`, sorted by path.
pub fn find_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == METRICS_FILE) {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}
