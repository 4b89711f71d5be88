//! Versioned binary checkpoints: an 8-byte magic, a little-endian `u32`
//! format version, then the CBOR-encoded payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use drac_core::trainer::TrainerState;
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"DRACCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub code_version: String,
    pub state: TrainerState,
}

pub fn write_to<W: Write>(mut w: W, checkpoint: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    ciborium::into_writer(checkpoint, &mut w).context("encoding checkpoint")?;
    w.flush()?;
    Ok(())
}

pub fn read_from<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).context("reading checkpoint header")?;
    if &magic != MAGIC {
        bail!("not a checkpoint file (bad magic)");
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != FORMAT_VERSION {
        bail!("unsupported checkpoint format version {version} (expected {FORMAT_VERSION})");
    }
    ciborium::from_reader(r).context("decoding checkpoint")
}

/// Writes atomically by renaming a temporary sibling into place.
pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_to(BufWriter::new(File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?), checkpoint)?;
    std::fs::rename(&tmp, path).with_context(|| format!("moving checkpoint to {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    read_from(BufReader::new(file)).with_context(|| format!("loading {}", path.display()))
}
