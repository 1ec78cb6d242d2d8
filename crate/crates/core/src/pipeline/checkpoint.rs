use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";

/// A named set of matrices persisted after each pipeline phase.
///
/// On disk: `manifest.json` plus one little-endian 32-bit-float row-major
/// blob per block. Blocks are keyed by name; the ordered map keeps save
/// output byte-stable.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub phase: String,
    pub blocks: BTreeMap<String, Mat>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config_hash: String,
    phase: String,
    blocks: Vec<BlockEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    rows: usize,
    cols: usize,
    file: String,
}

impl Checkpoint {
    pub fn new(config_hash: &str, phase: &str) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            phase: phase.to_string(),
            blocks: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, m: Mat) {
        self.blocks.insert(name.to_string(), m);
    }

    /// Store a flat vector as a single-row block.
    pub fn insert_flat(&mut self, name: &str, v: &[f64]) -> Result<()> {
        let m = Mat::from_vec(1, v.len(), v.to_vec())?;
        self.insert(name, m);
        Ok(())
    }

    pub fn block(&self, name: &str) -> Result<&Mat> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::Integrity(format!("missing block '{name}'")))
    }

    pub fn flat(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.block(name)?;
        if m.rows() != 1 {
            return Err(Error::Integrity(format!(
                "block '{name}' is {}x{}, expected a single row",
                m.rows(),
                m.cols()
            )));
        }
        Ok(m.data().to_vec())
    }
}

/// Quantize to the storage precision without touching the disk. Phase
/// boundaries always pass parameters through this so a resumed run sees
/// exactly what an uninterrupted run saw.
pub fn quantize(v: &mut [f64]) {
    for x in v {
        *x = *x as f32 as f64;
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, m) in &ckpt.blocks {
        let file = format!("{name}.bin");
        let mut bytes = Vec::with_capacity(m.data().len() * 4);
        for &v in m.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let mut f = fs::File::create(dir.join(&file))?;
        f.write_all(&bytes)?;
        entries.push(BlockEntry {
            name: name.clone(),
            rows: m.rows(),
            cols: m.cols(),
            file,
        });
    }
    let manifest = Manifest {
        version: ckpt.version,
        config_hash: ckpt.config_hash.clone(),
        phase: ckpt.phase.clone(),
        blocks: entries,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    let mut blocks = BTreeMap::new();
    for e in manifest.blocks {
        let bytes = fs::read(dir.join(&e.file))?;
        let want = e.rows * e.cols * 4;
        if bytes.len() != want {
            return Err(Error::Integrity(format!(
                "block '{}': blob is {} bytes, manifest shape {}x{} needs {want}",
                e.name,
                bytes.len(),
                e.rows,
                e.cols
            )));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        blocks.insert(e.name, Mat::from_vec(e.rows, e.cols, data)?);
    }
    Ok(Checkpoint {
        version: manifest.version,
        config_hash: manifest.config_hash,
        phase: manifest.phase,
        blocks,
    })
}

/// Load a checkpoint only if it exists and matches the config fingerprint.
pub fn try_load_matching(dir: impl AsRef<Path>, config_hash: &str) -> Result<Option<Checkpoint>> {
    let dir = dir.as_ref();
    if !dir.join(MANIFEST_FILE).exists() {
        return Ok(None);
    }
    let ckpt = load_checkpoint(dir)?;
    if ckpt.config_hash != config_hash {
        return Err(Error::Integrity(format!(
            "checkpoint at {} was produced by a different config (hash {}, current {config_hash}); \
             remove it or rerun with force",
            dir.display(),
            ckpt.config_hash
        )));
    }
    Ok(Some(ckpt))
}
