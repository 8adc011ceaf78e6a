//! On-disk formats: checkpoints (`.ckpt`), demonstration datasets
//! (`.demos`) and run configurations (`.run`). Byte layouts are documented
//! in `docs/FORMATS.md`.

mod checkpoint;
mod dataset;
mod run;

use std::io::{self, Read, Write};

use thiserror::Error;

pub use checkpoint::{
    inspect_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    ArrayEntry, Checkpoint, CheckpointHeader, CriticBundle, Lineage, NamedArray, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use dataset::{
    load_dataset, save_dataset, write_dataset, DatasetHeader, DemoReader, DATASET_MAGIC,
    DATASET_VERSION, EPISODE_TAG,
};
pub use run::{CollectConfig, EvalConfig, FinetuneConfig, ModelConfig, RunConfig, RUN_EXTENSION};

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a {expected} file (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("checksum mismatch in array `{name}`")]
    Checksum { name: String },
    #[error("shape mismatch for `{name}`: expected {expected} values, got {got}")]
    Shape {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("missing array `{0}`")]
    MissingArray(String),
    #[error("file truncated in episode {episode}")]
    Truncated { episode: usize },
    #[error("episode {episode}: {what} dimension {got} does not match header {expected}")]
    EpisodeDim {
        episode: usize,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("episode {episode}: checksum mismatch")]
    EpisodeChecksum { episode: usize },
    #[error("invalid contents: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
}

/// Common preamble: 8-byte magic, `u32` version, `u32` reserved, `u64`
/// header length, header JSON.
fn write_preamble<W: Write, H: serde::Serialize>(
    w: &mut W,
    magic: &[u8; 8],
    version: u32,
    header: &H,
) -> Result<(), PersistError> {
    let json = serde_json::to_vec(header).map_err(|e| PersistError::Header(e.to_string()))?;
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

fn read_preamble<R: Read, H: serde::de::DeserializeOwned>(
    r: &mut R,
    magic: &[u8; 8],
    version: u32,
    kind: &'static str,
) -> Result<H, PersistError> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)
        .map_err(|_| PersistError::BadMagic { expected: kind })?;
    if &m != magic {
        return Err(PersistError::BadMagic { expected: kind });
    }
    let found = read_u32(r)?;
    if found != version {
        return Err(PersistError::Version {
            found,
            expected: version,
        });
    }
    let _reserved = read_u32(r)?;
    let len = read_u64(r)?;
    if len > 1 << 30 {
        return Err(PersistError::Header(format!(
            "header length {len} is implausible"
        )));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)
        .map_err(|_| PersistError::Header("truncated header".into()))?;
    serde_json::from_slice(&buf).map_err(|e| PersistError::Header(e.to_string()))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn f64s_to_bytes(v: &[f64], out: &mut Vec<u8>) {
    out.reserve(v.len() * 8);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn bytes_to_f64s(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}
