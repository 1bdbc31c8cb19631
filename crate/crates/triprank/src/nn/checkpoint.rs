//! Versioned binary checkpoints: magic, feature-schema digest, model
//! config text, then each named tensor as (name, rank, dims, f64 LE
//! values). Only parameter values are stored; optimizer moments are not.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::model::ModelConfig;
use super::params::ParameterStore;
use super::tensor::Tensor;

pub const MAGIC: &[u8; 9] = b"TRIPRANK1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("not a triprank checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint was built against a different feature schema or vocabulary")]
    SchemaMismatch,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Writes the store atomically: a temporary sibling file is fully
/// written, then renamed over the destination.
pub fn save(
    path: &Path,
    store: &ParameterStore,
    cfg: &ModelConfig,
    schema_hash: &[u8; 32],
) -> io::Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(schema_hash)?;
        let cfg_text = cfg.to_text();
        write_u32(&mut w, cfg_text.len() as u32)?;
        w.write_all(cfg_text.as_bytes())?;
        let names: Vec<&str> = store.names().collect();
        write_u32(&mut w, names.len() as u32)?;
        for name in names {
            let tensor = store.get(name);
            write_u32(&mut w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            write_u32(&mut w, tensor.shape().len() as u32)?;
            for &dim in tensor.shape() {
                write_u32(&mut w, dim as u32)?;
            }
            for &value in tensor.values() {
                w.write_all(&value.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)
}

/// Reads a checkpoint back. When `expected_schema` is given, a digest
/// mismatch is rejected before any tensor is materialized.
pub fn load(
    path: &Path,
    expected_schema: Option<&[u8; 32]>,
) -> Result<(ParameterStore, ModelConfig, [u8; 32]), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut schema = [0u8; 32];
    r.read_exact(&mut schema)?;
    if let Some(expected) = expected_schema {
        if expected != &schema {
            return Err(CheckpointError::SchemaMismatch);
        }
    }
    let cfg_len = read_u32(&mut r)? as usize;
    if cfg_len > 1 << 20 {
        return Err(CheckpointError::Corrupt("config block too large".into()));
    }
    let mut cfg_text = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_text)?;
    let cfg_text =
        String::from_utf8(cfg_text).map_err(|_| CheckpointError::Corrupt("config not utf-8".into()))?;
    let cfg = ModelConfig::from_text(&cfg_text).map_err(CheckpointError::Corrupt)?;
    let n_tensors = read_u32(&mut r)?;
    let mut store = ParameterStore::new();
    for _ in 0..n_tensors {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Corrupt("tensor name too long".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| CheckpointError::Corrupt("name not utf-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(CheckpointError::Corrupt(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let count: usize = shape.iter().product();
        if count > 1 << 28 {
            return Err(CheckpointError::Corrupt(format!("tensor {name} too large")));
        }
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        store.insert(&name, Tensor::new(&shape, values));
    }
    Ok((store, cfg, schema))
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
