//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "EHRGPTCK"
//! version u32
//! cfg_len u32, then cfg_len bytes of JSON-encoded ModelConfig
//! step    u64
//! count   u32 tensors, then per tensor in the canonical parameter order:
//!   name_len u16, name bytes (UTF-8)
//!   ndim     u8,  dims as u32 each
//!   data     f32 little-endian, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::params::Parameters;
use crate::model::ModelConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EHRGPTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained weights plus the config and training step that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub params: Parameters<f32>,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(&checkpoint.config).map_err(|e| Error::Data(e.to_string()))?;
    out.write_all(&(cfg.len() as u32).to_le_bytes())?;
    out.write_all(&cfg)?;
    out.write_all(&checkpoint.step.to_le_bytes())?;

    let tensors = checkpoint.params.tensors();
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        out.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        out.write_all(name_bytes)?;
        out.write_all(&[tensor.ndim() as u8])?;
        for dim in tensor.shape() {
            out.write_all(&(*dim as u32).to_le_bytes())?;
        }
        for &value in tensor.iter() {
            out.write_all(&value.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data_err = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    let mut reader = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(data_err("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut reader)?;
    if version != CHECKPOINT_VERSION {
        return Err(data_err(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = read_u32(&mut reader)? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    reader.read_exact(&mut cfg_bytes)?;
    let config: ModelConfig =
        serde_json::from_slice(&cfg_bytes).map_err(|e| data_err(format!("bad config: {e}")))?;
    config.validate()?;
    let mut step_bytes = [0u8; 8];
    reader.read_exact(&mut step_bytes)?;
    let step = u64::from_le_bytes(step_bytes);

    let mut params = Parameters::<f32>::zeros(&config);
    let count = read_u32(&mut reader)? as usize;
    let expected = params.tensors().len();
    if count != expected {
        return Err(data_err(format!(
            "expected {expected} tensors, file has {count}"
        )));
    }
    for (expected_name, mut tensor) in params.tensors_mut() {
        let mut len_bytes = [0u8; 2];
        reader.read_exact(&mut len_bytes)?;
        let mut name = vec![0u8; u16::from_le_bytes(len_bytes) as usize];
        reader.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| data_err("bad tensor name".into()))?;
        if name != expected_name {
            return Err(data_err(format!(
                "tensor order mismatch: expected {expected_name}, found {name}"
            )));
        }
        let mut ndim = [0u8; 1];
        reader.read_exact(&mut ndim)?;
        if ndim[0] as usize != tensor.ndim() {
            return Err(data_err(format!("tensor {name}: rank mismatch")));
        }
        for expected_dim in tensor.shape().to_vec() {
            let dim = read_u32(&mut reader)? as usize;
            if dim != expected_dim {
                return Err(data_err(format!(
                    "tensor {name}: dimension {dim} does not match config ({expected_dim})"
                )));
            }
        }
        for value in tensor.iter_mut() {
            let mut bytes = [0u8; 4];
            reader.read_exact(&mut bytes)?;
            *value = f32::from_le_bytes(bytes);
        }
    }
    Ok(Checkpoint {
        config,
        step,
        params,
    })
}

fn read_u32(reader: &mut impl Read) -> Result<u32> {
    let mut bytes = [0u8; 4];
    reader.read_exact(&mut bytes)?;
    Ok(u32::from_le_bytes(bytes))
}
