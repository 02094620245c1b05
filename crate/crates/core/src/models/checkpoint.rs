//! Self-describing checkpoint files.
//!
//! Layout: the 8-byte magic `AFFCKPT1`, a little-endian `u64` header length,
//! a JSON header, then every parameter followed by every buffer as
//! little-endian floats of the header's dtype, in header order.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::fusion::{build_fusion_model, FusionConfig, FusionModel};
use crate::dataset::labels::{Action, Tool};
use crate::dataset::preprocess::NormStats;
use crate::error::{Error, Result};
use crate::nn::TensorStore;
use crate::scalar::Scalar;
use crate::task::TaskSpec;

const MAGIC: &[u8; 8] = b"AFFCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Everything in a checkpoint except the tensor values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: FusionConfig,
    pub config_hash: String,
    pub task: Option<TaskSpec>,
    pub norm_stats: Option<NormStats>,
    pub tools: Vec<String>,
    pub actions: Vec<String>,
    pub dtype: String,
    params: Vec<TensorEntry>,
    buffers: Vec<TensorEntry>,
}

fn entries<T: Scalar>(store: &TensorStore<T>) -> Vec<TensorEntry> {
    store
        .iter()
        .map(|(name, v)| TensorEntry {
            name: name.to_string(),
            shape: v.shape().to_vec(),
        })
        .collect()
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &FusionModel<T>,
    task: Option<TaskSpec>,
    norm_stats: Option<&NormStats>,
) -> Result<()> {
    let path = path.as_ref();
    let header = Checkpoint {
        config: model.config().clone(),
        config_hash: model.config().hash(),
        task,
        norm_stats: norm_stats.cloned(),
        tools: Tool::ALL.iter().map(|t| t.name().to_string()).collect(),
        actions: Action::ALL.iter().map(|a| a.name().to_string()).collect(),
        dtype: T::DTYPE.to_string(),
        params: entries(model.params()),
        buffers: entries(model.buffers()),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&(json.len() as u64).to_le_bytes())?;
    write(&json)?;
    for store in [model.params(), model.buffers()] {
        for v in store.values() {
            let mut buf = Vec::with_capacity(v.len() * 8);
            for x in v.iter() {
                match T::DTYPE {
                    "f32" => buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes()),
                    _ => buf.extend_from_slice(&x.as_f64().to_le_bytes()),
                }
            }
            write(&buf)?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads only the header of a checkpoint.
pub fn read_checkpoint_header(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let (header, _) = read_raw(path.as_ref())?;
    Ok(header)
}

fn read_raw(path: &Path) -> Result<(Checkpoint, Vec<u8>)> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Checkpoint =
        serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.config.hash() != header.config_hash {
        return Err(Error::Checkpoint("stored config hash does not match stored config".into()));
    }
    let data = bytes[16 + len..].to_vec();
    Ok((header, data))
}

fn fill<T: Scalar>(
    store: &mut TensorStore<T>,
    entries: &[TensorEntry],
    data: &[u8],
    offset: &mut usize,
    width: usize,
) -> Result<()> {
    if entries.len() != store.len() || entries.iter().zip(store.names()).any(|(e, n)| &e.name != n) {
        return Err(Error::Checkpoint("tensor table does not match the architecture".into()));
    }
    for (entry, value) in entries.iter().zip(store.values_mut()) {
        if entry.shape != value.shape() {
            return Err(Error::Checkpoint(format!("shape mismatch for {}", entry.name)));
        }
        let n = value.len();
        let bytes = data
            .get(*offset..*offset + n * width)
            .ok_or_else(|| Error::Checkpoint("truncated tensor data".into()))?;
        let vals: Vec<T> = bytes
            .chunks_exact(width)
            .map(|c| {
                let v = if width == 4 {
                    f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64
                } else {
                    f64::from_le_bytes(c.try_into().expect("8 bytes"))
                };
                T::from_f64_lossy(v)
            })
            .collect();
        *value = ArrayD::from_shape_vec(IxDyn(&entry.shape), vals).expect("checked shape");
        *offset += n * width;
    }
    Ok(())
}

/// Loads a checkpoint, refusing it when `expected` is given and its hash
/// differs from the stored architecture's.
pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    expected: Option<&FusionConfig>,
) -> Result<(FusionModel<T>, Checkpoint)> {
    let (header, data) = read_raw(path.as_ref())?;
    if let Some(cfg) = expected {
        if cfg.hash() != header.config_hash {
            return Err(Error::Checkpoint(format!(
                "architecture hash mismatch: checkpoint {} vs requested {}",
                &header.config_hash[..12],
                &cfg.hash()[..12]
            )));
        }
    }
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other}"))),
    };
    let mut model = build_fusion_model::<T>(&header.config, 0)?;
    let mut offset = 0;
    fill(model.params_mut(), &header.params, &data, &mut offset, width)?;
    fill(model.buffers_mut(), &header.buffers, &data, &mut offset, width)?;
    if offset != data.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    Ok((model, header))
}
