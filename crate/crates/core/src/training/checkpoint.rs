//! Binary checkpoint: magic, version, a JSON header with the tensor
//! directory, little-endian f64 payloads and a trailing CRC-32.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::fields::{ImplicitModel, ModelDims};

use super::config::TrainConfig;
use super::registry::{LatentRegistry, RegistryLayout};
use super::TrainError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GTEXCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;

/// Trained (or freshly initialized) model with its latent codes.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: usize,
    pub model: ImplicitModel,
    pub registry: LatentRegistry,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// In f64 elements from the start of the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    step: usize,
    dims: ModelDims,
    config: TrainConfig,
    registry: RegistryLayout,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let tensors = self
            .model
            .params
            .iter()
            .map(|(_, p)| {
                let e = TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    offset,
                };
                offset += p.value.len();
                e
            })
            .collect();
        let header = Header {
            version: CHECKPOINT_VERSION,
            step: self.step,
            dims: self.model.dims(),
            config: self.config.clone(),
            registry: self.registry.layout(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX + json.len() + 8 * offset + 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in self.model.params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < PREFIX + 4 {
            return Err(TrainError::Truncated);
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        if header_len > bytes.len() || PREFIX + header_len + 4 > bytes.len() {
            return Err(TrainError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(TrainError::Checksum);
        }
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header: Header = serde_json::from_slice(&body[PREFIX..PREFIX + header_len])
            .map_err(|e| corrupt(format!("header: {e}")))?;
        let payload = &body[PREFIX + header_len..];
        let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if payload.len() != 8 * total {
            return Err(if payload.len() < 8 * total {
                TrainError::Truncated
            } else {
                corrupt("trailing bytes after payload")
            });
        }
        if header.dims != header.config.dims {
            return Err(corrupt("dims disagree with config"));
        }

        let mut model = ImplicitModel::new(header.config.model(), header.config.seed);
        LatentRegistry::register(
            &mut model.params,
            &header.registry.instances,
            header.config.dims,
            header.registry.pose,
            header.config.code_init_sigma,
            header.config.seed,
        )?;
        if model.params.len() != header.tensors.len() {
            return Err(corrupt(format!(
                "{} tensors stored, model has {}",
                header.tensors.len(),
                model.params.len()
            )));
        }
        for entry in &header.tensors {
            let id = model
                .params
                .id(&entry.name)
                .ok_or_else(|| corrupt(format!("unknown tensor {}", entry.name)))?;
            let n: usize = entry.shape.iter().product();
            if entry.offset + n > total {
                return Err(corrupt(format!("tensor {} out of bounds", entry.name)));
            }
            let data = payload[8 * entry.offset..8 * (entry.offset + n)]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let value = Tensor::new(entry.shape.clone(), data)?;
            model
                .params
                .set_value(id, value)
                .map_err(|_| corrupt(format!("tensor {} has the wrong shape", entry.name)))?;
        }
        let registry = LatentRegistry::attach(&model.params, &header.registry)?;
        Ok(Self {
            config: header.config,
            step: header.step,
            model,
            registry,
        })
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TrainError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| TrainError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| TrainError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| TrainError::io(path, e))?;
    tmp.persist(path).map_err(|e| TrainError::io(path, e.error))?;
    Ok(())
}
