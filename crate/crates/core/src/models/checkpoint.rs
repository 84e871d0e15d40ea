//! Checkpoint persistence: params.json describes the model, window
//! geometry, tensor layout, optimizer step and config hash; params.bin
//! holds parameters then first then second moments as little-endian f32
//! in manifest order.

use super::optim::AdamState;
use super::{Model, ModelSpec};
use crate::autodiff::Tensor;
use crate::curriculum::WindowConfig;
use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    spec: ModelSpec,
    window: WindowConfig,
    step: u64,
    config_hash: String,
    tensors: Vec<TensorMeta>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub state: AdamState,
    pub window: WindowConfig,
    pub step: u64,
    pub config_hash: String,
}

/// FNV-1a over the JSON encoding; stable across runs and platforms.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

fn write_f32s(path: &Path, chunks: &[&[f32]]) -> Result<()> {
    let total: usize = chunks.iter().map(|c| c.len()).sum();
    let mut bytes = Vec::with_capacity(total * 4);
    for chunk in chunks {
        for v in *chunk {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32s(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(CoreError::Format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

impl Checkpoint {
    pub fn new(
        model: Model,
        state: AdamState,
        window: WindowConfig,
        config_hash: String,
    ) -> Self {
        let step = state.t;
        Self {
            model,
            state,
            window,
            step,
            config_hash,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec: *self.model.spec(),
            window: self.window,
            step: self.step,
            config_hash: self.config_hash.clone(),
            tensors: self
                .model
                .params()
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        fs::write(
            dir.join("params.json"),
            serde_json::to_vec_pretty(&manifest)?,
        )?;

        let mut chunks: Vec<&[f32]> = Vec::new();
        for (_, t) in self.model.params() {
            chunks.push(t.data());
        }
        for m in &self.state.m {
            chunks.push(m.data());
        }
        for v in &self.state.v {
            chunks.push(v.data());
        }
        write_f32s(&dir.join("params.bin"), &chunks)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CheckpointManifest =
            serde_json::from_slice(&fs::read(dir.join("params.json"))?)?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CoreError::Format(format!(
                "checkpoint format {} unsupported (expected {})",
                manifest.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        let param_total: usize = manifest
            .tensors
            .iter()
            .map(|m| m.shape.iter().product::<usize>())
            .sum();
        let values = read_f32s(&dir.join("params.bin"), param_total * 3)?;

        let mut offset = 0usize;
        let mut take_block = |metas: &[TensorMeta]| -> Result<Vec<(String, Tensor)>> {
            let mut out = Vec::with_capacity(metas.len());
            for meta in metas {
                let n: usize = meta.shape.iter().product();
                let t = Tensor::new(meta.shape.clone(), values[offset..offset + n].to_vec())?;
                offset += n;
                out.push((meta.name.clone(), t));
            }
            Ok(out)
        };
        let params = take_block(&manifest.tensors)?;
        let m: Vec<Tensor> = take_block(&manifest.tensors)?
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        let v: Vec<Tensor> = take_block(&manifest.tensors)?
            .into_iter()
            .map(|(_, t)| t)
            .collect();

        let model = Model::from_parts(manifest.spec, params)?;
        Ok(Self {
            model,
            state: AdamState {
                m,
                v,
                t: manifest.step,
            },
            window: manifest.window,
            step: manifest.step,
            config_hash: manifest.config_hash,
        })
    }
}
