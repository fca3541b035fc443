//! Checkpoint archives: a directory holding `manifest.json` and
//! `tensors.bin`, the latter a concatenation of little-endian blocks
//! described by the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EXPECTED_WEIGHTED_LAYERS;
use crate::error::{Error, Result};
use crate::losses::Objective;
use crate::model::Model;
use crate::train::{CheckpointRecord, PretrainConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Byte offset into `tensors.bin`.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankInfo {
    pub prototype_count: usize,
    pub temperature: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    /// How Sinkhorn targets are batched.
    pub sinkhorn_scope: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureInfo {
    pub weighted_layers: usize,
    pub shortcut: String,
    pub pooling: String,
    pub normalization: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub fingerprint: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub objective: Objective,
    pub log_temperature: f64,
    pub config: PretrainConfig,
    pub bank: Option<BankInfo>,
    pub architecture: ArchitectureInfo,
    pub tensors: Vec<TensorEntry>,
}

fn write_block(buf: &mut Vec<u8>, entries: &mut Vec<TensorEntry>, name: String, shape: Vec<usize>, data: Block<'_>) {
    let offset = buf.len();
    let dtype = match data {
        Block::F32(v) => {
            v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
            Dtype::F32
        }
        Block::F64(v) => {
            v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
            Dtype::F64
        }
    };
    entries.push(TensorEntry { name, shape, dtype, offset });
}

enum Block<'a> {
    F32(&'a [f32]),
    F64(&'a [f64]),
}

fn std_slice<T>(a: &ndarray::ArrayBase<ndarray::OwnedRepr<T>, impl ndarray::Dimension>) -> &[T] {
    a.as_slice().expect("standard layout")
}

/// Writes `model` with the metadata of `record`.
pub fn save(dir: &Path, model: &Model, cfg: &PretrainConfig, record: &CheckpointRecord) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut buf = Vec::new();
    let mut entries = Vec::new();
    for (m, enc) in &model.encoders {
        for (name, shape, data) in enc.named_tensors() {
            write_block(&mut buf, &mut entries, format!("encoder.{m}.{name}"), shape, Block::F32(data));
        }
    }
    if let Some(bank) = &model.bank {
        let shape = bank.matrix.shape().to_vec();
        write_block(&mut buf, &mut entries, "prototypes".into(), shape, Block::F64(std_slice(&bank.matrix)));
    }
    for (m, head) in &model.heads {
        write_block(&mut buf, &mut entries, format!("head.{m}.weight"), head.weight.shape().to_vec(), Block::F64(std_slice(&head.weight)));
        write_block(&mut buf, &mut entries, format!("head.{m}.bias"), head.bias.shape().to_vec(), Block::F64(std_slice(&head.bias)));
    }
    let bank = model.bank.as_ref().map(|b| BankInfo {
        prototype_count: b.count(),
        temperature: cfg.prototypes.temperature,
        sinkhorn_epsilon: cfg.prototypes.sinkhorn_epsilon,
        sinkhorn_iters: cfg.prototypes.sinkhorn_iters,
        sinkhorn_scope: "per_modality_view".into(),
    });
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        fingerprint: record.fingerprint.clone(),
        epoch: record.epoch,
        train_loss: record.train_loss,
        val_loss: record.val_loss,
        objective: model.objective,
        log_temperature: model.log_temperature,
        config: cfg.clone(),
        bank,
        architecture: ArchitectureInfo {
            weighted_layers: model
                .encoders
                .values()
                .next()
                .map(|e| e.weighted_layer_audit())
                .unwrap_or(EXPECTED_WEIGHTED_LAYERS),
            shortcut: "parameter_free_strided_subsample_zero_pad".into(),
            pooling: "global_max".into(),
            normalization: "l2".into(),
        },
        tensors: entries,
    };
    let bin = dir.join("tensors.bin");
    std::fs::write(&bin, &buf).map_err(|e| Error::io(&bin, e))?;
    let man = dir.join("manifest.json");
    std::fs::write(&man, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&man, e))
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let man = dir.join("manifest.json");
    let text = std::fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::invalid(format!("unsupported checkpoint format {}", meta.format_version)));
    }
    Ok(meta)
}

fn fill<T: Copy>(dst: &mut [T], bytes: &[u8], entry: &TensorEntry, width: usize, dtype: Dtype, decode: impl Fn(&[u8]) -> T) -> Result<()> {
    let n: usize = entry.shape.iter().product();
    if entry.dtype != dtype || n != dst.len() {
        return Err(Error::Shape(format!("tensor {} does not match the model layout", entry.name)));
    }
    let end = entry.offset + n * width;
    let src = bytes
        .get(entry.offset..end)
        .ok_or_else(|| Error::invalid(format!("tensor {} runs past the end of the archive", entry.name)))?;
    for (d, chunk) in dst.iter_mut().zip(src.chunks_exact(width)) {
        *d = decode(chunk);
    }
    Ok(())
}

/// Rebuilds the model from the stored config and overwrites every tensor.
pub fn load(dir: &Path) -> Result<(Model, CheckpointMeta)> {
    let meta = read_meta(dir)?;
    let bin = dir.join("tensors.bin");
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut model = Model::init(&meta.config)?;
    model.log_temperature = meta.log_temperature;
    let find = |name: &str| {
        meta.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::invalid(format!("checkpoint lacks tensor {name}")))
    };
    let f32d = |c: &[u8]| f32::from_le_bytes(c.try_into().unwrap());
    let f64d = |c: &[u8]| f64::from_le_bytes(c.try_into().unwrap());
    for (m, enc) in model.encoders.iter_mut() {
        for (name, dst) in enc.named_tensors_mut() {
            fill(dst, &bytes, find(&format!("encoder.{m}.{name}"))?, 4, Dtype::F32, f32d)?;
        }
    }
    if let Some(bank) = model.bank.as_mut() {
        fill(bank.matrix.as_slice_mut().unwrap(), &bytes, find("prototypes")?, 8, Dtype::F64, f64d)?;
    }
    for (m, head) in model.heads.iter_mut() {
        fill(head.weight.as_slice_mut().unwrap(), &bytes, find(&format!("head.{m}.weight"))?, 8, Dtype::F64, f64d)?;
        fill(head.bias.as_slice_mut().unwrap(), &bytes, find(&format!("head.{m}.bias"))?, 8, Dtype::F64, f64d)?;
    }
    Ok((model, meta))
}

/// Checkpoint directory named by a run's `best.json`.
pub fn best_in_run(run_dir: &Path) -> Result<PathBuf> {
    let p = run_dir.join("best.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let rec: CheckpointRecord = serde_json::from_str(&text)?;
    rec.path
        .ok_or_else(|| Error::invalid(format!("{} names no checkpoint path", p.display())))
}

/// Accepts either a checkpoint directory or a run directory.
pub fn resolve(path: &Path) -> Result<PathBuf> {
    if path.join("manifest.json").exists() {
        Ok(path.to_path_buf())
    } else {
        best_in_run(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::Objective;

    #[test]
    fn round_trip_all_objectives() {
        for obj in [Objective::Protomm, Objective::Clip] {
            let mut cfg = PretrainConfig::default();
            cfg.encoder.base_width = 4;
            cfg.encoder.embed_dim = 8;
            cfg.prototypes.count = 5;
            cfg.loss.objective = obj;
            let mut model = Model::init(&cfg).unwrap();
            model.log_temperature = -0.3;
            let rec = CheckpointRecord {
                epoch: 3,
                train_loss: 1.0,
                val_loss: 2.0,
                path: None,
                fingerprint: cfg.fingerprint(),
            };
            let dir = tempfile::tempdir().unwrap();
            save(dir.path(), &model, &cfg, &rec).unwrap();
            let (back, meta) = load(dir.path()).unwrap();
            assert_eq!(back, model);
            assert_eq!(meta.epoch, 3);
            assert_eq!(meta.architecture.weighted_layers, 26);
            assert_eq!(meta.bank.is_some(), obj == Objective::Protomm);
            let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
            if obj == Objective::Protomm {
                assert_eq!(raw["bank"]["sinkhorn_scope"], "per_modality_view");
                assert!(meta.tensors.iter().any(|t| t.name == "prototypes" && t.shape == vec![8, 5]));
            }
        }
    }

    #[test]
    fn missing_archive_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Io { .. })));
    }
}
