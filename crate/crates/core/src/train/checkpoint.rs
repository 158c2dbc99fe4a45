//! Checkpoints are safetensors files. Tensors: every parameter under its
//! name, Adam moments under `adam.m.<name>` / `adam.v.<name>`. The header
//! metadata holds `format`, `version`, and JSON for `arch`, `train`,
//! `step`, `epoch`, `history` and `dataset`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::nets::{ArchConfig, ConvModel, LatentModel};

use super::{EpochMetrics, Moments, TrainConfig, TrainState};

pub const CHECKPOINT_FORMAT: &str = "refvae-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub epoch: u64,
    pub history: Vec<EpochMetrics>,
    /// Fingerprint of the dataset the run used, if known.
    pub dataset: Option<String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_state(
        state: &TrainState<ConvModel>,
        train: &TrainConfig,
        dataset: Option<String>,
    ) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for p in state.model.params().iter() {
            tensors.insert(p.name.clone(), p.var.as_tensor().detach().copy()?);
        }
        for (name, m) in &state.moments {
            tensors.insert(format!("adam.m.{name}"), m.m.copy()?);
            tensors.insert(format!("adam.v.{name}"), m.v.copy()?);
        }
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION,
            arch: state.model.config().clone(),
            train: train.clone(),
            step: state.step,
            epoch: state.epoch,
            history: state.history.clone(),
            dataset,
            tensors,
        })
    }

    /// Rebuild the network with the stored parameter values.
    pub fn model(&self) -> Result<ConvModel> {
        let model = ConvModel::new(&self.arch, self.train.variant.model_variant(), self.train.seed)?;
        model.params().load(|name| self.tensors.get(name))?;
        Ok(model)
    }

    /// Network plus optimiser state, ready to continue training.
    pub fn to_state(&self) -> Result<TrainState<ConvModel>> {
        let mut state = TrainState::new(self.model()?)?;
        for (name, mom) in state.moments.iter_mut() {
            let get = |prefix: &str| {
                self.tensors
                    .get(&format!("adam.{prefix}.{name}"))
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint(format!("missing Adam moment {prefix} for {name}")))
            };
            *mom = Moments {
                m: get("m")?,
                v: get("v")?,
            };
        }
        state.step = self.step;
        state.epoch = self.epoch;
        state.history = self.history.clone();
        Ok(state)
    }
}

fn to_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => (Dtype::F32, flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    })
}

fn from_view(name: &str, v: &TensorView) -> Result<Tensor> {
    let shape = v.shape().to_vec();
    let data = v.data();
    let t = match v.dtype() {
        Dtype::F32 => {
            let vals: Vec<f32> = data
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Tensor::from_vec(vals, shape, &Device::Cpu)?
        }
        Dtype::F64 => {
            let vals: Vec<f64> = data
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            Tensor::from_vec(vals, shape, &Device::Cpu)?
        }
        other => return Err(Error::Checkpoint(format!("{name}: unsupported dtype {other:?}"))),
    };
    Ok(t)
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut raw = Vec::with_capacity(ckpt.tensors.len());
    for (name, t) in &ckpt.tensors {
        let (dtype, bytes) = to_bytes(t)?;
        raw.push((name.clone(), dtype, t.dims().to_vec(), bytes));
    }
    let mut views = Vec::with_capacity(raw.len());
    for (name, dtype, shape, bytes) in &raw {
        let view = TensorView::new(*dtype, shape.clone(), bytes)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        views.push((name.clone(), view));
    }
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), CHECKPOINT_FORMAT.to_string());
    meta.insert("version".to_string(), ckpt.version.to_string());
    meta.insert("arch".to_string(), json(&ckpt.arch)?);
    meta.insert("train".to_string(), json(&ckpt.train)?);
    meta.insert("step".to_string(), ckpt.step.to_string());
    meta.insert("epoch".to_string(), ckpt.epoch.to_string());
    meta.insert("history".to_string(), json(&ckpt.history)?);
    meta.insert("dataset".to_string(), json(&ckpt.dataset)?);
    let bytes = safetensors::serialize(views, Some(meta))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let bytes = canonical_header(bytes)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // Write then rename so a crash never leaves a truncated checkpoint.
    let tmp = path.with_extension("safetensors.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Rewrites the JSON header with sorted keys so identical checkpoints are
/// byte-identical. The metadata map is hashed, so its order varies by process.
fn canonical_header(mut bytes: Vec<u8>) -> Result<Vec<u8>> {
    let bad = || Error::Checkpoint("malformed safetensors header".into());
    let len = u64::from_le_bytes(bytes[..8].try_into().map_err(|_| bad())?) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).map_err(|_| bad())?;
    let mut sorted = serde_json::to_vec(&header).map_err(|_| bad())?;
    if sorted.len() > len {
        return Err(bad());
    }
    sorted.resize(len, b' ');
    bytes[8..8 + len].copy_from_slice(&sorted);
    Ok(bytes)
}

fn field<T: DeserializeOwned>(meta: &HashMap<String, String>, key: &str, path: &Path) -> Result<T> {
    let raw = meta
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("{}: metadata lacks {key}", path.display())))?;
    serde_json::from_str(raw).map_err(|e| Error::Checkpoint(format!("{}: bad {key}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(bad)?;
    let meta = header
        .metadata()
        .clone()
        .ok_or_else(|| Error::Checkpoint(format!("{}: no metadata", path.display())))?;
    if meta.get("format").map(String::as_str) != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Checkpoint(format!("{}: not a refvae checkpoint", path.display())));
    }
    let version: u32 = field(&meta, "version", path)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}",
            path.display()
        )));
    }
    let st = SafeTensors::deserialize(&bytes).map_err(bad)?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.iter() {
        tensors.insert(name.to_string(), from_view(name, &view)?);
    }
    Ok(Checkpoint {
        version,
        arch: field(&meta, "arch", path)?,
        train: field(&meta, "train", path)?,
        step: field(&meta, "step", path)?,
        epoch: field(&meta, "epoch", path)?,
        history: field(&meta, "history", path)?,
        dataset: field(&meta, "dataset", path)?,
        tensors,
    })
}
