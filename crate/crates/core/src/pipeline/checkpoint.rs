use super::data::NormStats;
use crate::error::{Error, Result};
use crate::geodesic::EncodeOptions;
use crate::imageio::{decode_f32_le, encode_f32_le};
use crate::netzoo::{build_model, NetworkConfig, SegmentationModel};
use crate::tensor::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Number of f32 values.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub stage: String,
    pub iteration: usize,
    /// Mean training loss since the previous entry.
    pub train_loss: Scalar,
    pub val_dice: Option<Scalar>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub topology: NetworkConfig,
    pub norm: NormStats,
    /// Interaction encoding the model was trained with (refinement networks).
    pub encoding: Option<EncodeOptions>,
    pub iteration: usize,
    pub seed: u64,
    pub param_count: usize,
    pub tensors: Vec<TensorEntry>,
    pub history: Vec<HistoryEntry>,
}

/// Model plus everything needed to run it on raw images.
#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub model: SegmentationModel,
    pub norm: NormStats,
    pub encoding: Option<EncodeOptions>,
    pub iteration: usize,
    pub seed: u64,
    pub history: Vec<HistoryEntry>,
}

pub fn checkpoint_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{name}.json")),
        dir.join(format!("{name}.bin")),
    )
}

impl ModelCheckpoint {
    pub fn manifest(&self) -> Manifest {
        let store = &self.model.store;
        let mut offset = 0;
        let tensors: Vec<TensorEntry> = store
            .ids()
            .map(|id| {
                let v = &store.get(id).value;
                let e = TensorEntry {
                    name: store.name(id).to_string(),
                    shape: v.shape().to_vec(),
                    offset,
                    len: v.len(),
                };
                offset += 4 * v.len();
                e
            })
            .collect();
        Manifest {
            version: CHECKPOINT_VERSION,
            topology: self.model.config.clone(),
            norm: self.norm.clone(),
            encoding: self.encoding,
            iteration: self.iteration,
            seed: self.seed,
            param_count: store.scalar_count(),
            tensors,
            history: self.history.clone(),
        }
    }

    /// Rounds every parameter to f32 so the in-memory model equals its
    /// saved form.
    pub fn round_params(&mut self) {
        let store = &mut self.model.store;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for v in store.get_mut(id).value.data_mut() {
                *v = *v as f32 as Scalar;
            }
        }
    }

    pub fn blob(&self) -> Vec<u8> {
        let store = &self.model.store;
        store
            .ids()
            .flat_map(|id| encode_f32_le(store.get(id).value.data()))
            .collect()
    }

    /// Writes `<dir>/<name>.json` and `<dir>/<name>.bin`.
    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (json, bin) = checkpoint_paths(dir, name);
        std::fs::write(&bin, self.blob())?;
        std::fs::write(&json, serde_json::to_vec_pretty(&self.manifest())?)?;
        Ok(())
    }

    /// Loads from the manifest path (`<name>.json`); the blob sits next to it.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
        validate_manifest(&manifest)?;
        let bin = manifest_path.with_extension("bin");
        let blob = std::fs::read(&bin)?;
        Self::from_parts(manifest, &blob)
    }

    pub fn from_parts(manifest: Manifest, blob: &[u8]) -> Result<Self> {
        validate_manifest(&manifest)?;
        if blob.len() != 4 * manifest.param_count {
            return Err(Error::Checkpoint(format!(
                "blob holds {} bytes, manifest declares {} parameters",
                blob.len(),
                manifest.param_count
            )));
        }
        // weights are overwritten below; the generator only fixes shapes
        let mut model = build_model(&manifest.topology, &mut ChaCha8Rng::seed_from_u64(0))?;
        let ids: Vec<_> = model.store.ids().collect();
        if ids.len() != manifest.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "topology has {} tensors, manifest lists {}",
                ids.len(),
                manifest.tensors.len()
            )));
        }
        for (id, e) in ids.into_iter().zip(&manifest.tensors) {
            let p = model.store.get_mut(id);
            if p.value.shape() != e.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name,
                    e.shape,
                    p.value.shape()
                )));
            }
            let bytes = blob.get(e.offset..e.offset + 4 * e.len).ok_or_else(|| {
                Error::Checkpoint(format!("tensor {} lies outside the blob", e.name))
            })?;
            let values = decode_f32_le(bytes)?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "tensor {} holds non-finite values",
                    e.name
                )));
            }
            p.value.data_mut().copy_from_slice(&values);
        }
        Ok(ModelCheckpoint {
            model,
            norm: manifest.norm,
            encoding: manifest.encoding,
            iteration: manifest.iteration,
            seed: manifest.seed,
            history: manifest.history,
        })
    }
}

fn validate_manifest(m: &Manifest) -> Result<()> {
    if m.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unknown checkpoint version {}",
            m.version
        )));
    }
    m.topology.validate()?;
    let declared: usize = m.tensors.iter().map(|e| e.len).sum();
    if declared != m.param_count {
        return Err(Error::Checkpoint(format!(
            "tensor lengths sum to {declared}, param_count is {}",
            m.param_count
        )));
    }
    for e in &m.tensors {
        if e.shape.iter().product::<usize>() != e.len {
            return Err(Error::Checkpoint(format!(
                "tensor {} length {} does not match shape {:?}",
                e.name, e.len, e.shape
            )));
        }
    }
    Ok(())
}
