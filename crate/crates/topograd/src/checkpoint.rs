//! Checkpoint format: a directory holding a TOML manifest (layer specs,
//! topo config, seed, metrics snapshot), a hash of the manifest, and one
//! little-endian f64 blob per parameter tensor. Everything is written
//! atomically (temp file + rename) and verified on load, so a checkpoint
//! either round-trips exactly or fails loudly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{LayerParams, Model};
use crate::sheet::LayerKind;
use crate::train::TrainConfig;
use crate::{Error, Result, Tensor};

const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.toml";
const MANIFEST_HASH: &str = "manifest.sha256";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlobRef {
    pub file: String,
    /// Element count; the file holds exactly `8·len` bytes.
    pub len: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub sheet_h: usize,
    pub sheet_w: usize,
    pub sheet_d: usize,
    pub weight: BlobRef,
    pub bias: Option<BlobRef>,
}

/// Final measurements recorded alongside the weights.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub final_training_loss: Option<f64>,
    /// (layer, final topographic loss) per target layer.
    #[serde(default)]
    pub final_topo_losses: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: TrainConfig,
    layers: Vec<LayerEntry>,
    metrics: MetricsSnapshot,
}

pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
    pub metrics: MetricsSnapshot,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write via a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn blob_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn blob_tensor(bytes: &[u8], shape: Vec<usize>) -> Result<Tensor> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("blob length not a multiple of 8".into()));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

/// Persist a model (+ config and metrics snapshot) into `dir`.
pub fn save(dir: &Path, model: &Model, config: &TrainConfig, metrics: &MetricsSnapshot) -> Result<()> {
    let weights_dir = dir.join("weights");
    fs::create_dir_all(&weights_dir)?;

    let mut entries = Vec::with_capacity(model.layers().len());
    for (ls, lp) in model.spec().layers.iter().zip(model.layers()) {
        let (h, w) = ls.kind.grid();
        let write_blob = |suffix: &str, t: &Tensor| -> Result<BlobRef> {
            let file = format!("{}.{suffix}.bin", ls.name);
            let bytes = blob_bytes(t);
            write_atomic(&weights_dir.join(&file), &bytes)?;
            Ok(BlobRef { file, len: t.len(), sha256: hex_digest(&bytes) })
        };
        entries.push(LayerEntry {
            name: ls.name.clone(),
            kind: ls.kind,
            sheet_h: h,
            sheet_w: w,
            sheet_d: ls.kind.depth(),
            weight: write_blob("weight", &lp.weight)?,
            bias: lp.bias.as_ref().map(|b| write_blob("bias", b)).transpose()?,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        layers: entries,
        metrics: metrics.clone(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;
    write_atomic(&dir.join(MANIFEST), text.as_bytes())?;
    write_atomic(&dir.join(MANIFEST_HASH), format!("{}\n", hex_digest(text.as_bytes())).as_bytes())?;
    Ok(())
}

/// Load and verify a checkpoint directory.
pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest_bytes = fs::read(dir.join(MANIFEST))?;
    let recorded = fs::read_to_string(dir.join(MANIFEST_HASH))?;
    if recorded.trim() != hex_digest(&manifest_bytes) {
        return Err(Error::Checkpoint("manifest hash mismatch".into()));
    }
    let manifest: Manifest = toml::from_str(
        std::str::from_utf8(&manifest_bytes)
            .map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?,
    )
    .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let spec = &manifest.config.model;
    if spec.layers.len() != manifest.layers.len() {
        return Err(Error::Checkpoint("manifest layer count mismatch".into()));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (ls, entry) in spec.layers.iter().zip(&manifest.layers) {
        if ls.name != entry.name || ls.kind != entry.kind {
            return Err(Error::Checkpoint(format!(
                "manifest layer {:?} disagrees with config layer {:?}",
                entry.name, ls.name
            )));
        }
        let read_blob = |blob: &BlobRef, shape: Vec<usize>| -> Result<Tensor> {
            let bytes = fs::read(dir.join("weights").join(&blob.file))?;
            if bytes.len() != blob.len * 8 {
                return Err(Error::Checkpoint(format!(
                    "{}: expected {} bytes, found {}",
                    blob.file,
                    blob.len * 8,
                    bytes.len()
                )));
            }
            if hex_digest(&bytes) != blob.sha256 {
                return Err(Error::Checkpoint(format!("{}: blob hash mismatch", blob.file)));
            }
            blob_tensor(&bytes, shape)
        };
        let weight = read_blob(&entry.weight, ls.kind.weight_shape())?;
        let bias = match (&entry.bias, ls.kind) {
            (Some(blob), LayerKind::Linear { outputs, .. }) => Some(read_blob(blob, vec![outputs])?),
            (None, _) => None,
            (Some(_), LayerKind::Conv { .. }) => {
                return Err(Error::Checkpoint("conv layers carry no bias".into()))
            }
        };
        layers.push(LayerParams { weight, bias });
    }
    let model = Model::from_parts(spec.clone(), layers)?;
    Ok(Checkpoint { model, config: manifest.config, metrics: manifest.metrics })
}
