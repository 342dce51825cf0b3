//! Self-describing checkpoint directories.
//!
//! A checkpoint is a directory holding `manifest.json` and `weights.bin`.
//! The blob is little-endian `f32`: every parameter in walker order, then
//! for each batch-norm unit its running mean followed by its running
//! variance. The manifest carries the SHA-256 of the blob, so a truncated or
//! half-written blob never loads. Optimizer moments are not stored; a resumed
//! run restarts them from zero.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::model::{ArchitectureDescriptor, SecnnModel};
use crate::trainer::{TrainConfig, TrainStateSummary};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkerEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub descriptor: ArchitectureDescriptor,
    pub train_config: TrainConfig,
    pub state: TrainStateSummary,
    pub normalization: Normalization,
    pub walker: Vec<WalkerEntry>,
    pub param_count: usize,
    pub running_stat_count: usize,
    pub weights_sha256: String,
}

/// A loaded checkpoint: the rebuilt model plus everything the manifest said.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: SecnnModel,
}

/// Serializes parameters and running statistics into the blob layout.
pub fn encode_weights(model: &SecnnModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * (model.param_count() + model.running_stat_count()));
    for p in model.parameters() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for r in model.running_stats() {
        for v in r.mean.iter().chain(&r.var) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_weights(model: &mut SecnnModel, blob: &[u8]) -> Result<()> {
    let expected = 4 * (model.param_count() + model.running_stat_count());
    if blob.len() != expected {
        return Err(Error::LengthMismatch(format!(
            "weights blob has {} bytes, architecture needs {expected}",
            blob.len()
        )));
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    for p in model.parameters_mut() {
        for v in p.value.data_mut() {
            *v = values.next().expect("length checked");
        }
    }
    for r in model.running_stats_mut() {
        for v in r.mean.iter_mut().chain(r.var.iter_mut()) {
            *v = values.next().expect("length checked");
        }
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn walker(model: &SecnnModel) -> Vec<WalkerEntry> {
    model
        .parameter_names()
        .into_iter()
        .zip(model.parameters())
        .map(|(name, p)| WalkerEntry {
            name,
            shape: p.value.shape().to_vec(),
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn staging_path(dir: &Path, tag: &str) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    dir.with_file_name(format!(".{name}.{tag}-{}", std::process::id()))
}

/// Writes a checkpoint directory at `dir`, replacing any previous one.
///
/// Files are staged in a sibling directory and moved into place with a
/// rename, so readers see either the old checkpoint or the new one.
pub fn save_checkpoint(
    dir: &Path,
    model: &SecnnModel,
    config: &TrainConfig,
    state: &TrainStateSummary,
    normalization: Normalization,
) -> Result<Manifest> {
    let blob = encode_weights(model);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        descriptor: model.describe(),
        train_config: config.clone(),
        state: state.clone(),
        normalization,
        walker: walker(model),
        param_count: model.param_count(),
        running_stat_count: model.running_stat_count(),
        weights_sha256: sha256_hex(&blob),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: dir.join(MANIFEST_FILE),
        source: e,
    })?;

    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let staging = staging_path(dir, "tmp");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;
    write_file(&staging.join(WEIGHTS_FILE), &blob)?;
    write_file(&staging.join(MANIFEST_FILE), text.as_bytes())?;

    if dir.exists() {
        let retired = staging_path(dir, "old");
        if retired.exists() {
            fs::remove_dir_all(&retired).map_err(|e| Error::io(&retired, e))?;
        }
        fs::rename(dir, &retired).map_err(|e| Error::io(dir, e))?;
        fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;
        fs::remove_dir_all(&retired).map_err(|e| Error::io(&retired, e))?;
    } else {
        fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(manifest)
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads just the manifest, checking the format version.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let probe: VersionProbe = parse_json(&path, &text)?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    parse_json(&path, &text)
}

/// Loads and verifies a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let path = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if sha256_hex(&blob) != manifest.weights_sha256 {
        return Err(Error::Checksum { path });
    }

    let mut model = SecnnModel::from_descriptor(&manifest.descriptor, &mut ChaCha8Rng::seed_from_u64(0))?;
    if manifest.param_count != model.param_count() {
        return Err(Error::LengthMismatch(format!(
            "manifest records {} parameters, descriptor implies {}",
            manifest.param_count,
            model.param_count()
        )));
    }
    if manifest.running_stat_count != model.running_stat_count() {
        return Err(Error::LengthMismatch(format!(
            "manifest records {} running statistics, descriptor implies {}",
            manifest.running_stat_count,
            model.running_stat_count()
        )));
    }
    if manifest.walker != walker(&model) {
        return Err(Error::LengthMismatch(
            "manifest walker order disagrees with the descriptor".into(),
        ));
    }
    decode_weights(&mut model, &blob)?;
    Ok(Checkpoint { manifest, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::trainer::TrainState;

    fn small() -> SecnnModel {
        let cfg = ModelConfig {
            image_size: 8,
            ..ModelConfig::default()
        };
        SecnnModel::build_initial(2, 4, 3, cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn blob_length_counts_params_and_stats() {
        let m = small();
        assert_eq!(encode_weights(&m).len(), 4 * (m.param_count() + m.running_stat_count()));
    }

    #[test]
    fn round_trip_restores_every_value() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = small();
        m.insert_identity_unit(1, 0.01, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        m.running_stats_mut()[0].mean[1] = 0.75;
        let cfg = TrainConfig::default();
        let state = TrainState::new(&cfg).summary();
        let path = dir.path().join("ck");
        save_checkpoint(&path, &m, &cfg, &state, Normalization::CIFAR10).unwrap();
        save_checkpoint(&path, &m, &cfg, &state, Normalization::CIFAR10).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model.flat_params(), m.flat_params());
        assert_eq!(back.model.describe(), m.describe());
        assert_eq!(back.model.running_stats(), m.running_stats());
        assert_eq!(back.manifest.train_config, cfg);
    }
}
