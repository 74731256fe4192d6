//! Checkpoint archive: a tar file holding `config.json` plus one raw
//! little-endian `f32` entry per tensor, named by its dotted path.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, SillModel};
use crate::error::{Error, Result};
use crate::nn::Module;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointConfig {
    #[serde(flatten)]
    model: ModelConfig,
    version: u32,
    #[serde(default)]
    has_real_decoder: bool,
    #[serde(default)]
    classifier_ready: bool,
}

fn append(builder: &mut tar::Builder<File>, name: &str, bytes: &[u8]) -> Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(bytes.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_cksum();
    builder
        .append_data(&mut header, name, bytes)
        .map_err(|e| Error::Checkpoint(format!("writing {name}: {e}")))
}

pub fn save_checkpoint(model: &SillModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut builder = tar::Builder::new(file);
    let cfg = CheckpointConfig {
        model: model.config.clone(),
        version: CHECKPOINT_VERSION,
        has_real_decoder: model.real_decoder.is_some(),
        classifier_ready: model.classifier_ready,
    };
    append(&mut builder, "config.json", &serde_json::to_vec_pretty(&cfg)?)?;

    let mut entries = Vec::new();
    model.clone().visit("", &mut |name, _, p| {
        let bytes: Vec<u8> = p.value.iter().flat_map(|v| v.to_le_bytes()).collect();
        entries.push((name.to_string(), bytes));
    });
    for (name, bytes) in entries {
        append(&mut builder, &name, &bytes)?;
    }
    builder
        .into_inner()
        .map_err(|e| Error::Checkpoint(format!("finishing archive: {e}")))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SillModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut archive = tar::Archive::new(file);
    let mut blobs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let entries = archive
        .entries()
        .map_err(|e| Error::Checkpoint(format!("reading archive: {e}")))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| Error::Checkpoint(format!("reading entry: {e}")))?;
        let name = entry
            .path()
            .map_err(|e| Error::Checkpoint(format!("entry name: {e}")))?
            .to_string_lossy()
            .into_owned();
        let mut bytes = Vec::new();
        entry
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("reading {name}: {e}")))?;
        blobs.insert(name, bytes);
    }

    let cfg_bytes = blobs
        .remove("config.json")
        .ok_or_else(|| Error::Checkpoint("missing config.json".into()))?;
    let cfg: CheckpointConfig = serde_json::from_slice(&cfg_bytes)?;
    if cfg.version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: cfg.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut model = SillModel::new(cfg.model)?;
    if cfg.has_real_decoder {
        model.ensure_real_decoder();
    }
    model.classifier_ready = cfg.classifier_ready;

    let mut failure = None;
    model.visit("", &mut |name, _, p| {
        if failure.is_some() {
            return;
        }
        match blobs.remove(name) {
            Some(bytes) if bytes.len() == 4 * p.len() => {
                for (v, b) in p.value.iter_mut().zip(bytes.chunks_exact(4)) {
                    *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                }
            }
            Some(bytes) => {
                failure = Some(format!(
                    "tensor {name} has {} bytes, expected {}",
                    bytes.len(),
                    4 * p.len()
                ))
            }
            None => failure = Some(format!("missing tensor {name}")),
        }
    });
    if let Some(msg) = failure {
        return Err(Error::Checkpoint(msg));
    }
    if let Some(extra) = blobs.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected entry {extra}")));
    }
    Ok(model)
}
