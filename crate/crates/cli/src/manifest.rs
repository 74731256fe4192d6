use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use sillnet_core::training::TrainConfig;
use sillnet_core::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    /// sha256 over file bytes; directories hash their sorted relative
    /// paths and contents.
    pub sha256: String,
}

/// Written beside every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: TrainConfig,
    pub config_digest: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn hash_into(hasher: &mut Sha256, root: &Path, path: &Path) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            hash_into(hasher, root, &p)?;
        }
    } else {
        let rel = path.strip_prefix(root).unwrap_or(path);
        hasher.update(rel.to_string_lossy().as_bytes());
        let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
        hasher.update(&buf);
    }
    Ok(())
}

pub fn digest_path(path: &Path) -> Result<InputDigest> {
    let mut hasher = Sha256::new();
    hash_into(&mut hasher, path, path)?;
    let hash = hasher.finalize();
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

impl RunManifest {
    pub fn write(&self) -> Result<PathBuf> {
        let path = self.out_dir.join(MANIFEST_NAME);
        fs::write(&path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
