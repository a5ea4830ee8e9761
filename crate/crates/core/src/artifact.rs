//! On-disk model artifacts: a binary network checkpoint plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Mlp;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn checkpoint_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.bin"))
}

pub fn manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

/// Writes `<name>.bin` and `<name>.json`; returns the checkpoint hash.
pub fn save_model<M: Serialize>(dir: &Path, name: &str, net: &Mlp, manifest: &M) -> Result<String> {
    fs::create_dir_all(dir)?;
    let bytes = net.to_bytes();
    fs::write(checkpoint_path(dir, name), &bytes)?;
    let mut json = serde_json::to_vec_pretty(manifest)?;
    json.push(b'\n');
    fs::write(manifest_path(dir, name), json)?;
    Ok(sha256_hex(&bytes))
}

/// Loads a checkpoint and manifest along with the checkpoint hash.
pub fn load_model<M: DeserializeOwned>(dir: &Path, name: &str) -> Result<(Mlp, M, String)> {
    let bin = checkpoint_path(dir, name);
    let json = manifest_path(dir, name);
    for p in [&bin, &json] {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.clone()));
        }
    }
    let bytes = fs::read(&bin)?;
    let net = Mlp::from_bytes(&bytes)?;
    let manifest = serde_json::from_slice(&fs::read(&json)?)?;
    Ok((net, manifest, sha256_hex(&bytes)))
}
