//! Artifact bookkeeping shared by every subcommand: each manifest lists the
//! files it produced as `artifact.<relative path> = <sha256>`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use kiqt_core::tensorio::KeyValues;
use sha2::{Digest, Sha256};

pub const ARTIFACT_PREFIX: &str = "artifact.";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Relative path with forward slashes, so manifests are portable.
fn relative(base: &Path, path: &Path) -> Result<String> {
    let rel = path
        .strip_prefix(base)
        .with_context(|| format!("{} is outside {}", path.display(), base.display()))?;
    Ok(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"))
}

/// Hashes `paths` and records them under `base`, in the given order.
pub fn record(kv: &mut KeyValues, base: &Path, paths: &[PathBuf]) -> Result<()> {
    for path in paths {
        kv.insert(format!("{ARTIFACT_PREFIX}{}", relative(base, path)?), sha256_file(path)?);
    }
    Ok(())
}

/// Problems found while checking a manifest's artifact list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArtifactProblem {
    Missing(String),
    HashMismatch(String),
}

/// Confirms every listed artifact exists under `base` with the recorded hash.
/// Returns the number of artifacts checked alongside any problems.
pub fn verify(kv: &KeyValues, base: &Path) -> Result<(usize, Vec<ArtifactProblem>)> {
    let mut problems = Vec::new();
    let mut checked = 0;
    for (key, hash) in kv.iter() {
        let Some(rel) = key.strip_prefix(ARTIFACT_PREFIX) else { continue };
        checked += 1;
        let path = base.join(rel);
        if !path.is_file() {
            problems.push(ArtifactProblem::Missing(rel.to_string()));
        } else if sha256_file(&path)? != hash {
            problems.push(ArtifactProblem::HashMismatch(rel.to_string()));
        }
    }
    Ok((checked, problems))
}
