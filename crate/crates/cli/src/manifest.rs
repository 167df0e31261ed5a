//! Run manifests: enough to re-run a command and check its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::format;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as parsed.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub rng_seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub elapsed_ms: u128,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> CliResult<FileDigest> {
    Ok(FileDigest { path: path.to_path_buf(), sha256: sha256_hex(&format::read(path)?) })
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serialises");
        format::write(path, format!("{json}\n").as_bytes())
    }

    pub fn read(path: &Path) -> CliResult<RunManifest> {
        let bytes = format::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Output files whose current digest differs from the recorded one.
    pub fn mismatched_outputs(&self) -> CliResult<Vec<PathBuf>> {
        let mut bad = Vec::new();
        for d in &self.outputs {
            if digest_file(&d.path)?.sha256 != d.sha256 {
                bad.push(d.path.clone());
            }
        }
        Ok(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
