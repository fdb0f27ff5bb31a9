use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Written last into every output directory. Output files are listed with
/// their hashes so a rerun can be checked byte for byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub config_path: PathBuf,
    pub config_sha256: String,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub version: String,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn hash_outputs(dir: &Path, files: &[String]) -> std::io::Result<Vec<OutputFile>> {
    files
        .iter()
        .map(|f| {
            Ok(OutputFile {
                file: f.clone(),
                sha256: sha256_hex(&std::fs::read(dir.join(f))?),
            })
        })
        .collect()
}

/// `seed ⊕ h(axis, value)` with `h` the first eight bytes of a SHA-256.
pub fn derive_seed(seed: u64, axis: &str, value: &str) -> u64 {
    let digest = Sha256::digest(format!("{axis}={value}").as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(head)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn derived_seeds_differ_by_item() {
        let a = derive_seed(7, "L", "2");
        assert_eq!(a, derive_seed(7, "L", "2"));
        assert_ne!(a, derive_seed(7, "L", "4"));
        assert_ne!(a, derive_seed(7, "M", "2"));
        assert_ne!(a, derive_seed(8, "L", "2"));
    }
}
