//! Run manifest written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command bit-for-bit. Deliberately carries no
/// timestamps or host details.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// Input path as given mapped to its SHA-256 hex digest.
    pub input_digests: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: Option<u64>) -> CliResult<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            input_digests: BTreeMap::new(),
        })
    }

    pub fn with_input(mut self, path: &Path) -> CliResult<Self> {
        let digest = sha256_file(path)?;
        self.input_digests.insert(path.display().to_string(), digest);
        Ok(self)
    }

    pub fn write(&self, out_dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(out_dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("x.csv");
        fs::write(&input, "1,2\n").unwrap();
        let m = RunManifest::new("decompose", &serde_json::json!({"lambda": 0.5}), Some(3))
            .unwrap()
            .with_input(&input)
            .unwrap();
        m.write(dir.path()).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(v["command"], "decompose");
        assert_eq!(v["seed"], 3);
        assert_eq!(v["config"]["lambda"], 0.5);
        assert_eq!(v["input_digests"].as_object().unwrap().len(), 1);
    }
}
