use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_SCHEMA: &str = "spoet.manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to reproduce the files of one output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub command: &'static str,
    pub tool_version: &'static str,
    /// Configuration with every default filled in.
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub master_seed: Option<u64>,
    pub threads: usize,
    pub outcome: serde_json::Value,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &'static str, config: serde_json::Value, threads: usize) -> Self {
        RunManifest {
            schema: MANIFEST_SCHEMA,
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: BTreeMap::new(),
            master_seed: None,
            threads,
            outcome: serde_json::Value::Null,
            timings: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), Failure> {
        self.inputs
            .insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn time(&mut self, stage: &str, since: Instant) {
        self.timings
            .insert(stage.to_string(), since.elapsed().as_secs_f64());
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Failure::data(e.to_string()))?;
        write_file(&dir.join(MANIFEST_FILE), text.as_bytes())
    }
}

pub fn file_digest(path: &Path) -> Result<String, Failure> {
    let mut file = fs::File::open(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary sibling so a crash never leaves a torn file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_input() {
        assert_eq!(
            digest_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        write_file(&path, b"abc").unwrap();
        assert_eq!(file_digest(&path).unwrap(), digest_bytes(b"abc"));
        assert!(!path.with_extension("tmp").exists());
    }
}
