use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command run. Wall-clock time is deliberately left out
/// so that identical runs give identical manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<FileHash>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<FileHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

impl RunManifest {
    pub fn new(command: &'static str, config_json: &str, seed: Option<u64>) -> Self {
        Self {
            tool: "objmap",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: sha256_hex(config_json.as_bytes()),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs.push(FileHash {
            path: path.display().to_string(),
            sha256: hash_file(path)?,
        });
        Ok(())
    }

    /// Records `dir/name`.
    pub fn output(&mut self, dir: &Path, name: &str) -> io::Result<()> {
        self.outputs.push(FileHash {
            path: name.to_string(),
            sha256: hash_file(&dir.join(name))?,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("plain data");
        text.push('\n');
        fs::write(path, text)
    }
}
