//! Run manifests: what went in, what came out, and how.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::files;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Deliberately has no timestamps, so reruns produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub command: String,
    pub flags: BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path, label: String) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: label,
        sha256: sha256_hex(&bytes),
    })
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            core_version: cascadekit_core::VERSION,
            command: command.into(),
            flags: BTreeMap::new(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn flag(&mut self, name: &str, value: impl Serialize) -> &mut Self {
        self.flags
            .insert(name.into(), serde_json::to_value(value).expect("serializable"));
        self
    }

    /// Hashes an input file, recorded under the path as given.
    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        let d = digest_file(path, path.display().to_string())?;
        self.inputs.push(d);
        Ok(self)
    }

    /// Writes `text` to `dir/name` and records its digest.
    pub fn output(&mut self, dir: &Path, name: &str, text: &str) -> Result<()> {
        files::write_text(&dir.join(name), text)?;
        self.outputs.push(FileDigest {
            path: name.into(),
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        files::write_json(path, self)
    }
}
