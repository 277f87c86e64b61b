// SPDX-License-Identifier: Apache-2.0
//! Run manifests written next to every output.

use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command_line: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    /// Seconds since the epoch; `SOURCE_DATE_EPOCH` when set.
    pub timestamp: u64,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest(path: &Path, shown: String) -> io::Result<FileDigest> {
    Ok(FileDigest { path: shown, sha256: sha256_hex(&std::fs::read(path)?) })
}

impl RunManifest {
    pub fn new(seed: u64) -> Self {
        let timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| {
                SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
            });
        Self {
            tool: "vdbb",
            version: env!("CARGO_PKG_VERSION"),
            command_line: std::env::args().skip(1).collect(),
            seed,
            inputs: Vec::new(),
            timestamp,
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs.push(digest(path, path.display().to_string())?);
        Ok(())
    }

    /// Records an output, named relative to `base` when it lies inside it.
    pub fn output(&mut self, path: &Path, base: Option<&Path>) -> io::Result<()> {
        let shown = base
            .and_then(|b| path.strip_prefix(b).ok())
            .map_or_else(|| path.display().to_string(), |p| p.display().to_string());
        self.outputs.push(digest(path, shown)?);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    /// Writes `<out>.manifest.json` beside a single-file output.
    pub fn write_beside(&mut self, out: &Path) -> io::Result<PathBuf> {
        self.output(out, None)?;
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }
}
