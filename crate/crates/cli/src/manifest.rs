//! Run manifests: what was run, on which inputs, producing which outputs.

use crate::error::CliError;
use crate::Command;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const TRAIN_LOG: &str = "train_log.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Command,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory. Columns listed in
    /// `masked_columns` are blanked before hashing.
    pub outputs: Vec<FileDigest>,
    pub masked_columns: Vec<String>,
    pub wallclock_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of an output as compared across reruns. The training log's
/// wall-clock column is the only nondeterministic content and is blanked.
pub fn canonical_digest(name: &str, bytes: &[u8]) -> String {
    if name != TRAIN_LOG {
        return sha256_hex(bytes);
    }
    let text = String::from_utf8_lossy(bytes);
    let masked: String = text
        .lines()
        .map(|l| match l.rfind(',') {
            Some(i) => format!("{},\n", &l[..i]),
            None => format!("{l}\n"),
        })
        .collect();
    sha256_hex(masked.as_bytes())
}

pub fn digest_input(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let abs = fs::canonicalize(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest {
        path: abs,
        sha256: sha256_hex(&bytes),
    })
}

/// Collects output files of one run.
pub struct Outputs {
    pub dir: PathBuf,
    pub files: Vec<FileDigest>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Outputs, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record(name, bytes);
        Ok(())
    }

    /// Registers a file written by other means.
    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.files.retain(|f| f.path != Path::new(name));
        self.files.push(FileDigest {
            path: name.into(),
            sha256: canonical_digest(name, bytes),
        });
    }

    pub fn finish(
        mut self,
        command: Command,
        seeds: Vec<u64>,
        inputs: Vec<FileDigest>,
        started: std::time::Instant,
    ) -> Result<RunManifest, CliError> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            seeds,
            inputs,
            outputs: self.files,
            masked_columns: vec![format!("{TRAIN_LOG}:wallclock_s")],
            wallclock_s: started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
