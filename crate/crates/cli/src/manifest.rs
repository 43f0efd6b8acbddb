//! Output bookkeeping: every file a command writes is recorded with its
//! SHA-256 digest, alongside digests of the inputs and the resolved config,
//! in `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    rerun: String,
    config: &'a RunConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Run<'a> {
    command: &'a str,
    cfg: &'a RunConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl<'a> Run<'a> {
    pub fn start(command: &'a str, cfg: &'a RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.out)
            .map_err(|e| CliError::Runtime(format!("output: cannot create {}: {e}", cfg.out.display())))?;
        Ok(Run {
            command,
            cfg,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Runtime(format!("input: cannot read {}: {e}", path.display())))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Write `bytes` to `<out>/<name>` and record it.
    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.cfg.out.join(name);
        let bytes = bytes.as_ref();
        fs::write(&path, bytes)
            .map_err(|e| CliError::Runtime(format!("output: cannot write {}: {e}", path.display())))?;
        self.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    /// Write the resolved config and the manifest.
    pub fn finish(mut self) -> Result<(), CliError> {
        self.write(RESOLVED_CONFIG, self.cfg.to_toml())?;
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.cfg.seed,
            rerun: format!(
                "targetrank {} --config {}",
                self.command,
                self.cfg.out.join(RESOLVED_CONFIG).display()
            ),
            config: self.cfg,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = manifest.config.out.join(MANIFEST);
        fs::write(&path, text)
            .map_err(|e| CliError::Runtime(format!("output: cannot write {}: {e}", path.display())))
    }
}
