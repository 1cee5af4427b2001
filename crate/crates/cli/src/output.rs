//! Run directories: `{out}/{command}/{hash tag}/` plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    tool: &'a str,
    version: &'a str,
    config_hash: &'a str,
    config: &'a C,
}

pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates the run directory for the effective `config`, whose hash names
    /// the directory, and records the manifest.
    pub fn create<C: Serialize>(out: &Path, command: &str, config: &C) -> Result<Self, CliError> {
        let canonical = serde_json::to_string(config).map_err(CliError::from_json)?;
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        let path = out.join(command).join(&hash[..16]);
        fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        let dir = RunDir { path };
        let manifest = Manifest {
            command,
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &hash,
            config,
        };
        dir.json("manifest.json", &manifest)?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn bytes(&self, name: &str, data: &[u8]) -> Result<(), CliError> {
        let p = self.path.join(name);
        fs::write(&p, data).map_err(|e| CliError::io(&p, e))
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::from_json)?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    /// Renders a CSV through `write` into memory, then stores it.
    pub fn csv(
        &self,
        name: &str,
        write: impl FnOnce(&mut Vec<u8>) -> disdis::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.bytes(name, &buf)
    }
}
