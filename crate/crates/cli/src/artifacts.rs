//! Output directory with a manifest line per written file.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::config::Format;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.txt";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Artifacts {
    dir: PathBuf,
    formats: Vec<Format>,
    input_hash: String,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn create(dir: &Path, formats: &[Format], canonical_config: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            formats: formats.to_vec(),
            input_hash: sha256_hex(canonical_config.as_bytes()),
            written: Vec::new(),
        })
    }

    pub fn input_hash(&self) -> &str {
        &self.input_hash
    }

    #[cfg(test)]
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes `name` when `format` is enabled (always when `None`) and
    /// appends its manifest line.
    pub fn write(&mut self, name: &str, format: Option<Format>, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(f) = format {
            if !self.formats.contains(&f) {
                return Ok(());
            }
        }
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let line = format!(
            "{name} sha256={} input={} version={VERSION} timestamp={stamp}\n",
            sha256_hex(bytes),
            self.input_hash
        );
        let manifest = self.dir.join(MANIFEST);
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&manifest)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|e| CliError::Io(format!("cannot append to {}: {e}", manifest.display())))?;
        log::info!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }

    /// Renders into a buffer and writes it.
    pub fn write_with(
        &mut self,
        name: &str,
        format: Option<Format>,
        render: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        render(&mut buf)?;
        self.write(name, format, &buf)
    }
}
