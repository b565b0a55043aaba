//! Output directory handling and the run manifest.
//!
//! Every command writes a `manifest.txt` under `--out`: the command name,
//! tool versions, a hash of the resolved settings, and the settings
//! themselves, one `key=value` per line. The settings block is complete
//! enough to re-run the command bit-identically. Scheduling knobs that do
//! not affect results (worker count) are deliberately absent.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(path)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
        Ok(OutDir { root: path.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_manifest(&self, command: &str, settings: &[(String, String)]) -> Result<(), CliError> {
        let mut block = String::new();
        for (key, value) in settings {
            writeln!(block, "{key}={value}").expect("string write");
        }
        let hash = Sha256::digest(block.as_bytes());
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        let mut manifest = String::new();
        writeln!(manifest, "command={command}").expect("string write");
        writeln!(manifest, "cli_version={}", env!("CARGO_PKG_VERSION")).expect("string write");
        writeln!(manifest, "core_version={}", hsc_core::VERSION).expect("string write");
        writeln!(manifest, "config_sha256={hex}").expect("string write");
        manifest.push_str(&block);
        self.write("manifest.txt", manifest)
    }
}

/// Ordered settings list for the manifest.
#[derive(Default)]
pub struct Settings {
    entries: Vec<(String, String)>,
}

impl Settings {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn push_opt(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.push(key, v);
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }
}
