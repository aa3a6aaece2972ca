use std::fmt::Write as _;
use std::path::Path;

use edgeguard::ledger::Digest;

use crate::{write_file, CliError};

/// `manifest.txt`: the effective settings of a run plus the SHA-256 of
/// every file it wrote. Holds no timestamps, so identical runs produce
/// identical manifests.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
    outputs: Vec<(String, Digest)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Writes `bytes` to `dir/name` and records its digest.
    pub fn output(&mut self, dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let bytes = bytes.as_ref();
        write_file(&dir.join(name), bytes)?;
        self.outputs.push((name.to_string(), Digest::of(bytes)));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (name, d) in &self.outputs {
            let _ = writeln!(out, "output.{name} = sha256:{}", d.to_hex());
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_file(&dir.join("manifest.txt"), self.render())
    }
}
