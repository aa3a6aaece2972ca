//! Operator commands: `train`, `evaluate`, `simulate`, `ledger`.
//!
//! Exit status: 0 success, 2 usage, 3 bad input data or scenario,
//! 4 model load or schema error, 5 ledger verification failure,
//! 6 file system error.

mod args;
mod evaluate;
mod ledger_cmd;
mod manifest;
mod simulate;
mod train;

use std::path::{Path, PathBuf};

use clap::Parser;
use thiserror::Error;

pub use args::{Cli, Command};
pub use manifest::Manifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Verify(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(_) => 4,
            CliError::Verify(_) => 5,
            CliError::Io(_) => 6,
        }
    }
}

impl From<edgeguard::ids_data::DataError> for CliError {
    fn from(e: edgeguard::ids_data::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<edgeguard::ids_models::ModelError> for CliError {
    fn from(e: edgeguard::ids_models::ModelError) -> Self {
        CliError::Model(e.to_string())
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Appends the entries of a `--config` file to the argument list. Later
/// occurrences win, so the file overrides flags given on the command line.
///
/// The file holds `key = value` lines; `#` starts a comment. A key is a
/// long flag name without dashes. `true` turns a switch on, `false` leaves
/// it off.
pub fn expand_config(mut args: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = match args[pos].strip_prefix("--config=") {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(
            args.get(pos + 1)
                .ok_or_else(|| CliError::Usage("--config needs a path".into()))?,
        ),
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config {} line {}: expected key = value", path.display(), i + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        match v {
            "true" => args.push(format!("--{k}")),
            "false" => {}
            _ => {
                args.push(format!("--{k}"));
                args.push(v.to_string());
            }
        }
    }
    Ok(args)
}

pub fn run(args: Vec<String>) -> Result<(), CliError> {
    let args = expand_config(args)?;
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Usage(e.to_string()));
        }
    };
    match &cli.command {
        Command::Train(a) => train::run(&cli, a),
        Command::Evaluate(a) => evaluate::run(&cli, a),
        Command::Simulate(a) => simulate::run(&cli, a),
        Command::Ledger { action } => ledger_cmd::run(action),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn config_entries_are_appended() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "family = gbt # boosted\n\nsynthetic = true\nverbose = false\n").unwrap();
        let p = path.to_str().unwrap();
        let got = expand_config(strings(&["edgeguard", "train", "--config", p])).unwrap();
        assert_eq!(
            got,
            strings(&["edgeguard", "train", "--config", p, "--family", "gbt", "--synthetic"])
        );
        let cli = Cli::try_parse_from(&got).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!(a.family, edgeguard::ids_models::Family::Gbt);
    }

    #[test]
    fn config_errors_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "family gbt\n").unwrap();
        let err = expand_config(strings(&["edgeguard", "--config", path.to_str().unwrap()])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(expand_config(strings(&["edgeguard", "--config"])).is_err());
        let untouched = strings(&["edgeguard", "train"]);
        assert_eq!(expand_config(untouched.clone()).unwrap(), untouched);
    }
}
