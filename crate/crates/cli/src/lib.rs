//! Command-line front end: `fit` a CSV dataset or `bench` a generator model.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 bad input (CSV,
//! config, flags, model name), 3 optimization failure.

pub mod args;
pub mod bench;
pub mod config;
pub mod fit;
pub mod report;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub use args::{BenchArgs, Cli, Command, FitArgs, RunFlags};
pub use config::{load_config, parse_config, Overrides, Settings};
pub use report::{BenchSummaryRow, CandidateRow, FitReport, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Optimization(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    /// Classifies an error raised while fitting or ranking.
    pub fn from_run(e: vasst::Error) -> Self {
        match e {
            vasst::Error::NoValidStep | vasst::Error::NoValidCandidate => {
                CliError::Optimization(e.to_string())
            }
            vasst::Error::Config(_) | vasst::Error::EmptySplit { .. } | vasst::Error::DimensionMismatch { .. } => {
                CliError::Input(e.to_string())
            }
            other => CliError::Io(other.to_string()),
        }
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place. Nothing is left behind on failure.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("writing {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => fit::cmd_fit(&a).map(|_| ()),
        Command::Bench(a) => bench::cmd_bench(&a).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_map() {
        assert_eq!(CliError::from_run(vasst::Error::NoValidStep).exit_code(), 3);
        assert_eq!(CliError::from_run(vasst::Error::NoValidCandidate).exit_code(), 3);
        assert_eq!(CliError::from_run(vasst::Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::Io("x".into()).exit_code(), 1);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn atomic_write_into_missing_dir_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nope").join("r.json");
        assert_eq!(write_atomic(&p, b"x").unwrap_err().exit_code(), 1);
        assert!(!p.exists());
    }
}
