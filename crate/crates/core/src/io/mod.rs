//! File formats and run configuration.
//!
//! Spectrum files are whitespace-delimited text with a `#` header; fit
//! results and run configurations are TOML. All writes go through
//! [`write_atomic`].

mod config;
mod result_file;
mod spectrum_file;

pub use config::{
    CheckBlock, FitBlock, GridBlock, InitialBlock, IoBlock, ModelBlock, MomentsMode, RunConfig, SimulateBlock, Stage,
    ThermalModeName, WeightingName, WindowBlock,
};
pub use result_file::{read_result, write_result, FitSummary, ResultFile};
pub use spectrum_file::{format_spectrum, parse_spectrum, read_spectrum, write_spectrum, SpectrumMeta, COLUMNS};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(path, e))?;
    tmp.write_all(contents).map_err(|e| io_error(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn atomic_write_into_missing_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_atomic(&dir.path().join("nope/x.txt"), b"").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
