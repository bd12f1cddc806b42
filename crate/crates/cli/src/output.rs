//! Output files are staged next to their destination and only moved into
//! place once every output of a command has been produced, so a failing
//! command leaves nothing behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

#[derive(Default)]
pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl Staged {
    pub fn add(&mut self, path: &Path, bytes: &[u8]) -> CliResult {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        tmp.write_all(bytes)
            .and_then(|_| tmp.flush())
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.push((tmp, path.to_path_buf()));
        Ok(())
    }

    /// Moves every staged file into place. On failure, files already
    /// committed by this call are removed again.
    pub fn commit(self) -> CliResult {
        let mut done: Vec<PathBuf> = Vec::new();
        for (tmp, dest) in self.files {
            if let Err(e) = tmp.persist(&dest) {
                for p in &done {
                    let _ = std::fs::remove_file(p);
                }
                return Err(CliError::Io(format!("{}: {}", dest.display(), e.error)));
            }
            done.push(dest);
        }
        Ok(())
    }
}
