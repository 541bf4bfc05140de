//! Atomic file writes shared by every artifact writer.

use std::fs;
use std::io;
use std::path::Path;

use crate::error::Result;

/// Writes `bytes` to `path` atomically: the data goes to a sibling temp file
/// first and is renamed into place, so a crashed or failed command never
/// leaves a partially written artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp_path = match dir {
        Some(d) => d.join(&tmp_name),
        None => tmp_name.into(),
    };
    fs::write(&tmp_path, bytes)?;
    match fs::rename(&tmp_path, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp_path);
            Err(e.into())
        }
    }
}
