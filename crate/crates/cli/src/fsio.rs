use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::Failure;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Sibling path used while an output is being written.
fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_failure(path, e)
    })
}

/// Builds a directory at a temporary sibling, then moves it to `path`.
/// An existing `path` is replaced only if it is empty or holds a file named
/// `marker`.
pub fn replace_dir_atomic(
    path: &Path,
    marker: &str,
    build: impl FnOnce(&Path) -> Result<(), Failure>,
) -> Result<(), Failure> {
    if path.exists() {
        let empty = fs::read_dir(path)
            .map_err(|e| io_failure(path, e))?
            .next()
            .is_none();
        if !empty && !path.join(marker).is_file() {
            return Err(Failure::Runtime(format!(
                "{} exists and is not a previous output; refusing to replace it",
                path.display()
            )));
        }
    }
    let tmp = temp_sibling(path);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| io_failure(&tmp, e))?;
    }
    let result = build(&tmp).and_then(|()| {
        if path.exists() {
            fs::remove_dir_all(path).map_err(|e| io_failure(path, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| io_failure(path, e))
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}
