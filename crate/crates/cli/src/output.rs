//! Atomic output: everything is written to a temporary sibling and renamed
//! into place, so an interrupted run never leaves a partial artifact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

fn parent_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent_of(path);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    clir::io::write_jsonl(&mut buf, records)?;
    write_bytes(path, &buf)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    write_bytes(path, &buf)
}

/// Build a directory with `fill` in a temporary sibling, then swap it in.
pub fn write_dir(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let dir = parent_of(path);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let staging = tempfile::Builder::new().prefix(".staging").tempdir_in(&dir)?;
    fill(staging.path())?;
    let staged = staging.keep();
    if path.exists() {
        let old = tempfile::Builder::new().prefix(".replaced").tempdir_in(&dir)?.keep();
        fs::rename(path, old.join("previous")).with_context(|| format!("moving aside {}", path.display()))?;
        fs::rename(&staged, path).with_context(|| format!("writing {}", path.display()))?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(&staged, path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
