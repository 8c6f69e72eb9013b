//! Output-file plumbing: provenance header rows and atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance stamped as the first line of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub config_digest: String,
    pub seed: u64,
}

impl ArtifactHeader {
    pub fn new(config_digest: impl Into<String>, seed: u64) -> Self {
        ArtifactHeader { config_digest: config_digest.into(), seed }
    }

    pub fn line(&self) -> String {
        format!("# vecsim {} config={} seed={}\n", ARTIFACT_VERSION, self.config_digest, self.seed)
    }
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8], force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::WouldOverwrite(path.to_path_buf()));
    }
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes rows to CSV text preceded by the header comment.
pub fn csv_bytes<R: Serialize>(path: &Path, header: &ArtifactHeader, rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut out = header.line().into_bytes();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut out);
        for row in rows {
            w.serialize(row).map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(out)
}

pub fn write_csv<R: Serialize>(
    path: &Path,
    header: &ArtifactHeader,
    rows: impl IntoIterator<Item = R>,
    force: bool,
) -> Result<()> {
    let bytes = csv_bytes(path, header, rows)?;
    write_atomic(path, &bytes, force)
}

pub fn read_csv<R: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    rdr.deserialize()
        .map(|r| r.map_err(|source| Error::Csv { path: path.to_path_buf(), source }))
        .collect()
}
