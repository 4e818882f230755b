//! Checksummed little-endian binary files referenced from JSON manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Manifest entry of one binary file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobInfo {
    /// File name relative to the manifest directory.
    pub file: String,
    /// Element type: `f32`, `u16` or `u32`.
    pub dtype: String,
    /// Element count.
    pub len: usize,
    /// Hex SHA-256 of the file contents.
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub trait Element: Copy {
    const DTYPE: &'static str;
    const SIZE: usize;
    fn put(self, out: &mut Vec<u8>);
    fn get(b: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: &'static str = "f32";
    const SIZE: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(b: &[u8]) -> Self {
        f32::from_le_bytes([b[0], b[1], b[2], b[3]])
    }
}

impl Element for u32 {
    const DTYPE: &'static str = "u32";
    const SIZE: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(b: &[u8]) -> Self {
        u32::from_le_bytes([b[0], b[1], b[2], b[3]])
    }
}

impl Element for u16 {
    const DTYPE: &'static str = "u16";
    const SIZE: usize = 2;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(b: &[u8]) -> Self {
        u16::from_le_bytes([b[0], b[1]])
    }
}

pub fn encode<E: Element>(values: &[E]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * E::SIZE);
    values.iter().for_each(|v| v.put(&mut out));
    out
}

/// Writes `bytes` to `dir/file` and describes it.
pub fn write_bytes(dir: &Path, file: &str, dtype: &str, len: usize, bytes: &[u8]) -> Result<BlobInfo> {
    let path = dir.join(file);
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(BlobInfo {
        file: file.to_string(),
        dtype: dtype.to_string(),
        len,
        sha256: sha256_hex(bytes),
    })
}

pub fn write<E: Element>(dir: &Path, file: &str, values: &[E]) -> Result<BlobInfo> {
    write_bytes(dir, file, E::DTYPE, values.len(), &encode(values))
}

/// Reads a blob and verifies its checksum and size.
pub fn read_bytes(dir: &Path, info: &BlobInfo) -> Result<Vec<u8>> {
    if info.file.contains("..") || info.file.contains('/') || info.file.contains('\\') {
        return Err(Error::invariant(format!("blob `{}`", info.file), "file name must be local"));
    }
    let path = dir.join(&info.file);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if sha256_hex(&bytes) != info.sha256 {
        return Err(Error::Checksum {
            blob: info.file.clone(),
        });
    }
    Ok(bytes)
}

pub fn read<E: Element>(dir: &Path, info: &BlobInfo) -> Result<Vec<E>> {
    if info.dtype != E::DTYPE {
        return Err(Error::invariant(
            format!("blob `{}`", info.file),
            format!("dtype {} where {} was expected", info.dtype, E::DTYPE),
        ));
    }
    let bytes = read_bytes(dir, info)?;
    if bytes.len() != info.len * E::SIZE {
        return Err(Error::dimension(format!("blob `{}` bytes", info.file), info.len * E::SIZE, bytes.len()));
    }
    Ok(bytes.chunks_exact(E::SIZE).map(E::get).collect())
}

/// Parses the major component of a `major.minor.patch` version.
pub fn major_version(version: &str) -> Option<u64> {
    let mut parts = version.split('.');
    let major = parts.next()?.parse().ok()?;
    if parts.count() != 2 {
        return None;
    }
    Some(major)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let info = write(dir.path(), "a.f32", &[1.5f32, -2.0, f32::MIN_POSITIVE]).unwrap();
        assert_eq!(read::<f32>(dir.path(), &info).unwrap(), vec![1.5, -2.0, f32::MIN_POSITIVE]);
        assert!(read::<u32>(dir.path(), &info).is_err());
        std::fs::write(dir.path().join("a.f32"), [0u8; 12]).unwrap();
        let err = read::<f32>(dir.path(), &info).unwrap_err();
        assert!(matches!(&err, Error::Checksum { blob } if blob == "a.f32"), "{err}");
    }

    #[test]
    fn versions() {
        assert_eq!(major_version("1.2.3"), Some(1));
        assert_eq!(major_version("1.2"), None);
        assert_eq!(major_version("x.2.3"), None);
    }
}
