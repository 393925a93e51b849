//! Shared on-disk container for pipeline artifacts.
//!
//! Layout: 4-byte magic, u16 format version, u32 header length, JSON header,
//! then a stage-defined binary payload. All integers and floats are
//! little-endian. The JSON header always carries a `kind` string, and stages
//! embed their config hash and tool version there so artifacts from
//! different configurations never get mixed silently.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"HSAF";
pub const FORMAT_VERSION: u16 = 1;

/// FNV-1a 64-bit hash; used for config hashes and mask fingerprints.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub struct ArtifactWriter<W: Write> {
    out: W,
}

impl ArtifactWriter<BufWriter<File>> {
    /// Create the file and write magic + header; payload writes follow.
    pub fn create(path: &Path, kind: &str, mut header: Value) -> Result<Self> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        header["kind"] = Value::String(kind.to_string());
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Artifact(format!("header serialization: {e}")))?;
        out.write_all(&MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        out.write_all(&header_bytes)?;
        Ok(ArtifactWriter { out })
    }
}

impl<W: Write> ArtifactWriter<W> {
    pub fn write_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.out.write_all(bytes)?;
        Ok(())
    }

    pub fn write_u32s(&mut self, values: &[u32]) -> Result<()> {
        for v in values {
            self.out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_u16s(&mut self, values: &[u16]) -> Result<()> {
        for v in values {
            self.out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_f64s(&mut self, values: &[f64]) -> Result<()> {
        for v in values {
            self.out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub struct ArtifactReader<R: Read> {
    pub header: Value,
    input: R,
}

impl ArtifactReader<BufReader<File>> {
    /// Open an artifact and validate magic, version, and kind.
    pub fn open(path: &Path, expected_kind: &str) -> Result<Self> {
        let file = File::open(path)?;
        let mut input = BufReader::new(file);

        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Artifact(format!("{}: bad magic", path.display())));
        }
        let mut v = [0u8; 2];
        input.read_exact(&mut v)?;
        let version = u16::from_le_bytes(v);
        if version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "{}: unsupported format version {version}",
                path.display()
            )));
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let header_len = u32::from_le_bytes(len) as usize;
        let mut header_bytes = vec![0u8; header_len];
        input.read_exact(&mut header_bytes)?;
        let header: Value = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Artifact(format!("{}: header parse: {e}", path.display())))?;
        let kind = header["kind"].as_str().unwrap_or("");
        if kind != expected_kind {
            return Err(Error::Artifact(format!(
                "{}: expected kind {expected_kind:?}, found {kind:?}",
                path.display()
            )));
        }
        Ok(ArtifactReader { header, input })
    }
}

impl<R: Read> ArtifactReader<R> {
    pub fn read_u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let mut buf = vec![0u8; n * 4];
        self.input.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn read_u16s(&mut self, n: usize) -> Result<Vec<u16>> {
        let mut buf = vec![0u8; n * 2];
        self.input.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn read_f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        self.input.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn read_bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.input.read_exact(&mut buf)?;
        Ok(buf)
    }
}

/// Pull a usize field out of an artifact header.
pub fn header_usize(header: &Value, key: &str) -> Result<usize> {
    header[key]
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::Artifact(format!("header missing count field {key:?}")))
}

/// Pull a string-array field out of an artifact header.
pub fn header_strings(header: &Value, key: &str) -> Result<Vec<String>> {
    header[key]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|v| v.as_str().unwrap_or("").to_string())
                .collect()
        })
        .ok_or_else(|| Error::Artifact(format!("header missing string list {key:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let mut w = ArtifactWriter::create(&path, "test", json!({"n": 3})).unwrap();
        w.write_u32s(&[1, 2, 3]).unwrap();
        w.write_f64s(&[0.5, -0.5]).unwrap();
        w.finish().unwrap();

        let mut r = ArtifactReader::open(&path, "test").unwrap();
        assert_eq!(header_usize(&r.header, "n").unwrap(), 3);
        assert_eq!(r.read_u32s(3).unwrap(), vec![1, 2, 3]);
        assert_eq!(r.read_f64s(2).unwrap(), vec![0.5, -0.5]);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        ArtifactWriter::create(&path, "alpha", json!({}))
            .unwrap()
            .finish()
            .unwrap();
        assert!(ArtifactReader::open(&path, "beta").is_err());
    }

    #[test]
    fn fnv_known_values() {
        // Reference vectors for FNV-1a 64.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
