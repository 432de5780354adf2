//! File helpers: deterministic JSON/CSV writing, hashing, atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_string(value)?.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Minimal CSV builder; values are numeric or plain identifiers, so no
/// quoting is needed.
#[derive(Debug, Default, Clone)]
pub struct Csv {
    buf: String,
    width: usize,
}

impl Csv {
    pub fn with_header<S: AsRef<str>>(header: &[S]) -> Self {
        let mut csv = Csv {
            buf: String::new(),
            width: header.len(),
        };
        csv.push_raw(header.iter().map(|s| s.as_ref().to_string()));
        csv
    }

    fn push_raw(&mut self, cells: impl Iterator<Item = String>) {
        let line: Vec<String> = cells.collect();
        debug_assert!(self.width == 0 || line.len() == self.width);
        self.buf.push_str(&line.join(","));
        self.buf.push('\n');
    }

    pub fn row(&mut self, cells: &[String]) {
        self.push_raw(cells.iter().cloned());
    }

    pub fn num_row(&mut self, cells: &[f64]) {
        self.push_raw(cells.iter().map(|&x| fmt_f64(x)));
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.buf.as_bytes())
    }
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_roundtrips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0, 123456.789] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_layout() {
        let mut csv = Csv::with_header(&["a", "b"]);
        csv.num_row(&[1.0, 0.5]);
        assert_eq!(csv.as_str(), "a,b\n1.0,0.5\n");
    }
}
