//! Little-endian binary containers.
//!
//! All three containers share a layout: an ASCII magic, a fixed header, a
//! JSON metadata block prefixed by its `u64` byte length, then raw
//! little-endian arrays.

pub mod checkpoint;
pub mod dataset;
pub mod trace;

use std::io::{self, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

/// Upper bound on a metadata block, to fail fast on corrupt length prefixes.
const MAX_METADATA: u64 = 1 << 30;

pub(crate) struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u8(&mut self, v: u8) -> io::Result<()> {
        self.bytes(&[v])
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, v: &[f64]) -> io::Result<()> {
        v.iter().try_for_each(|x| self.bytes(&x.to_le_bytes()))
    }

    pub fn f32s(&mut self, v: &[f32]) -> io::Result<()> {
        v.iter().try_for_each(|x| self.bytes(&x.to_le_bytes()))
    }

    /// Stores values as `f32`.
    pub fn f64_as_f32(&mut self, v: &[f64]) -> io::Result<()> {
        v.iter().try_for_each(|x| self.bytes(&(*x as f32).to_le_bytes()))
    }

    pub fn json<T: Serialize>(&mut self, value: &T) -> io::Result<()> {
        let text = serde_json::to_vec(value).map_err(io::Error::other)?;
        self.u64(text.len() as u64)?;
        self.bytes(&text)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub(crate) struct Reader<'p, R> {
    inner: R,
    path: &'p Path,
}

impl<'p, R: Read> Reader<'p, R> {
    pub fn new(inner: R, path: &'p Path) -> Self {
        Self { inner, path }
    }

    pub fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::format(self.path, reason)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => self.corrupt("truncated file"),
            _ => Error::io(self.path, e),
        })
    }

    pub fn magic(&mut self, expected: &[u8]) -> Result<()> {
        let mut buf = vec![0u8; expected.len()];
        self.fill(&mut buf)?;
        if buf != expected {
            return Err(self.corrupt(format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(&buf)
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        self.fill(&mut buf)?;
        Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut buf = vec![0u8; n * 4];
        self.fill(&mut buf)?;
        Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn json<T: DeserializeOwned>(&mut self) -> Result<T> {
        let len = self.u64()?;
        if len > MAX_METADATA {
            return Err(self.corrupt(format!("metadata block of {len} bytes is implausible")));
        }
        let mut buf = vec![0u8; len as usize];
        self.fill(&mut buf)?;
        serde_json::from_slice(&buf).map_err(|e| self.corrupt(format!("metadata: {e}")))
    }

    /// Errors unless the stream is exhausted.
    pub fn end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.corrupt("trailing bytes after the last block")),
            Err(e) => Err(Error::io(self.path, e)),
        }
    }
}

pub(crate) fn create(path: &Path) -> Result<io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(io::BufWriter::new(file))
}

/// Writes a container through `write`, creating parent directories.
pub(crate) fn save_with<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(io::BufWriter<std::fs::File>) -> io::Result<io::BufWriter<std::fs::File>>,
{
    let w = create(path)?;
    write(w).map(drop).map_err(|e| Error::io(path, e))
}

pub(crate) fn load_with<T, F>(path: &Path, read: F) -> Result<T>
where
    F: FnOnce(io::BufReader<std::fs::File>, &Path) -> Result<T>,
{
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read(io::BufReader::new(file), path)
}
