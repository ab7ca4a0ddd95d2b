//! Versioned binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "RDNERMDL"
//! version  u32
//! count    u32      number of sections
//! section  tag [u8; 4], len u64, payload[len]   (repeated)
//! ```
//!
//! Payload encodings: strings are `u64 len + UTF-8`, string lists are
//! `u64 count` followed by strings, matrices are `u64 rows, u64 cols` followed
//! by row-major `f64` values.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"RDNERMDL";
pub const VERSION: u32 = 1;

pub type Tag = [u8; 4];

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("truncated container")]
    Truncated,
    #[error("missing section `{0}`")]
    MissingSection(String),
    #[error("section `{0}` is malformed")]
    Malformed(String),
    #[error("unexpected model kind `{found}`, expected `{expected}`")]
    Kind { found: String, expected: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn tag_name(tag: &Tag) -> String {
    String::from_utf8_lossy(tag).into_owned()
}

#[derive(Debug, Default)]
pub struct ContainerWriter {
    sections: Vec<(Tag, Vec<u8>)>,
}

impl ContainerWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, tag: Tag, payload: Vec<u8>) -> &mut Self {
        self.sections.push((tag, payload));
        self
    }

    pub fn string(&mut self, tag: Tag, s: &str) -> &mut Self {
        let mut buf = Vec::new();
        put_str(&mut buf, s);
        self.bytes(tag, buf)
    }

    pub fn strings<S: AsRef<str>>(&mut self, tag: Tag, items: &[S]) -> &mut Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(items.len() as u64).to_le_bytes());
        for s in items {
            put_str(&mut buf, s.as_ref());
        }
        self.bytes(tag, buf)
    }

    pub fn matrix(&mut self, tag: Tag, m: &Array2<f64>) -> &mut Self {
        let mut buf = Vec::with_capacity(16 + 8 * m.len());
        buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.bytes(tag, buf)
    }

    pub fn vector(&mut self, tag: Tag, v: &Array1<f64>) -> &mut Self {
        let m = v.view().insert_axis(ndarray::Axis(0)).to_owned();
        self.matrix(tag, &m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (tag, payload) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    /// Write via a temp file in the target directory and an atomic rename,
    /// so a failed write never leaves a partial model behind.
    pub fn write_atomic(&self, path: &Path) -> Result<(), ContainerError> {
        write_atomic(path, &self.to_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ContainerError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

#[derive(Debug)]
pub struct ContainerReader {
    sections: BTreeMap<Tag, Vec<u8>>,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.data.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn str(&mut self) -> Option<&'a str> {
        let n = usize::try_from(self.u64()?).ok()?;
        std::str::from_utf8(self.take(n)?).ok()
    }
}

impl ContainerReader {
    pub fn from_bytes(data: &[u8]) -> Result<Self, ContainerError> {
        let mut c = Cursor { data, pos: 0 };
        if c.take(8) != Some(MAGIC.as_slice()) {
            return Err(ContainerError::BadMagic);
        }
        let version = c.u32().ok_or(ContainerError::Truncated)?;
        if version != VERSION {
            return Err(ContainerError::Version(version));
        }
        let count = c.u32().ok_or(ContainerError::Truncated)?;
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            let tag: Tag = c
                .take(4)
                .ok_or(ContainerError::Truncated)?
                .try_into()
                .expect("4 bytes");
            let len = c.u64().ok_or(ContainerError::Truncated)? as usize;
            let payload = c.take(len).ok_or(ContainerError::Truncated)?;
            sections.insert(tag, payload.to_vec());
        }
        Ok(ContainerReader { sections })
    }

    pub fn read(path: &Path) -> Result<Self, ContainerError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn has(&self, tag: Tag) -> bool {
        self.sections.contains_key(&tag)
    }

    pub fn bytes(&self, tag: Tag) -> Result<&[u8], ContainerError> {
        self.sections
            .get(&tag)
            .map(Vec::as_slice)
            .ok_or_else(|| ContainerError::MissingSection(tag_name(&tag)))
    }

    pub fn string(&self, tag: Tag) -> Result<String, ContainerError> {
        let mut c = Cursor {
            data: self.bytes(tag)?,
            pos: 0,
        };
        c.str()
            .map(str::to_string)
            .ok_or_else(|| ContainerError::Malformed(tag_name(&tag)))
    }

    pub fn strings(&self, tag: Tag) -> Result<Vec<String>, ContainerError> {
        let mut c = Cursor {
            data: self.bytes(tag)?,
            pos: 0,
        };
        let malformed = || ContainerError::Malformed(tag_name(&tag));
        let n = c.u64().ok_or_else(malformed)?;
        (0..n)
            .map(|_| c.str().map(str::to_string).ok_or_else(malformed))
            .collect()
    }

    pub fn matrix(&self, tag: Tag) -> Result<Array2<f64>, ContainerError> {
        let mut c = Cursor {
            data: self.bytes(tag)?,
            pos: 0,
        };
        let malformed = || ContainerError::Malformed(tag_name(&tag));
        let rows = c.u64().ok_or_else(malformed)? as usize;
        let cols = c.u64().ok_or_else(malformed)? as usize;
        let n = rows.checked_mul(cols).ok_or_else(malformed)?;
        if c.data.len() - c.pos != n * 8 {
            return Err(malformed());
        }
        let values = (0..n).map(|_| c.f64().ok_or_else(malformed)).collect::<Result<Vec<_>, _>>()?;
        Array2::from_shape_vec((rows, cols), values).map_err(|_| malformed())
    }

    pub fn vector(&self, tag: Tag) -> Result<Array1<f64>, ContainerError> {
        let m = self.matrix(tag)?;
        if m.nrows() != 1 {
            return Err(ContainerError::Malformed(tag_name(&tag)));
        }
        Ok(m.row(0).to_owned())
    }

    /// Check the `KIND` section.
    pub fn expect_kind(&self, expected: &str) -> Result<(), ContainerError> {
        let found = self.string(*b"KIND")?;
        if found != expected {
            return Err(ContainerError::Kind {
                found,
                expected: expected.to_string(),
            });
        }
        Ok(())
    }
}

/// Model kind stored in a container file.
pub fn peek_kind(path: &Path) -> Result<String, ContainerError> {
    ContainerReader::read(path)?.string(*b"KIND")
}
