//! Little-endian binary containers (DTXE, DTXF) and the line-oriented text
//! formats (captions JSONL, selection lists, pair manifests).
//!
//! Every binary file starts with a four byte magic followed by a `u32`
//! version. Writers serialize into memory first so a failed write never
//! leaves a partially valid header behind.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::records::FeatureGrid;
use crate::tensor::{Matrix, Vector};

pub const EMBEDDINGS_MAGIC: &[u8; 4] = b"DTXE";
pub const FEATURES_MAGIC: &[u8; 4] = b"DTXF";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::with_capacity(1024);
        buf.extend_from_slice(magic);
        Self { buf }
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Checks the magic and positions the cursor just after it.
    pub fn open(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self, FormatError> {
        if buf.len() < 4 || &buf[..4] != magic {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: buf[..buf.len().min(4)].to_vec(),
            });
        }
        Ok(Self { buf, pos: 4 })
    }

    pub fn version(&mut self, format: &'static str) -> Result<u32, FormatError> {
        let v = self.u32(format)?;
        if v != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion { format, version: v });
        }
        Ok(v)
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated(what))?;
        if end > self.buf.len() {
            return Err(FormatError::Truncated(what));
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or(FormatError::Truncated(what))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn str(&mut self, what: &'static str) -> Result<String, FormatError> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::InvalidUtf8(what))
    }

    pub fn expect_end(&self, what: &'static str) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::Malformed {
                what,
                detail: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub(crate) fn non_finite(what: &'static str) -> FormatError {
    FormatError::Malformed { what, detail: "non-finite value".into() }
}

// ---------------------------------------------------------------------------
// DTXE

pub fn encode_embeddings(ids: &[String], matrix: &Matrix) -> Result<Vec<u8>> {
    if ids.len() != matrix.rows() {
        return Err(Error::DimMismatch { expected: matrix.rows(), got: ids.len() });
    }
    let mut w = ByteWriter::new(EMBEDDINGS_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u64(matrix.rows() as u64);
    w.u32(matrix.cols() as u32);
    w.f32s(matrix.as_slice());
    for id in ids {
        w.str(id);
    }
    Ok(w.finish())
}

pub fn decode_embeddings(buf: &[u8]) -> Result<(Vec<String>, Matrix), FormatError> {
    let mut r = ByteReader::open(buf, EMBEDDINGS_MAGIC)?;
    r.version("DTXE")?;
    let rows = r.u64("DTXE header")? as usize;
    let dim = r.u32("DTXE header")? as usize;
    if dim == 0 {
        return Err(FormatError::Malformed { what: "DTXE header", detail: "zero dim".into() });
    }
    let data = r.f32s(rows.checked_mul(dim).ok_or(FormatError::Truncated("DTXE payload"))?, "DTXE payload")?;
    let mut ids = Vec::with_capacity(rows);
    for _ in 0..rows {
        ids.push(r.str("DTXE ids")?);
    }
    r.expect_end("DTXE")?;
    let m = Matrix::new(rows, dim, data).map_err(|_| non_finite("DTXE payload"))?;
    Ok((ids, m))
}

pub fn write_embeddings(path: impl AsRef<Path>, ids: &[String], matrix: &Matrix) -> Result<()> {
    fs::write(path, encode_embeddings(ids, matrix)?)?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(Vec<String>, Matrix)> {
    Ok(decode_embeddings(&fs::read(path)?)?)
}

/// Reads a DTXE file and checks its width.
pub fn read_embeddings_with_dim(path: impl AsRef<Path>, dim: usize) -> Result<(Vec<String>, Matrix)> {
    let (ids, m) = read_embeddings(path)?;
    if m.cols() != dim {
        return Err(FormatError::DimMismatch { expected: dim, found: m.cols() }.into());
    }
    Ok((ids, m))
}

// ---------------------------------------------------------------------------
// DTXF

pub fn encode_feature_grid(grid: &FeatureGrid) -> Vec<u8> {
    let mut w = ByteWriter::new(FEATURES_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(grid.grid_h() as u32);
    w.u32(grid.grid_w() as u32);
    w.u32(grid.dim() as u32);
    w.f32s(grid.cls().as_slice());
    w.f32s(grid.patches().as_slice());
    w.finish()
}

pub fn decode_feature_grid(buf: &[u8]) -> Result<FeatureGrid, FormatError> {
    let mut r = ByteReader::open(buf, FEATURES_MAGIC)?;
    r.version("DTXF")?;
    let gh = r.u32("DTXF header")? as usize;
    let gw = r.u32("DTXF header")? as usize;
    let dim = r.u32("DTXF header")? as usize;
    if gh == 0 || gw == 0 || dim == 0 {
        return Err(FormatError::Malformed { what: "DTXF header", detail: "zero extent".into() });
    }
    let cls = r.f32s(dim, "DTXF cls")?;
    let patches = r.f32s(gh * gw * dim, "DTXF patches")?;
    r.expect_end("DTXF")?;
    let cls = Vector::new(cls).map_err(|_| non_finite("DTXF cls"))?;
    let patches = Matrix::new(gh * gw, dim, patches).map_err(|_| non_finite("DTXF patches"))?;
    FeatureGrid::new(cls, patches, gh, gw)
        .map_err(|e| FormatError::Malformed { what: "DTXF", detail: e.to_string() })
}

pub fn write_feature_grid(path: impl AsRef<Path>, grid: &FeatureGrid) -> Result<()> {
    fs::write(path, encode_feature_grid(grid))?;
    Ok(())
}

pub fn read_feature_grid(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    Ok(decode_feature_grid(&fs::read(path)?)?)
}

// ---------------------------------------------------------------------------
// Captions JSONL

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionLine {
    pub id: String,
    pub caption: String,
}

/// Parsed caption file. Lines that are not valid UTF-8 are skipped and counted.
#[derive(Debug, Clone, Default)]
pub struct CaptionFile {
    pub lines: Vec<CaptionLine>,
    pub dropped_invalid_utf8: usize,
}

pub fn parse_captions(buf: &[u8]) -> Result<CaptionFile> {
    let mut out = CaptionFile::default();
    for (lineno, raw) in buf.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        if raw.iter().all(|b| b.is_ascii_whitespace()) {
            continue;
        }
        let Ok(text) = std::str::from_utf8(raw) else {
            out.dropped_invalid_utf8 += 1;
            continue;
        };
        let line: CaptionLine = serde_json::from_str(text).map_err(|e| FormatError::Malformed {
            what: "captions jsonl",
            detail: format!("line {}: {e}", lineno + 1),
        })?;
        out.lines.push(line);
    }
    Ok(out)
}

pub fn read_captions(path: impl AsRef<Path>) -> Result<CaptionFile> {
    parse_captions(&fs::read(path)?)
}

pub fn write_captions(path: impl AsRef<Path>, lines: &[CaptionLine]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Selection lists

pub fn encode_selection<'a>(ids: impl IntoIterator<Item = &'a String>) -> Vec<u8> {
    let mut out = Vec::new();
    for id in ids {
        out.extend_from_slice(id.as_bytes());
        out.push(b'\n');
    }
    out
}

pub fn decode_selection(buf: &[u8]) -> Result<BTreeSet<String>, FormatError> {
    let text = std::str::from_utf8(buf).map_err(|_| FormatError::InvalidUtf8("selection list"))?;
    Ok(text.split('\n').filter(|l| !l.is_empty()).map(str::to_owned).collect())
}

pub fn write_selection<'a>(path: impl AsRef<Path>, ids: impl IntoIterator<Item = &'a String>) -> Result<()> {
    fs::write(path, encode_selection(ids))?;
    Ok(())
}

pub fn read_selection(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    Ok(decode_selection(&fs::read(path)?)?)
}

// ---------------------------------------------------------------------------
// Pair manifests: JSONL {"id", "caption", "features"} with feature paths
// relative to the manifest's directory.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub id: String,
    pub caption: String,
    pub features: String,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<(ManifestLine, PathBuf)>> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(line).map_err(|e| FormatError::Malformed {
            what: "pair manifest",
            detail: format!("line {}: {e}", i + 1),
        })?;
        let resolved = base.join(&m.features);
        out.push((m, resolved));
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, lines: &[ManifestLine]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a newline-delimited list of non-empty, trimmed strings.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect())
}
