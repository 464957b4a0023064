//! Per-pixel class maps and their DTXS container.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::formats::{ByteReader, ByteWriter, FORMAT_VERSION};

pub const SEGMAP_MAGIC: &[u8; 4] = b"DTXS";
pub const DEFAULT_IGNORE: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
    class_names: Vec<String>,
    ignore_index: u16,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>, class_names: Vec<String>) -> Result<Self> {
        Self::with_ignore(height, width, labels, class_names, DEFAULT_IGNORE)
    }

    pub fn with_ignore(
        height: usize,
        width: usize,
        labels: Vec<u16>,
        class_names: Vec<String>,
        ignore_index: u16,
    ) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::DimMismatch { expected: height * width, got: labels.len() });
        }
        if (ignore_index as usize) < class_names.len() {
            return Err(Error::invalid("ignore index collides with a class index"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != ignore_index && l as usize >= class_names.len()) {
            return Err(Error::invalid(format!("label {bad} out of range for {} classes", class_names.len())));
        }
        Ok(Self { height, width, labels, class_names, ignore_index })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn ignore_index(&self) -> u16 {
        self.ignore_index
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    /// Same labels with a different class list (e.g. renamed classes).
    pub fn with_class_names(&self, names: Vec<String>) -> Result<Self> {
        Self::with_ignore(self.height, self.width, self.labels.clone(), names, self.ignore_index)
    }

    /// Distinct non-ignored labels present.
    pub fn present_labels(&self) -> Vec<u16> {
        let mut seen = vec![false; self.class_names.len()];
        for &l in &self.labels {
            if l != self.ignore_index {
                seen[l as usize] = true;
            }
        }
        (0..seen.len() as u16).filter(|&l| seen[l as usize]).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    class_names: Vec<String>,
    ignore_index: u16,
}

pub fn encode_segmap(map: &SegmentationMap) -> Vec<u8> {
    let mut w = ByteWriter::new(SEGMAP_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(map.height as u32);
    w.u32(map.width as u32);
    for &l in &map.labels {
        w.u16(l);
    }
    w.finish()
}

/// Decodes the label payload; class names come from the sidecar.
pub fn decode_segmap_labels(buf: &[u8]) -> Result<(usize, usize, Vec<u16>), FormatError> {
    let mut r = ByteReader::open(buf, SEGMAP_MAGIC)?;
    r.version("DTXS")?;
    let h = r.u32("DTXS header")? as usize;
    let w = r.u32("DTXS header")? as usize;
    let mut labels = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        labels.push(r.u16("DTXS labels")?);
    }
    r.expect_end("DTXS")?;
    Ok((h, w, labels))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `path` and its `path.json` sidecar with the class names.
pub fn write_segmap(path: impl AsRef<Path>, map: &SegmentationMap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_segmap(map))?;
    let side = Sidecar { class_names: map.class_names.clone(), ignore_index: map.ignore_index };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&side)?)?;
    Ok(())
}

pub fn read_segmap(path: impl AsRef<Path>) -> Result<SegmentationMap> {
    let path = path.as_ref();
    let (h, w, labels) = decode_segmap_labels(&fs::read(path)?)?;
    let side: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    SegmentationMap::with_ignore(h, w, labels, side.class_names, side.ignore_index)
        .map_err(|e| FormatError::Malformed { what: "DTXS", detail: e.to_string() }.into())
}

const RENDER_PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [128, 128, 128],
];

/// Binary PPM with a fixed 16 colour palette; ignored pixels are black.
pub fn render_ppm(map: &SegmentationMap) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", map.width, map.height).into_bytes();
    for &l in &map.labels {
        if l == map.ignore_index {
            out.extend_from_slice(&[0, 0, 0]);
        } else {
            out.extend_from_slice(&RENDER_PALETTE[l as usize % 16]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn validation() {
        assert!(SegmentationMap::new(2, 2, vec![0, 1, 1, DEFAULT_IGNORE], names(2)).is_ok());
        assert!(SegmentationMap::new(2, 2, vec![0, 2, 1, 0], names(2)).is_err());
        assert!(SegmentationMap::new(2, 2, vec![0, 1, 1], names(2)).is_err());
    }

    #[test]
    fn roundtrip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dtxs");
        let m = SegmentationMap::new(2, 3, vec![0, 1, 2, 2, 1, DEFAULT_IGNORE], names(3)).unwrap();
        write_segmap(&p, &m).unwrap();
        assert_eq!(read_segmap(&p).unwrap(), m);
        assert_eq!(m.present_labels(), vec![0, 1, 2]);
        let ppm = render_ppm(&m);
        assert!(ppm.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(ppm.len(), 11 + 18);
    }
}
