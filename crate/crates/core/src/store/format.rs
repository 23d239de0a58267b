//! On-disk layout of a patch database.
//!
//! * `vectors.ssvx`: little-endian; magic `SSVX`, `u32` version, `u32`
//!   dimension, `u64` row count, then `rows × dimension` `f32` values.
//! * `meta.jsonl`: one `{"kind":"patch",…}` object per row in row order,
//!   followed by one `{"kind":"image",…}` object per image.
//! * `overlaps.jsonl`: one `{"vector_id":…,"overlaps":[…]}` object per row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageId, ImageRecord, PatchBox, VectorId};

pub const MAGIC: &[u8; 4] = b"SSVX";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

pub const VECTORS_FILE: &str = "vectors.ssvx";
pub const META_FILE: &str = "meta.jsonl";
pub const OVERLAPS_FILE: &str = "overlaps.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub vector_id: VectorId,
    pub image_id: ImageId,
    pub level: u32,
    #[serde(rename = "box")]
    pub rect: PatchBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetaRecord {
    Patch(PatchMeta),
    Image(ImageRecord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapRecord {
    pub vector_id: VectorId,
    pub overlaps: Vec<VectorId>,
}

/// Row-major `f32` matrix as read from / written to a vectors file.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorMatrix {
    pub dim: usize,
    pub rows: usize,
    pub data: Vec<f32>,
}

impl VectorMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn write_vectors(path: &Path, dim: usize, data: &[f32]) -> Result<()> {
    let rows = if dim == 0 { 0 } else { data.len() / dim };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.extend_from_slice(&(dim as u32).to_le_bytes());
    header.extend_from_slice(&(rows as u64).to_le_bytes());
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(dim * 4 * 1024);
    for chunk in data.chunks(dim.max(1) * 1024) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_vectors(path: &Path) -> Result<VectorMatrix> {
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("row count overflows".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(bad(format!("expected {expected} payload bytes for {rows}x{dim}, found {}", body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(VectorMatrix { dim, rows, data })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Splits a metadata file into patch rows (in row order) and images.
pub fn read_meta(path: &Path) -> Result<(Vec<PatchMeta>, Vec<ImageRecord>)> {
    let mut patches = Vec::new();
    let mut images = Vec::new();
    for rec in read_jsonl::<MetaRecord>(path)? {
        match rec {
            MetaRecord::Patch(p) => {
                if !images.is_empty() {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        reason: format!("patch record {} follows image records", p.vector_id),
                    });
                }
                patches.push(p)
            }
            MetaRecord::Image(i) => images.push(i),
        }
    }
    Ok((patches, images))
}

pub fn write_meta(path: &Path, patches: &[PatchMeta], images: &[ImageRecord]) -> Result<()> {
    let recs = patches
        .iter()
        .cloned()
        .map(MetaRecord::Patch)
        .chain(images.iter().cloned().map(MetaRecord::Image));
    write_jsonl(path, recs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.ssvx");
        write_vectors(&p, 2, &[1.0, -0.5, 0.25, 2.0]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"SSVX");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..20], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 16);
        let m = read_vectors(&p).unwrap();
        assert_eq!((m.dim, m.rows), (2, 2));
        assert_eq!(m.row(1), &[0.25, 2.0]);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.ssvx");
        write_vectors(&p, 2, &[1.0, 0.0]).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_vectors(&p), Err(Error::Format { .. })));
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_vectors(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn meta_records_are_tagged() {
        let p = MetaRecord::Patch(PatchMeta {
            vector_id: 3,
            image_id: 1,
            level: 0,
            rect: PatchBox::new(0.0, 0.0, 224.0, 224.0).unwrap(),
        });
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"kind":"patch","vector_id":3,"image_id":1,"level":0,"box":[0.0,0.0,224.0,224.0]}"#);
        let i = MetaRecord::Image(ImageRecord::new(1, 640, 480, "a.jpg").unwrap());
        let s = serde_json::to_string(&i).unwrap();
        assert_eq!(s, r#"{"kind":"image","image_id":1,"w":640,"h":480,"uri":"a.jpg"}"#);
    }
}
