//! IDX and raw tensor file formats.
//!
//! IDX: big-endian `u32` magic (`0x00000803` images, `0x00000801` labels),
//! big-endian `u32` dimension sizes, then unsigned bytes. Files ending in
//! `.gz` (or starting with the gzip magic) are decompressed transparently.
//!
//! Raw: ASCII `DPA1`, then little-endian `u32` N, H, W, C, then `N·H·W·C`
//! pixel bytes (row-major, channels last), then N label bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{DataError, LabeledDataset};
use crate::tensor::Tensor;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
pub const RAW_MAGIC: &[u8; 4] = b"DPA1";

fn read_bytes(path: &Path) -> Result<Vec<u8>, DataError> {
    let io = |source| DataError::Io { path: path.display().to_string(), source };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let io = |source| DataError::Io { path: path.display().to_string(), source };
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(io)?;
        fs::write(path, enc.finish().map_err(io)?).map_err(io)
    } else {
        fs::write(path, bytes).map_err(io)
    }
}

fn be_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::Truncated { path: path.display().to_string(), needed: at + 4, found: buf.len() })
}

fn le_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    buf.get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::Truncated { path: path.display().to_string(), needed: at + 4, found: buf.len() })
}

fn check_len(buf: &[u8], needed: usize, path: &Path) -> Result<(), DataError> {
    if buf.len() < needed {
        return Err(DataError::Truncated { path: path.display().to_string(), needed, found: buf.len() });
    }
    Ok(())
}

fn check_magic(found: u32, expected: u32, path: &Path) -> Result<(), DataError> {
    if found != expected {
        return Err(DataError::BadMagic { path: path.display().to_string(), found, expected });
    }
    Ok(())
}

fn dataset_from_bytes(n: usize, shape: [usize; 3], pixels: &[u8], labels: &[u8]) -> Result<LabeledDataset, DataError> {
    let k = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    let images = Tensor::new(vec![n, shape[0], shape[1], shape[2]], pixels.iter().map(|&b| b as f64).collect())
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    LabeledDataset::new(images, labels.iter().map(|&l| l as usize).collect(), LabeledDataset::numbered_classes(k))
}

/// Load an IDX image file and its IDX label file. Pixels keep their byte
/// values (0–255); the class count is `max(label) + 1`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset, DataError> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = read_bytes(ip)?;
    let lb = read_bytes(lp)?;
    check_magic(be_u32(&ib, 0, ip)?, IDX_IMAGES, ip)?;
    check_magic(be_u32(&lb, 0, lp)?, IDX_LABELS, lp)?;
    let n = be_u32(&ib, 4, ip)? as usize;
    let rows = be_u32(&ib, 8, ip)? as usize;
    let cols = be_u32(&ib, 12, ip)? as usize;
    let nl = be_u32(&lb, 4, lp)? as usize;
    if n != nl {
        return Err(DataError::CountMismatch { images: n, labels: nl });
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(DataError::Invalid(format!("empty IDX payload ({n} x {rows} x {cols})")));
    }
    check_len(&ib, 16 + n * rows * cols, ip)?;
    check_len(&lb, 8 + n, lp)?;
    dataset_from_bytes(n, [rows, cols, 1], &ib[16..16 + n * rows * cols], &lb[8..8 + n])
}

fn pixel_bytes(ds: &LabeledDataset) -> Result<Vec<u8>, DataError> {
    ds.images()
        .data()
        .iter()
        .map(
            |&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(DataError::PixelRange(v))
                }
            },
        )
        .collect()
}

fn label_bytes(ds: &LabeledDataset) -> Result<Vec<u8>, DataError> {
    ds.labels()
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| DataError::LabelOutOfRange { label: l, classes: 256 }))
        .collect()
}

/// Write a single-channel dataset of byte-valued pixels as an IDX pair.
pub fn write_idx(ds: &LabeledDataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<(), DataError> {
    let &[h, w, c] = ds.image_shape() else { unreachable!("dataset images are rank 4") };
    if c != 1 {
        return Err(DataError::Channels { expected: 1, found: c });
    }
    let mut ib = Vec::with_capacity(16 + ds.images().len());
    for v in [IDX_IMAGES, ds.len() as u32, h as u32, w as u32] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    ib.extend(pixel_bytes(ds)?);
    let mut lb = Vec::with_capacity(8 + ds.len());
    for v in [IDX_LABELS, ds.len() as u32] {
        lb.extend_from_slice(&v.to_be_bytes());
    }
    lb.extend(label_bytes(ds)?);
    write_bytes(images.as_ref(), &ib)?;
    write_bytes(labels.as_ref(), &lb)
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<LabeledDataset, DataError> {
    let p = path.as_ref();
    let b = read_bytes(p)?;
    check_len(&b, 20, p)?;
    if &b[0..4] != RAW_MAGIC {
        return Err(DataError::BadMagic {
            path: p.display().to_string(),
            found: u32::from_be_bytes(b[0..4].try_into().expect("4 bytes")),
            expected: u32::from_be_bytes(*RAW_MAGIC),
        });
    }
    let dims: Vec<usize> = (0..4).map(|i| le_u32(&b, 4 + 4 * i, p).map(|v| v as usize)).collect::<Result<_, _>>()?;
    let (n, h, w, c) = (dims[0], dims[1], dims[2], dims[3]);
    if n == 0 || h == 0 || w == 0 || c == 0 {
        return Err(DataError::Invalid(format!("empty raw payload ({n} x {h} x {w} x {c})")));
    }
    let px = n * h * w * c;
    check_len(&b, 20 + px + n, p)?;
    dataset_from_bytes(n, [h, w, c], &b[20..20 + px], &b[20 + px..20 + px + n])
}

pub fn write_raw(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let &[h, w, c] = ds.image_shape() else { unreachable!("dataset images are rank 4") };
    let mut b = Vec::with_capacity(20 + ds.images().len() + ds.len());
    b.extend_from_slice(RAW_MAGIC);
    for v in [ds.len(), h, w, c] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    b.extend(pixel_bytes(ds)?);
    b.extend(label_bytes(ds)?);
    write_bytes(path.as_ref(), &b)
}
