//! Feature file for auditing externally trained models.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "DPF1"  u32 k  u32 n_members  u32 n_nonmembers
//! then n_members + n_nonmembers rows, members first, each:
//!   k × f64 confidences, f64 loss, u8 correct (0/1), u32 true class
//! ```

use std::fs;
use std::path::Path;

use super::{AttackInput, FeatureRow, MiaError};

pub const FEATURE_MAGIC: &[u8; 4] = b"DPF1";

pub fn write_features(input: &AttackInput, path: impl AsRef<Path>) -> Result<(), MiaError> {
    let p = path.as_ref();
    let k = input.num_confidences();
    let mut b = Vec::with_capacity(16 + (input.members.len() + input.nonmembers.len()) * (8 * (k + 1) + 5));
    b.extend_from_slice(FEATURE_MAGIC);
    for v in [k, input.members.len(), input.nonmembers.len()] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for r in input.members.iter().chain(&input.nonmembers) {
        for c in &r.confidences {
            b.extend_from_slice(&c.to_le_bytes());
        }
        b.extend_from_slice(&r.loss.to_le_bytes());
        b.push(u8::from(r.correct));
        b.extend_from_slice(&(r.class as u32).to_le_bytes());
    }
    fs::write(p, b).map_err(|source| MiaError::Io { path: p.display().to_string(), source })
}

pub fn read_features(path: impl AsRef<Path>) -> Result<AttackInput, MiaError> {
    let p = path.as_ref();
    let name = p.display().to_string();
    let b = fs::read(p).map_err(|source| MiaError::Io { path: name.clone(), source })?;
    let bad = |reason: String| MiaError::Format { path: name.clone(), reason };
    if b.len() < 16 {
        return Err(bad(format!("{} bytes is shorter than the 16-byte header", b.len())));
    }
    if &b[..4] != FEATURE_MAGIC {
        return Err(bad(format!("bad magic {:?}", &b[..4])));
    }
    let u32_at = |at: usize| u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (k, n1, n0) = (u32_at(4), u32_at(8), u32_at(12));
    if k == 0 {
        return Err(bad("zero confidences per row".into()));
    }
    let row_len = 8 * (k + 1) + 5;
    let need = 16 + (n1 + n0) * row_len;
    if b.len() != need {
        return Err(bad(format!("expected {need} bytes for {} rows of {k} confidences, found {}", n1 + n0, b.len())));
    }
    let f64_at = |at: usize| f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"));
    let mut rows = Vec::with_capacity(n1 + n0);
    for r in 0..n1 + n0 {
        let at = 16 + r * row_len;
        let conf = (0..k).map(|j| f64_at(at + 8 * j)).collect();
        let loss = f64_at(at + 8 * k);
        let correct = match b[at + 8 * (k + 1)] {
            0 => false,
            1 => true,
            v => return Err(bad(format!("row {r}: correct flag {v} is not 0/1"))),
        };
        let class = u32_at(at + 8 * (k + 1) + 1);
        rows.push(FeatureRow::new(conf, loss, correct, class).map_err(|e| bad(format!("row {r}: {e}")))?);
    }
    let nonmembers = rows.split_off(n1);
    AttackInput::new(rows, nonmembers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let m = vec![FeatureRow::new(vec![0.9, 0.1], 0.1, true, 1).unwrap(); 3];
        let n = vec![FeatureRow::new(vec![0.4, 0.6], 0.9, false, 0).unwrap(); 2];
        let input = AttackInput::new(m, n).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.dpf");
        write_features(&input, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..16], b"DPF1\x02\0\0\0\x03\0\0\0\x02\0\0\0");
        assert_eq!(bytes.len(), 16 + 5 * (8 * 3 + 5));
        assert_eq!(read_features(&p).unwrap(), input);
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_features(&p), Err(MiaError::Format { .. })));
    }
}
