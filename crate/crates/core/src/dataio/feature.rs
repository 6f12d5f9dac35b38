//! `MMCF` matrix files.
//!
//! | bytes | content                               |
//! |-------|---------------------------------------|
//! | 0–3   | ASCII `MMCF`                          |
//! | 4–5   | version, little-endian `u16` (= 1)    |
//! | 6–9   | rows, little-endian `u32`             |
//! | 10–13 | cols, little-endian `u32`             |
//! | 14–   | `rows·cols` little-endian `f32`, row-major |

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MMCF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;

/// A `T×D` sequence of per-timestep feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature matrix extents must be positive, got {rows}x{cols}"
            )));
        }
        if rows.checked_mul(cols) != Some(values.len()) {
            return Err(Error::InvalidArgument(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "feature_matrix" });
        }
        Ok(FeatureMatrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix::new(rows, cols, vec![0.0; rows * cols]).expect("positive extents")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        FeatureMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes one MMCF record at the start of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(Error::BadMagic {
                    expected: MAGIC,
                    found: bytes[..4].try_into().unwrap(),
                });
            }
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
        let payload = (rows as usize)
            .checked_mul(cols as usize)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or(Error::SizeOverflow { rows, cols })?;
        if bytes.len() < payload {
            return Err(Error::Truncated {
                expected: payload,
                actual: bytes.len(),
            });
        }
        let values = bytes[HEADER_LEN..payload]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((FeatureMatrix::new(rows as usize, cols as usize, values)?, payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (m, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} trailing bytes after MMCF payload",
                bytes.len() - used
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes)
}

fn check_target(target: usize) -> Result<()> {
    if target == 0 {
        return Err(Error::InvalidArgument("target timestep count must be ≥ 1".into()));
    }
    Ok(())
}

/// Uniformly subsamples rows `⌊i·rows/target⌋`, or repeats the last row when
/// there are fewer rows than `target`.
pub fn prepare_visual(m: &FeatureMatrix, target: usize) -> Result<FeatureMatrix> {
    check_target(target)?;
    let rows = m.rows();
    if rows == target {
        return Ok(m.clone());
    }
    let pick: Vec<usize> = if rows > target {
        (0..target).map(|i| i * rows / target).collect()
    } else {
        (0..target).map(|i| i.min(rows - 1)).collect()
    };
    let mut values = Vec::with_capacity(target * m.cols());
    for r in pick {
        values.extend_from_slice(m.row(r));
    }
    FeatureMatrix::new(target, m.cols(), values)
}

/// Keeps the first `target` rows, zero-padding when shorter.
pub fn prepare_audio(m: &FeatureMatrix, target: usize) -> Result<FeatureMatrix> {
    check_target(target)?;
    let keep = m.rows().min(target);
    let mut values = m.values()[..keep * m.cols()].to_vec();
    values.resize(target * m.cols(), 0.0);
    FeatureMatrix::new(target, m.cols(), values)
}
