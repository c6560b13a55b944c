//! CT volumes and the NVOL container.
//!
//! Layout (little-endian): `"NVOL"` | version u16 | dtype u8 | reserved u8 |
//! dims 3×u32 (x, y, z) | spacing 3×f32 (mm) | `x·y·z` f32 voxels, x fastest.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const NVOL_MAGIC: &[u8; 4] = b"NVOL";
pub const NVOL_VERSION: u16 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: [f32; 3],
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing_mm: [f32; 3], voxels: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid("Volume::new", format!("dims {dims:?} must be positive")));
        }
        if !spacing_mm.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::invalid("Volume::new", format!("spacing {spacing_mm:?} must be positive")));
        }
        let expected = dims.iter().product::<usize>();
        if voxels.len() != expected {
            return Err(Error::shape("Volume::new", "voxel count", expected, voxels.len()));
        }
        Ok(Self { dims, spacing_mm, voxels })
    }

    pub fn filled(dims: [usize; 3], spacing_mm: [f32; 3], value: f32) -> Result<Self> {
        Self::new(dims, spacing_mm, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f32; 3] {
        self.spacing_mm
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        p.iter().zip(&self.dims).all(|(&c, &d)| c >= 0 && (c as usize) < d)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.voxels.len());
        out.extend_from_slice(NVOL_MAGIC);
        out.extend_from_slice(&NVOL_VERSION.to_le_bytes());
        out.push(0);
        out.push(0);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for s in self.spacing_mm {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for v in &self.voxels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses an NVOL image; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let malformed = |reason: String| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 4 || &bytes[..4] != NVOL_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: "NVOL".into(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != NVOL_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                version: version.into(),
            });
        }
        if bytes[6] != 0 {
            return Err(malformed(format!("dtype code {} (only 0 = f32 is defined)", bytes[6])));
        }
        let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
        if dims.contains(&0) {
            return Err(malformed(format!("dims {dims:?} must be positive")));
        }
        let spacing = [20, 24, 28].map(|o| f32::from_bits(u32_at(o)));
        if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(malformed(format!("spacing {spacing:?} must be positive")));
        }
        let expected = dims
            .iter()
            .try_fold(4u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| malformed(format!("dims {dims:?} overflow")))?;
        let found = (bytes.len() - HEADER_LEN) as u64;
        if found < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found,
            });
        }
        if found > expected {
            return Err(Error::LengthMismatch {
                path: path.to_path_buf(),
                expected,
                found,
            });
        }
        let voxels = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::new(dims, spacing, voxels)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Volume {
        let voxels = (0..2 * 3 * 4).map(|i| i as f32 * 1.5 - 7.0).collect();
        Volume::new([2, 3, 4], [1.0, 0.5, 2.5], voxels).unwrap()
    }

    #[test]
    fn x_is_fastest() {
        let v = sample();
        assert_eq!(v.index(1, 0, 0), 1);
        assert_eq!(v.index(0, 1, 0), 2);
        assert_eq!(v.index(0, 0, 1), 6);
    }

    #[test]
    fn bytes_round_trip() {
        let v = sample();
        let bytes = v.to_bytes();
        assert_eq!(bytes.len(), 32 + 4 * 24);
        assert_eq!(Volume::from_bytes(&bytes, Path::new("mem")).unwrap(), v);
    }

    #[test]
    fn header_errors_are_distinct() {
        let p = Path::new("mem");
        let good = sample().to_bytes();

        let mut b = good.clone();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Volume::from_bytes(&b, p), Err(Error::BadMagic { .. })));

        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(Volume::from_bytes(&b, p), Err(Error::UnsupportedVersion { version: 2, .. })));

        let b = &good[..good.len() - 4];
        assert!(matches!(Volume::from_bytes(b, p), Err(Error::Truncated { .. })));

        let mut b = good.clone();
        b.extend_from_slice(&[0; 4]);
        assert!(matches!(Volume::from_bytes(&b, p), Err(Error::LengthMismatch { .. })));

        let mut b = good.clone();
        b[6] = 1;
        assert!(matches!(Volume::from_bytes(&b, p), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn constructor_validates() {
        assert!(Volume::new([2, 2, 2], [1.0; 3], vec![0.0; 7]).is_err());
        assert!(Volume::new([2, 0, 2], [1.0; 3], vec![]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0, 0.0, 1.0], vec![0.0]).is_err());
    }
}
