//! HU windowing and patch cropping.

use crate::data::Volume;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HU_MIN: f32 = -1200.0;
pub const HU_MAX: f32 = 600.0;
/// Value used for voxels outside the source volume, before normalisation.
pub const FILL_HU: f32 = HU_MIN;

/// Maps one HU value to `[0, 1]`.
pub fn normalize_hu(hu: f32) -> f32 {
    let lo = HU_MIN as f64;
    let hi = HU_MAX as f64;
    (((hu as f64).clamp(lo, hi) - lo) / (hi - lo)) as f32
}

/// Clips to `[HU_MIN, HU_MAX]` and rescales to `[0, 1]`.
pub fn clip_normalize(values: &[f32]) -> Result<Vec<f32>> {
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            context: format!("clip_normalize input at index {i}"),
        });
    }
    Ok(values.iter().map(|&v| normalize_hu(v)).collect())
}

pub fn clip_normalize_volume(volume: &Volume) -> Result<Volume> {
    Volume::new(volume.dims(), volume.spacing_mm(), clip_normalize(volume.voxels())?)
}

/// Crops a normalised `[1, size, size, size]` patch around `center` (x, y, z).
///
/// Each axis covers `[c - size/2, c - size/2 + size)`; the tensor axes are
/// `(z, y, x)` so that x stays the fastest-varying one.
pub fn extract_patch(volume: &Volume, center: [usize; 3], size: usize) -> Result<Tensor<f32>> {
    if size == 0 {
        return Err(Error::invalid("extract_patch", "patch size must be positive"));
    }
    let dims = volume.dims();
    if !volume.contains(center.map(|c| c as i64)) {
        return Err(Error::invalid(
            "extract_patch",
            format!("center {center:?} outside volume of dims {dims:?}"),
        ));
    }
    let origin = center.map(|c| c as i64 - (size / 2) as i64);
    let fill = normalize_hu(FILL_HU);
    let mut data = vec![fill; size * size * size];
    for k in 0..size {
        let z = origin[2] + k as i64;
        if z < 0 || z as usize >= dims[2] {
            continue;
        }
        for j in 0..size {
            let y = origin[1] + j as i64;
            if y < 0 || y as usize >= dims[1] {
                continue;
            }
            let row = (k * size + j) * size;
            for i in 0..size {
                let x = origin[0] + i as i64;
                if x >= 0 && (x as usize) < dims[0] {
                    let v = volume.get(x as usize, y as usize, z as usize);
                    if v.is_nan() {
                        return Err(Error::NonFinite {
                            context: format!("volume voxel ({x}, {y}, {z})"),
                        });
                    }
                    data[row + i] = normalize_hu(v);
                }
            }
        }
    }
    Tensor::new(vec![1, size, size, size], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_endpoints_and_midpoint() {
        assert_eq!(normalize_hu(-1200.0), 0.0);
        assert_eq!(normalize_hu(600.0), 1.0);
        assert_eq!(normalize_hu(-2000.0), 0.0);
        assert_eq!(normalize_hu(5000.0), 1.0);
        assert!((normalize_hu(0.0) - 1200.0 / 1800.0).abs() < 1e-7);
    }

    #[test]
    fn nan_is_rejected() {
        assert!(clip_normalize(&[0.0, f32::NAN]).is_err());
    }

    #[test]
    fn corner_center_is_seven_eighths_fill() {
        let v = Volume::filled([64; 3], [1.0; 3], 0.0).unwrap();
        let p = extract_patch(&v, [0, 0, 0], 32).unwrap();
        assert_eq!(p.shape(), &[1, 32, 32, 32]);
        let fill = p.data().iter().filter(|&&x| x == 0.0).count();
        assert_eq!(fill, 32 * 32 * 32 - 16 * 16 * 16);
    }

    #[test]
    fn outside_center_is_rejected() {
        let v = Volume::filled([8; 3], [1.0; 3], 0.0).unwrap();
        assert!(extract_patch(&v, [8, 0, 0], 4).is_err());
    }
}
