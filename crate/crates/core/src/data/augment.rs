//! Exact cube symmetries for paired augmentation.
//!
//! The 48 symmetries of a cube are an axis permutation followed by optional
//! per-axis flips. They move voxels without resampling, so value multisets
//! are preserved exactly.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Output spatial axis `k` reads input axis `perm[k]`, reversed when `flip[k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CubeSymmetry {
    pub perm: [usize; 3],
    pub flip: [bool; 3],
}

impl CubeSymmetry {
    pub const IDENTITY: Self = Self {
        perm: [0, 1, 2],
        flip: [false; 3],
    };

    /// All 48 elements; index 0 is the identity.
    pub fn all() -> Vec<Self> {
        PERMUTATIONS
            .iter()
            .flat_map(|&perm| {
                (0..8u8).map(move |bits| Self {
                    perm,
                    flip: [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0],
                })
            })
            .collect()
    }

    pub fn from_index(index: usize) -> Self {
        let perm = PERMUTATIONS[(index / 8) % 6];
        let bits = index % 8;
        Self {
            perm,
            flip: [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0],
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_index(rng.random_range(0..48))
    }

    pub fn inverse(&self) -> Self {
        let mut perm = [0; 3];
        let mut flip = [false; 3];
        for k in 0..3 {
            perm[self.perm[k]] = k;
            flip[self.perm[k]] = self.flip[k];
        }
        Self { perm, flip }
    }

    /// Applies the symmetry to the last three axes, which must be equal.
    pub fn apply<T: Element>(&self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = t.shape();
        if shape.len() < 3 {
            return Err(Error::shape("augment", "rank", ">= 3", shape.len()));
        }
        let s = &shape[shape.len() - 3..];
        if s[0] != s[1] || s[1] != s[2] {
            return Err(Error::invalid("augment", format!("spatial extent {s:?} is not cubic")));
        }
        let n = s[0];
        let cube = n * n * n;
        let strides = [n * n, n, 1];
        let src = t.data();
        let mut out = Vec::with_capacity(src.len());
        for block in src.chunks_exact(cube) {
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        let o = [a, b, c];
                        let mut idx = 0;
                        for k in 0..3 {
                            let v = if self.flip[k] { n - 1 - o[k] } else { o[k] };
                            idx += v * strides[self.perm[k]];
                        }
                        out.push(block[idx]);
                    }
                }
            }
        }
        Tensor::new(shape.to_vec(), out)
    }
}

/// Applies one randomly drawn symmetry to both time points.
pub fn augment_pair<T: Element, R: Rng + ?Sized>(
    t1: &Tensor<T>,
    t2: &Tensor<T>,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>, CubeSymmetry)> {
    t1.expect_same_shape("augment_pair", t2)?;
    let g = CubeSymmetry::random(rng);
    Ok((g.apply(t1)?, g.apply(t2)?, g))
}
