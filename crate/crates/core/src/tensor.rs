//! Dense row-major tensors.
//!
//! A [`Tensor`] owns a flat buffer and a shape. The last axis is the fastest
//! varying one, so the flat index of `(i0, .., ik)` is `sum(i_j * stride_j)`
//! with `stride_{k} = 1`. Storage is generic over [`Element`], which is
//! implemented for `f32` (training) and `f64` (gradient checking).

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating-point storage type of a tensor.
pub trait Element:
    Copy
    + Default
    + PartialOrd
    + Send
    + Sync
    + Debug
    + Sum
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const DTYPE: DType;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn mul_add(self, a: Self, b: Self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;

    #[doc(hidden)]
    fn micro_kernel(pa: &[Self], pb: &[Self]) -> [[Self; gemm::NR]; gemm::MR];
    #[doc(hidden)]
    fn rows_kernel(pa: &[Self], pb: &[Self], offs: &[usize]) -> [[Self; gemm::NR]; gemm::MR];
    #[doc(hidden)]
    fn hadamard_kernel(pu: &[Self], pb: &[Self], offs: &[usize]) -> [[Self; gemm::NR]; gemm::MR];
}

macro_rules! impl_element {
    ($t:ty, $dtype:expr, $micro:path, $rows:path, $hadamard:path) => {
        impl Element for $t {
            const DTYPE: DType = $dtype;
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn mul_add(self, a: Self, b: Self) -> Self {
                <$t>::mul_add(self, a, b)
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline(always)]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline(always)]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline(always)]
            fn micro_kernel(pa: &[Self], pb: &[Self]) -> [[Self; gemm::NR]; gemm::MR] {
                $micro(pa, pb)
            }
            #[inline(always)]
            fn rows_kernel(pa: &[Self], pb: &[Self], offs: &[usize]) -> [[Self; gemm::NR]; gemm::MR] {
                $rows(pa, pb, offs)
            }
            #[inline(always)]
            fn hadamard_kernel(pu: &[Self], pb: &[Self], offs: &[usize]) -> [[Self; gemm::NR]; gemm::MR] {
                $hadamard(pu, pb, offs)
            }
        }
    };
}

impl_element!(f32, DType::F32, gemm::micro_f32, gemm::rows_f32, gemm::hadamard_f32);
impl_element!(f64, DType::F64, gemm::micro_f64, gemm::rows_f64, gemm::hadamard_f64);

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let head: Vec<T> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("dtype", &T::DTYPE)
            .field("shape", &self.shape)
            .field("head", &head)
            .finish()
    }
}

fn check_shape(op: &'static str, shape: &[usize]) -> Result<usize> {
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::shape(op, format!("axis {axis}"), "extent >= 1", 0));
    }
    Ok(shape.iter().product())
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected = check_shape("Tensor::new", &shape)?;
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                "data length",
                expected,
                data.len(),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Panics on zero extents; intended for shapes computed from validated configs.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = check_shape("Tensor::full", shape).expect("tensor extents must be >= 1");
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = check_shape("Tensor::from_fn", shape).expect("tensor extents must be >= 1");
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64(z * std)
        })
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::from_f64(rng.random_range(lo..hi)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for axis in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.shape[axis + 1];
        }
        strides
    }

    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::shape(
                "Tensor::flat_index",
                "rank",
                self.shape.len(),
                index.len(),
            ));
        }
        let mut flat = 0;
        for (axis, (&i, &extent)) in index.iter().zip(&self.shape).enumerate() {
            if i >= extent {
                return Err(Error::shape(
                    "Tensor::flat_index",
                    format!("axis {axis}"),
                    format!("index < {extent}"),
                    i,
                ));
            }
            flat = flat * extent + i;
        }
        Ok(flat)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.flat_index(index)?])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape("Tensor::reshape", shape)?;
        if len != self.data.len() {
            return Err(Error::shape(
                "Tensor::reshape",
                "element count",
                self.data.len(),
                len,
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape("Tensor::add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// Sum accumulated in f64, in flat order.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape("Tensor::max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn expect_same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                "shape",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        Ok(())
    }

    /// Rows `[start, end)` along axis 0.
    pub fn slice_outer(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape[0] {
            return Err(Error::shape(
                "Tensor::slice_outer",
                "axis 0",
                format!("range within 0..{}", self.shape[0]),
                format!("{start}..{end}"),
            ));
        }
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Self {
            shape,
            data: self.data[start * row..end * row].to_vec(),
        })
    }

    /// Concatenates tensors along axis 0; trailing extents must agree.
    pub fn stack_outer(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("Tensor::stack_outer", "no tensors given"))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut outer = 0;
        for part in parts {
            if &part.shape[1..] != tail {
                return Err(Error::shape(
                    "Tensor::stack_outer",
                    "trailing axes",
                    format!("{tail:?}"),
                    format!("{:?}", &part.shape[1..]),
                ));
            }
            outer += part.shape[0];
            data.extend_from_slice(&part.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = outer;
        Ok(Self { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_flat_index_matches_nested_iteration() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let mut flat = 0;
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(t.flat_index(&[a, b, c]).unwrap(), flat);
                    assert_eq!(t.get(&[a, b, c]).unwrap(), flat as f64);
                    flat += 1;
                }
            }
        }
        assert_eq!(t.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn rejects_zero_extent_and_length_mismatch() {
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn stack_and_slice_are_inverse() {
        let a = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[1, 3], |i| 10.0 + i as f32);
        let s = Tensor::stack_outer(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[3, 3]);
        assert_eq!(s.slice_outer(0, 2).unwrap(), a);
        assert_eq!(s.slice_outer(2, 3).unwrap(), b);
    }
}
