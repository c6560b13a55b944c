//! Affine map `out = input · weightsᵀ + bias`.

use crate::error::{Error, Result};
use crate::gemm::{gemm, Mat};
use crate::tensor::{Element, Tensor};

fn dims<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<(usize, usize, usize)> {
    if input.ndim() != 2 {
        return Err(Error::shape("linear", "input rank", "2 (N,din)", input.ndim()));
    }
    if weights.ndim() != 2 {
        return Err(Error::shape("linear", "weights rank", "2 (dout,din)", weights.ndim()));
    }
    let (n, din) = (input.shape()[0], input.shape()[1]);
    let (dout, wdin) = (weights.shape()[0], weights.shape()[1]);
    if din != wdin {
        return Err(Error::shape("linear", "inner dimension", din, wdin));
    }
    if let Some(b) = bias {
        if b.shape() != [dout] {
            return Err(Error::shape("linear", "bias", format!("[{dout}]"), format!("{:?}", b.shape())));
        }
    }
    Ok((n, din, dout))
}

pub fn linear<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, din, dout) = dims(input, weights, bias)?;
    let mut out = vec![T::ZERO; n * dout];
    gemm(
        n,
        dout,
        din,
        Mat::n(input.data(), din),
        Mat::t(weights.data(), din),
        &mut out,
        dout,
        false,
    );
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(dout) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Tensor::new(vec![n, dout], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T: Element> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Element>(
    upstream: &Tensor<T>,
    saved_input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, din, dout) = dims(saved_input, weights, None)?;
    if upstream.shape() != [n, dout] {
        return Err(Error::shape(
            "linear_backward",
            "upstream",
            format!("[{n}, {dout}]"),
            format!("{:?}", upstream.shape()),
        ));
    }
    let mut dx = vec![T::ZERO; n * din];
    gemm(
        n,
        din,
        dout,
        Mat::n(upstream.data(), dout),
        Mat::n(weights.data(), din),
        &mut dx,
        din,
        false,
    );
    let mut dw = vec![T::ZERO; dout * din];
    gemm(
        dout,
        din,
        n,
        Mat::t(upstream.data(), dout),
        Mat::n(saved_input.data(), din),
        &mut dw,
        din,
        false,
    );
    let mut db = vec![0.0f64; dout];
    for row in upstream.data().chunks_exact(dout) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v.to_f64();
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(vec![n, din], dx)?,
        weights: Tensor::new(vec![dout, din], dw)?,
        bias: Tensor::new(vec![dout], db.into_iter().map(T::from_f64).collect())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let x = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64 - 5.0);
        let w = Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(&[4]);
        assert_eq!(linear(&x, &w, Some(&b)).unwrap(), x);
    }

    #[test]
    fn small_affine_example() {
        let x = Tensor::<f64>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().data(), &[3.5, 2.5]);
    }

    #[test]
    fn head_width_output_shape() {
        let x = Tensor::<f32>::zeros(&[5, 1024]);
        let w = Tensor::zeros(&[64, 1024]);
        let b = Tensor::zeros(&[64]);
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().shape(), &[5, 64]);
    }

    #[test]
    fn inner_dimension_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 4]);
        assert!(linear(&x, &w, None).is_err());
    }
}
