use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::rng::keyed_rng;
use crate::tensor::{Element, Tensor};

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Passes `upstream` where the forward input was strictly positive. `output`
/// is the ReLU output, which is positive exactly where the input was.
pub fn relu_backward<T: Element>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    output.expect_same_shape("relu_backward", upstream)?;
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &u)| if y > T::ZERO { u } else { T::ZERO })
        .collect();
    Tensor::new(output.shape().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Stream index; one per (epoch, batch) during training.
    pub stream: u64,
}

/// Inverted dropout. Returns the output and the keep-scale applied to each
/// element (0 or `1/(1-rate)`), which is also the backward multiplier.
pub fn dropout<T: Element>(input: &Tensor<T>, spec: &DropoutSpec) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(Error::invalid("dropout", format!("rate {} outside [0, 1)", spec.rate)));
    }
    if spec.mode == Mode::Eval || spec.rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let mut rng = keyed_rng(spec.seed, "dropout", spec.stream);
    let keep = T::from_f64(1.0 / (1.0 - spec.rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f64>() < spec.rate { T::ZERO } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Element>(mask: Option<&[T]>, upstream: &Tensor<T>) -> Tensor<T> {
    match mask {
        None => upstream.clone(),
        Some(m) => Tensor::new(
            upstream.shape().to_vec(),
            upstream.data().iter().zip(m).map(|(&u, &k)| u * k).collect(),
        )
        .expect("mask has the upstream length"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_gradient_convention() {
        let x = Tensor::<f64>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&y, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    fn spec(rate: f64, mode: Mode) -> DropoutSpec {
        DropoutSpec {
            rate,
            mode,
            seed: 11,
            stream: 0,
        }
    }

    #[test]
    fn zero_rate_and_eval_mode_are_identity() {
        let x = Tensor::<f32>::from_fn(&[100], |i| i as f32);
        for mode in [Mode::Train, Mode::Eval] {
            assert_eq!(dropout(&x, &spec(0.0, mode)).unwrap().0, x);
        }
        assert_eq!(dropout(&x, &spec(0.3, Mode::Eval)).unwrap().0, x);
    }

    #[test]
    fn invalid_rate_is_rejected() {
        let x = Tensor::<f32>::zeros(&[4]);
        assert!(dropout(&x, &spec(1.0, Mode::Train)).is_err());
        assert!(dropout(&x, &spec(-0.1, Mode::Train)).is_err());
    }

    #[test]
    fn train_mode_drops_at_the_requested_rate() {
        let x = Tensor::<f64>::full(&[1_000_000], 1.0);
        let (y, _) = dropout(&x, &spec(0.3, Mode::Train)).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((zeros - 0.3).abs() < 0.005, "zero fraction {zeros}");
        let keep = 1.0 / 0.7;
        assert!(y.data().iter().all(|&v| v == 0.0 || v == keep));
    }

    #[test]
    fn masks_are_deterministic_per_stream() {
        let x = Tensor::<f32>::full(&[64], 1.0);
        let a = dropout(&x, &spec(0.5, Mode::Train)).unwrap().0;
        let b = dropout(&x, &spec(0.5, Mode::Train)).unwrap().0;
        let c = dropout(&x, &DropoutSpec { stream: 1, ..spec(0.5, Mode::Train) }).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
