//! Per-channel batch normalisation for `[N, C, ...]` activations.
//!
//! The forward pass is pure: it returns a cache holding the batch statistics,
//! and [`BatchNorm::commit`] folds them into the running averages. Statistics
//! are accumulated in f64 with the biased (population) variance.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::{Element, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T: Element = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache<T: Element> {
    mode: Mode,
    /// The normalised values are recomputed from this in f64 on the way back.
    input: Tensor<T>,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T: Element> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// `(N, C, spatial)` view of an activation of rank 2 or more.
fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape("batchnorm", "input rank", ">= 2 (N,C,...)", shape.len()));
    }
    if shape[1] != channels {
        return Err(Error::shape("batchnorm", "channel axis", channels, shape[1]));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

impl<T: Element> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::ONE),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::ONE),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<U: Element>(&self) -> BatchNorm<U> {
        BatchNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BnCache<T>)> {
        let c = self.channels();
        let (n, spatial) = layout(input.shape(), c)?;
        let count = n * spatial;
        let x = input.data();

        let (mean, var) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::invalid(
                        "batchnorm",
                        "train mode needs at least two values per channel",
                    ));
                }
                let mut mean = vec![0.0f64; c];
                for ni in 0..n {
                    for (ci, m) in mean.iter_mut().enumerate() {
                        let start = (ni * c + ci) * spatial;
                        *m += x[start..start + spatial].iter().map(|v| v.to_f64()).sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0f64; c];
                for ni in 0..n {
                    for (ci, v) in var.iter_mut().enumerate() {
                        let start = (ni * c + ci) * spatial;
                        let mu = mean[ci];
                        *v += x[start..start + spatial]
                            .iter()
                            .map(|&e| {
                                let d = e.to_f64() - mu;
                                d * d
                            })
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                (mean, var)
            }
            Mode::Eval => (self.running_mean.to_f64_vec(), self.running_var.to_f64_vec()),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut out = vec![T::ZERO; input.len()];
        for ni in 0..n {
            for ci in 0..c {
                let start = (ni * c + ci) * spatial;
                let (mu, is) = (mean[ci], inv_std[ci]);
                let g = self.gamma.data()[ci].to_f64();
                let b = self.beta.data()[ci].to_f64();
                for i in start..start + spatial {
                    let xh = (x[i].to_f64() - mu) * is;
                    out[i] = T::from_f64(g * xh + b);
                }
            }
        }
        let (batch_mean, batch_var) = match mode {
            Mode::Train => (mean.clone(), var),
            Mode::Eval => (Vec::new(), Vec::new()),
        };
        Ok((
            Tensor::new(input.shape().to_vec(), out)?,
            BnCache {
                mode,
                input: input.clone(),
                mean,
                inv_std,
                batch_mean,
                batch_var,
            },
        ))
    }

    /// Exponential moving average of the batch statistics; no-op for eval caches.
    pub fn commit(&mut self, cache: &BnCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.momentum;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = T::from_f64((1.0 - m) * r.to_f64() + m * b);
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = T::from_f64((1.0 - m) * r.to_f64() + m * b);
        }
    }

    pub fn backward(&self, cache: &BnCache<T>, upstream: &Tensor<T>) -> Result<BnGrads<T>> {
        upstream.expect_same_shape("batchnorm_backward", &cache.input)?;
        let c = self.channels();
        let (n, spatial) = layout(upstream.shape(), c)?;
        let count = (n * spatial) as f64;
        let dy = upstream.data();
        let x = cache.input.data();
        let x_hat = |i: usize, ci: usize| (x[i].to_f64() - cache.mean[ci]) * cache.inv_std[ci];

        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        for ni in 0..n {
            for ci in 0..c {
                let start = (ni * c + ci) * spatial;
                let (mut g, mut b) = (0.0, 0.0);
                for i in start..start + spatial {
                    let d = dy[i].to_f64();
                    g += d * x_hat(i, ci);
                    b += d;
                }
                dgamma[ci] += g;
                dbeta[ci] += b;
            }
        }

        let mut dx = vec![T::ZERO; upstream.len()];
        for ni in 0..n {
            for ci in 0..c {
                let start = (ni * c + ci) * spatial;
                let scale = self.gamma.data()[ci].to_f64() * cache.inv_std[ci];
                match cache.mode {
                    // Evaluated in f64: the bracket cancels heavily.
                    Mode::Train => {
                        let mean_db = dbeta[ci] / count;
                        let mean_dg = dgamma[ci] / count;
                        for i in start..start + spatial {
                            let v = dy[i].to_f64() - mean_db - x_hat(i, ci) * mean_dg;
                            dx[i] = T::from_f64(scale * v);
                        }
                    }
                    Mode::Eval => {
                        let k = T::from_f64(scale);
                        for i in start..start + spatial {
                            dx[i] = k * dy[i];
                        }
                    }
                }
            }
        }
        Ok(BnGrads {
            input: Tensor::new(upstream.shape().to_vec(), dx)?,
            gamma: Tensor::from_fn(&[c], |i| T::from_f64(dgamma[i])),
            beta: Tensor::from_fn(&[c], |i| T::from_f64(dbeta[i])),
        })
    }
}

/// Normalises `input` and, in train mode, updates the running statistics.
pub fn batchnorm3d<T: Element>(input: &Tensor<T>, state: &mut BatchNorm<T>, mode: Mode) -> Result<Tensor<T>> {
    let (out, cache) = state.forward(input, mode)?;
    state.commit(&cache);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_with_unit_statistics_is_identity() {
        let mut bn = BatchNorm::<f64>::new(3);
        bn.eps = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[2, 3, 2, 2, 2], 2.0, &mut rng);
        let y = batchnorm3d(&x, &mut bn, Mode::Eval).unwrap();
        assert_eq!(y, x);
        assert_eq!(bn.running_var.data(), &[1.0; 3]);
    }

    #[test]
    fn constant_channels_normalise_to_zero() {
        let mut bn = BatchNorm::<f32>::new(2);
        let x = Tensor::from_fn(&[4, 2, 3], |i| if (i / 3) % 2 == 0 { 5.0 } else { -2.0 });
        let y = batchnorm3d(&x, &mut bn, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_output_is_standardised_per_channel() {
        let mut bn = BatchNorm::<f64>::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_fn(&[6, 4, 3, 3, 3], |i| 3.0 + (i % 7) as f64).map(|v| v * 0.5);
        let x = {
            let noise = Tensor::<f64>::randn(x.shape(), 1.0, &mut rng);
            let mut x = x;
            x.add_assign(&noise).unwrap();
            x
        };
        let y = batchnorm3d(&x, &mut bn, Mode::Train).unwrap();
        for c in 0..4 {
            let vals: Vec<f64> = (0..6)
                .flat_map(|n| {
                    let start = (n * 4 + c) * 27;
                    y.data()[start..start + 27].to_vec()
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap();
        batchnorm3d(&x, &mut bn, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn single_value_per_channel_is_rejected_in_train_mode() {
        let mut bn = BatchNorm::<f32>::new(2);
        let x = Tensor::zeros(&[1, 2]);
        assert!(batchnorm3d(&x, &mut bn, Mode::Train).is_err());
        assert!(batchnorm3d(&x, &mut bn, Mode::Eval).is_ok());
    }
}
