use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{NamedTensors, ParamKind, Parameters};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("adam", format!("learning rate {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid("adam", format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("adam", "eps must be positive"));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A parameter together with its gradient for one optimizer step.
pub struct ParamUpdate<'a, T: Element> {
    pub name: &'a str,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Adam<T: Element = f32> {
    pub config: AdamConfig,
    pub step_count: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step_count: 0,
            moments: BTreeMap::new(),
        })
    }

    /// Second-moment buffer for `name`, if it has been stepped.
    pub fn second_moment(&self, name: &str) -> Option<&[T]> {
        self.moments.get(name).map(|(_, v)| v.as_slice())
    }

    /// One bias-corrected step over every parameter. Nothing is modified when
    /// any gradient is non-finite or misshapen.
    pub fn step(&mut self, params: &mut [ParamUpdate<'_, T>]) -> Result<()> {
        for p in params.iter() {
            check_grad(p.name, p.value, p.grad)?;
        }
        let (c1, c2) = self.advance();
        for p in params.iter_mut() {
            self.apply(p.name, p.value, p.grad, c1, c2);
        }
        Ok(())
    }

    /// Steps every trainable tensor of `module` that has an entry in `grads`;
    /// the others are left alone. Validation happens before any write.
    pub fn step_module<M: Parameters<T> + ?Sized>(&mut self, module: &mut M, grads: &NamedTensors<T>) -> Result<()> {
        let mut first_error = None;
        let mut matched = 0;
        module.visit(&mut |name, kind, value| {
            if let (ParamKind::Trainable, Some(g)) = (kind, grads.get(name)) {
                matched += 1;
                if let Err(e) = check_grad(name, value, g) {
                    first_error.get_or_insert(e);
                }
            }
        });
        if let Some(e) = first_error {
            return Err(e);
        }
        if matched != grads.len() {
            let mut trainable = std::collections::BTreeSet::new();
            module.visit(&mut |name, kind, _| {
                if kind == ParamKind::Trainable {
                    trainable.insert(name.to_string());
                }
            });
            let stray: Vec<&String> = grads.keys().filter(|k| !trainable.contains(*k)).collect();
            return Err(Error::invalid("adam", format!("gradients for unknown parameters {stray:?}")));
        }
        let (c1, c2) = self.advance();
        module.visit_mut(&mut |name, kind, value| {
            if let (ParamKind::Trainable, Some(g)) = (kind, grads.get(name)) {
                self.apply(name, value, g, c1, c2);
            }
        });
        Ok(())
    }

    /// Bumps the step counter and returns the two bias corrections.
    fn advance(&mut self) -> (f64, f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        (1.0 - self.config.beta1.powi(t), 1.0 - self.config.beta2.powi(t))
    }

    fn apply(&mut self, name: &str, value: &mut Tensor<T>, grad: &Tensor<T>, c1: f64, c2: f64) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let len = value.len();
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![T::ZERO; len], vec![T::ZERO; len]));
        for (((theta, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            let g = g.to_f64();
            let m_new = beta1 * mi.to_f64() + (1.0 - beta1) * g;
            let v_new = beta2 * vi.to_f64() + (1.0 - beta2) * g * g;
            *mi = T::from_f64(m_new);
            *vi = T::from_f64(v_new);
            let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + eps);
            *theta = T::from_f64(theta.to_f64() - update);
        }
    }
}

fn check_grad<T: Element>(name: &str, value: &Tensor<T>, grad: &Tensor<T>) -> Result<()> {
    if grad.shape() != value.shape() {
        return Err(Error::shape(
            "adam",
            format!("gradient of {name}"),
            format!("{:?}", value.shape()),
            format!("{:?}", grad.shape()),
        ));
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite {
            context: format!("gradient of {name}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grads: &[f64], steps: usize) -> Vec<f64> {
        let mut adam = Adam::<f64>::new(AdamConfig::default()).unwrap();
        let mut theta = Tensor::zeros(&[grads.len()]);
        let g = Tensor::new(vec![grads.len()], grads.to_vec()).unwrap();
        for _ in 0..steps {
            adam.step(&mut [ParamUpdate {
                name: "p",
                value: &mut theta,
                grad: &g,
            }])
            .unwrap();
        }
        theta.into_data()
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        assert_eq!(run(&[0.0; 4], 5), vec![0.0; 4]);
    }

    #[test]
    fn bias_corrected_steps_move_by_lr() {
        let lr = 1e-4;
        for (steps, expected) in [(1, lr / (1.0 + 1e-8)), (2, 2.0 * lr / (1.0 + 1e-8))] {
            for v in run(&[1.0; 3], steps) {
                assert!((v + expected).abs() < 1e-15, "{v} vs -{expected}");
            }
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut adam = Adam::<f32>::new(AdamConfig::default()).unwrap();
        let mut a = Tensor::zeros(&[2]);
        let mut b = Tensor::zeros(&[2]);
        let ga = Tensor::full(&[2], 1.0);
        let gb = Tensor::new(vec![2], vec![0.0, f32::NAN]).unwrap();
        let err = adam
            .step(&mut [
                ParamUpdate { name: "a", value: &mut a, grad: &ga },
                ParamUpdate { name: "stem.conv.w", value: &mut b, grad: &gb },
            ])
            .unwrap_err();
        assert!(err.to_string().contains("stem.conv.w"));
        assert_eq!(a.data(), &[0.0, 0.0]);
        assert_eq!(adam.step_count, 0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(Adam::<f32>::new(AdamConfig::with_lr(0.0)).is_err());
        assert!(Adam::<f32>::new(AdamConfig { beta2: 1.0, ..AdamConfig::default() }).is_err());
    }
}
