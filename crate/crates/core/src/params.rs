//! Named parameter collections.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub type NamedTensors<T> = BTreeMap<String, Tensor<T>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Persisted but not trained (batch-norm running statistics).
    Buffer,
}

/// A module whose tensors are addressable by stable dotted names.
pub trait Parameters<T: Element> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>));

    fn named_tensors(&self) -> NamedTensors<T> {
        let mut out = NamedTensors::new();
        self.visit(&mut |name, _, t| {
            out.insert(name.to_string(), t.clone());
        });
        out
    }

    fn trainable_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, kind, _| {
            if kind == ParamKind::Trainable {
                out.push(name.to_string());
            }
        });
        out
    }

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, t| n += t.len());
        n
    }

    /// Overwrites tensors from `source`. Every shape is checked before any
    /// tensor is written. In strict mode every tensor of `self` must be covered.
    fn load_named(&mut self, source: &NamedTensors<T>, strict: bool) -> Result<LoadReport> {
        let mut report = LoadReport::default();
        let mut mismatch = None;
        self.visit(&mut |name, _, t| match source.get(name) {
            Some(s) if s.shape() != t.shape() => {
                mismatch.get_or_insert_with(|| Error::ParameterShape {
                    name: name.to_string(),
                    expected: t.shape().to_vec(),
                    found: s.shape().to_vec(),
                });
            }
            Some(_) => report.loaded.push(name.to_string()),
            None => report.missing.push(name.to_string()),
        });
        if let Some(e) = mismatch {
            return Err(e);
        }
        if strict && !report.missing.is_empty() {
            return Err(Error::MissingParameters(report.missing));
        }
        self.visit_mut(&mut |name, _, t| {
            if let Some(s) = source.get(name) {
                t.data_mut().copy_from_slice(s.data());
            }
        });
        let own: std::collections::BTreeSet<String> = report.loaded.iter().cloned().collect();
        report.unused = source.keys().filter(|k| !own.contains(*k)).cloned().collect();
        Ok(report)
    }
}

/// Outcome of [`Parameters::load_named`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Tensors of the target that kept their previous values.
    pub missing: Vec<String>,
    /// Source tensors with no counterpart in the target.
    pub unused: Vec<String>,
}

pub(crate) fn add_grad<T: Element>(grads: &mut NamedTensors<T>, name: String, g: Tensor<T>) -> Result<()> {
    match grads.get_mut(&name) {
        Some(acc) => acc.add_assign(&g),
        None => {
            grads.insert(name, g);
            Ok(())
        }
    }
}
