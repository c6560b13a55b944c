//! Finite-difference checks for every layer and for the full tiny model.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{BackboneConfig, TapPoint};
use crate::error::Result;
use crate::gradcheck::{gradient_check, gradient_check_at, CheckOptions, GradOp, GradReport};
use crate::layers::{bce_with_logits, relu, relu_backward, BatchNorm, Mode};
use crate::model::{build_model, HeadConfig, Pass, Patches, StreamMode, TwoStreamModel};
use crate::ops::{conv3d_backward, conv3d_forward, linear, linear_backward, pool3d, pool3d_backward, ConvSpec, PoolMode};
use crate::params::{NamedTensors, Parameters};
use crate::tensor::{DType, Element, Tensor};

pub const F64_TOLERANCE: f64 = 1e-6;
pub const F32_TOLERANCE: f64 = 1e-4;

fn sign_signature(t: &Tensor<f64>) -> u64 {
    let mut h = DefaultHasher::new();
    for v in t.data() {
        (*v > 0.0).hash(&mut h);
    }
    h.finish()
}

pub struct Conv3dOp(pub ConvSpec);

impl GradOp for Conv3dOp {
    fn name(&self) -> String {
        let s = &self.0;
        format!("conv3d k{} s{} p{}", s.kernel, s.stride, s.padding)
    }
    fn variable_names(&self, _: usize) -> Vec<String> {
        vec!["input".into(), "weights".into(), "bias".into()]
    }
    fn forward<T: Element>(&self, v: &[Tensor<T>]) -> Result<Tensor<T>> {
        conv3d_forward(&v[0], &v[1], Some(&v[2]), &self.0)
    }
    fn backward<T: Element>(&self, v: &[Tensor<T>], up: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let g = conv3d_backward(up, &v[0], &v[1], &self.0)?;
        Ok(vec![g.input.expect("input gradient"), g.weights, g.bias.expect("bias gradient")])
    }
}

pub struct LinearOp;

impl GradOp for LinearOp {
    fn name(&self) -> String {
        "linear".into()
    }
    fn variable_names(&self, _: usize) -> Vec<String> {
        vec!["input".into(), "weights".into(), "bias".into()]
    }
    fn forward<T: Element>(&self, v: &[Tensor<T>]) -> Result<Tensor<T>> {
        linear(&v[0], &v[1], Some(&v[2]))
    }
    fn backward<T: Element>(&self, v: &[Tensor<T>], up: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let g = linear_backward(up, &v[0], &v[1])?;
        Ok(vec![g.input, g.weights, g.bias])
    }
}

/// Train-mode batch norm with `[input, gamma, beta]` as variables.
pub struct BatchNormOp;

impl BatchNormOp {
    fn layer<T: Element>(v: &[Tensor<T>]) -> BatchNorm<T> {
        let mut bn = BatchNorm::new(v[1].len());
        bn.gamma = v[1].clone();
        bn.beta = v[2].clone();
        bn
    }
}

impl GradOp for BatchNormOp {
    fn name(&self) -> String {
        "batchnorm (train)".into()
    }
    fn variable_names(&self, _: usize) -> Vec<String> {
        vec!["input".into(), "gamma".into(), "beta".into()]
    }
    fn forward<T: Element>(&self, v: &[Tensor<T>]) -> Result<Tensor<T>> {
        Ok(Self::layer(v).forward(&v[0], Mode::Train)?.0)
    }
    fn backward<T: Element>(&self, v: &[Tensor<T>], up: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let bn = Self::layer(v);
        let (_, cache) = bn.forward(&v[0], Mode::Train)?;
        let g = bn.backward(&cache, up)?;
        Ok(vec![g.input, g.gamma, g.beta])
    }
}

/// ReLU evaluated away from its kink: draws keep `|x| >= 0.1`.
pub struct ReluOp;

impl GradOp for ReluOp {
    fn name(&self) -> String {
        "relu (off-kink)".into()
    }
    fn forward<T: Element>(&self, v: &[Tensor<T>]) -> Result<Tensor<T>> {
        Ok(relu(&v[0]))
    }
    fn backward<T: Element>(&self, v: &[Tensor<T>], up: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![relu_backward(&relu(&v[0]), up)?])
    }
    fn draw(&self, shapes: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
        shapes
            .iter()
            .map(|s| {
                Tensor::from_fn(s, |_| {
                    let m: f64 = rng.random_range(0.1..2.0);
                    if rng.random::<bool>() {
                        m
                    } else {
                        -m
                    }
                })
            })
            .collect()
    }
    fn kink_signature(&self, v: &[Tensor<f64>]) -> Result<u64> {
        Ok(sign_signature(&v[0]))
    }
}

pub struct PoolOp {
    pub mode: PoolMode,
    pub window: usize,
    pub stride: usize,
}

impl GradOp for PoolOp {
    fn name(&self) -> String {
        match self.mode {
            PoolMode::GlobalAvg => "global avg pool".into(),
            m => format!("{m:?} pool w{} s{}", self.window, self.stride).to_lowercase(),
        }
    }
    fn forward<T: Element>(&self, v: &[Tensor<T>]) -> Result<Tensor<T>> {
        pool3d(&v[0], self.mode, self.window, self.stride)
    }
    fn backward<T: Element>(&self, v: &[Tensor<T>], up: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![pool3d_backward(&v[0], up, self.mode, self.window, self.stride)?])
    }
    fn kink_signature(&self, v: &[Tensor<f64>]) -> Result<u64> {
        if self.mode != PoolMode::Max {
            return Ok(0);
        }
        // The routed gradient, as a map from input position to window count,
        // changes exactly when some window's argmax changes.
        let out = pool3d(&v[0], self.mode, self.window, self.stride)?;
        let routed = pool3d_backward(&v[0], &Tensor::full(out.shape(), 1.0), self.mode, self.window, self.stride)?;
        let mut h = DefaultHasher::new();
        for x in routed.data() {
            x.to_bits().hash(&mut h);
        }
        Ok(h.finish())
    }
}

/// Mean BCE over a fixed label vector; the single variable is the logits.
pub struct BceOp {
    pub labels: Vec<f64>,
}

impl GradOp for BceOp {
    fn name(&self) -> String {
        "bce_with_logits".into()
    }
    fn variable_names(&self, _: usize) -> Vec<String> {
        vec!["logits".into()]
    }
    fn forward<T: Element>(&self, v: &[Tensor<T>]) -> Result<Tensor<T>> {
        let (loss, _) = bce_with_logits(&v[0], &self.labels)?;
        Ok(Tensor::full(&[1], T::from_f64(loss)))
    }
    fn backward<T: Element>(&self, v: &[Tensor<T>], up: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (_, mut g) = bce_with_logits(&v[0], &self.labels)?;
        g.scale(up.data()[0]);
        Ok(vec![g])
    }
    fn draw(&self, shapes: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
        shapes.iter().map(|s| Tensor::randn(s, 3.0, rng)).collect()
    }
}

/// A model whose selected parameters are the check variables. Remaining
/// parameters keep the template's values. Runs in train mode with a fixed
/// dropout mask.
pub struct ModelOp {
    pub label: String,
    pub template: TwoStreamModel<f64>,
    pub names: Vec<String>,
    pub t1: Tensor<f64>,
    pub t2: Option<Tensor<f64>>,
    /// Pass the embedding as an extra leading variable instead of patches,
    /// which checks the head alone.
    pub head_only: Option<Tensor<f64>>,
}

impl ModelOp {
    fn model<T: Element>(&self, vars: &[Tensor<T>]) -> Result<TwoStreamModel<T>> {
        let mut m: TwoStreamModel<T> = self.template.cast();
        let offset = usize::from(self.head_only.is_some());
        let named: NamedTensors<T> = self.names.iter().cloned().zip(vars[offset..].iter().cloned()).collect();
        m.load_named(&named, false)?;
        Ok(m)
    }

    fn pass(&self) -> Pass {
        Pass::train(17, 0)
    }

    pub fn initial_vars(&self) -> Vec<Tensor<f64>> {
        let all = self.template.named_tensors();
        self.head_only
            .iter()
            .cloned()
            .chain(self.names.iter().map(|n| all[n].clone()))
            .collect()
    }

    fn forward_signed(&self, vars: &[Tensor<f64>]) -> Result<(Tensor<f64>, u64)> {
        let m = self.model(vars)?;
        if self.head_only.is_some() {
            let out = m.head_activations(&vars[0], self.pass())?;
            let mut h = DefaultHasher::new();
            for v in out.data() {
                (*v > 0.0).hash(&mut h);
            }
            return Ok((m.head_logits(&vars[0], self.pass())?, h.finish()));
        }
        let patches = match &self.t2 {
            Some(t2) => Patches::Pair(&self.t1, t2),
            None => Patches::Single(&self.t1),
        };
        let (logits, cache) = m.forward_train(patches, self.pass())?;
        Ok((logits, cache.kink_signature()))
    }
}

impl GradOp for ModelOp {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn variable_names(&self, _: usize) -> Vec<String> {
        self.head_only
            .iter()
            .map(|_| "embedding".to_string())
            .chain(self.names.iter().cloned())
            .collect()
    }
    fn forward<T: Element>(&self, vars: &[Tensor<T>]) -> Result<Tensor<T>> {
        let m = self.model(vars)?;
        if self.head_only.is_some() {
            return m.head_logits(&vars[0], self.pass());
        }
        let (t1, t2) = (self.t1.cast::<T>(), self.t2.as_ref().map(|t| t.cast::<T>()));
        let patches = match &t2 {
            Some(t2) => Patches::Pair(&t1, t2),
            None => Patches::Single(&t1),
        };
        m.logits(patches, self.pass())
    }
    fn backward<T: Element>(&self, vars: &[Tensor<T>], up: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let m = self.model(vars)?;
        let mut out = Vec::new();
        let grads = if self.head_only.is_some() {
            let (grads, dz) = m.head_gradients(&vars[0], self.pass(), up)?;
            out.push(dz);
            grads
        } else {
            let (t1, t2) = (self.t1.cast::<T>(), self.t2.as_ref().map(|t| t.cast::<T>()));
            let patches = match &t2 {
                Some(t2) => Patches::Pair(&t1, t2),
                None => Patches::Single(&t1),
            };
            let (_, cache) = m.forward_train(patches, self.pass())?;
            m.backward(patches, &cache, up)?
        };
        for n in &self.names {
            out.push(grads.get(n).cloned().unwrap_or_else(|| Tensor::zeros(vars[out.len()].shape())));
        }
        Ok(out)
    }
    fn kink_signature(&self, vars: &[Tensor<f64>]) -> Result<u64> {
        Ok(self.forward_signed(vars)?.1)
    }
    fn forward_with_signature(&self, vars: &[Tensor<f64>]) -> Result<(Tensor<f64>, u64)> {
        self.forward_signed(vars)
    }
}

/// Parameters whose gradient is identically zero in train mode: a bias
/// feeding straight into batch norm is cancelled by the mean subtraction.
pub const STRUCTURALLY_ZERO: [&str; 1] = ["head.fc1.b"];

/// Tiny two-stream model on `extent`³ patches, used by the end-to-end checks.
pub fn tiny_model_op(seed: u64, batch: usize, extent: usize) -> Result<ModelOp> {
    let cfg = BackboneConfig::tiny();
    let tap = TapPoint::AvgPool;
    let head = HeadConfig::for_tap(&cfg, tap, StreamMode::TwoStream, extent)?;
    let template: TwoStreamModel<f64> = build_model(&cfg, tap, &head, StreamMode::TwoStream, extent, seed)?;
    let mut rng = crate::rng::keyed_rng(seed, "gradcheck patches", 0);
    let shape = [batch, 1, extent, extent, extent];
    // f32-representable so both precisions see the same point.
    let t1 = Tensor::<f32>::uniform(&shape, 0.0, 1.0, &mut rng).cast();
    let t2 = Tensor::<f32>::uniform(&shape, 0.0, 1.0, &mut rng).cast();
    let names = template
        .trainable_names()
        .into_iter()
        .filter(|n| !STRUCTURALLY_ZERO.contains(&n.as_str()))
        .collect();
    Ok(ModelOp {
        label: "tiny two-stream model".into(),
        template,
        names,
        t1,
        t2: Some(t2),
        head_only: None,
    })
}

/// The classification head on its own, embedding included as a variable.
pub fn head_op(seed: u64, batch: usize, width: usize) -> Result<ModelOp> {
    let mut op = tiny_model_op(seed, batch, 8)?;
    op.label = "head".into();
    op.names.retain(|n| n.starts_with("head."));
    let mut rng = crate::rng::keyed_rng(seed, "gradcheck embedding", 0);
    assert_eq!(width, op.template.head_config().input_width);
    op.head_only = Some(Tensor::randn(&[batch, width], 1.0, &mut rng));
    Ok(op)
}

fn at_precision(vars: Vec<Tensor<f64>>, precision: DType) -> Vec<Tensor<f64>> {
    match precision {
        DType::F64 => vars,
        DType::F32 => vars.iter().map(|v| v.cast::<f32>().cast()).collect(),
    }
}

/// Runs every check at both precisions.
pub fn run_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut reports = Vec::new();
    for (precision, tol) in [(DType::F64, F64_TOLERANCE), (DType::F32, F32_TOLERANCE)] {
        let opts = CheckOptions {
            precision,
            ..CheckOptions::f64(tol, seed)
        };
        let conv_cases = [
            (ConvSpec::new(2, 3, 3, 1, 1).with_bias(), [2, 2, 5, 5, 5]),
            (ConvSpec::new(3, 2, 3, 2, 1).with_bias(), [1, 3, 6, 6, 6]),
            (ConvSpec::new(2, 4, 1, 2, 0).with_bias(), [2, 2, 4, 4, 4]),
        ];
        for (spec, input) in conv_cases {
            let shapes = vec![input.to_vec(), spec.weight_shape().to_vec(), vec![spec.out_channels]];
            reports.push(gradient_check(&Conv3dOp(spec), &shapes, opts)?);
        }
        reports.push(gradient_check(&LinearOp, &[vec![4, 6], vec![3, 6], vec![3]], opts)?);
        reports.push(gradient_check(&BatchNormOp, &[vec![3, 2, 2, 2, 2], vec![2], vec![2]], opts)?);
        reports.push(gradient_check(&BatchNormOp, &[vec![5, 4], vec![4], vec![4]], opts)?);
        reports.push(gradient_check(&ReluOp, &[vec![4, 5]], opts)?);
        for mode in [PoolMode::Max, PoolMode::Avg, PoolMode::GlobalAvg] {
            let op = PoolOp { mode, window: 2, stride: 2 };
            reports.push(gradient_check(&op, &[vec![2, 2, 4, 4, 4]], opts)?);
        }
        let bce = BceOp {
            labels: vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        };
        reports.push(gradient_check(&bce, &[vec![6]], opts)?);

        let head = head_op(seed, 4, 128)?;
        let vars = at_precision(head.initial_vars(), precision);
        reports.push(gradient_check_at(&head, &vars, opts)?);

        let full = tiny_model_op(seed, 4, 8)?;
        let vars = at_precision(full.initial_vars(), precision);
        reports.push(gradient_check_at(&full, &vars, opts.with_max_probes(6))?);
    }
    Ok(reports)
}
