//! 3D ResNet feature extractor with named tap points.
//!
//! Layout: a 3³ stride-1 stem (conv, BN, ReLU; no max-pool) followed by four
//! stages of basic residual blocks. A block is conv-BN-ReLU-conv-BN plus a
//! shortcut, then ReLU. The shortcut is the identity unless the block changes
//! the stride or channel count, where it is a 1×1×1 strided conv with BN.
//!
//! Parameter names:
//!
//! ```text
//! stem.conv.w   stem.bn.{gamma,beta,rmean,rvar}
//! stage{s}.block{b}.conv1.w   stage{s}.block{b}.bn1.{gamma,beta,rmean,rvar}
//! stage{s}.block{b}.conv2.w   stage{s}.block{b}.bn2.{gamma,beta,rmean,rvar}
//! stage{s}.block{b}.proj.w    stage{s}.block{b}.proj.bn.{gamma,beta,rmean,rvar}
//! ```
//!
//! with `s` in 1..=4 and `b` counted from 1 within each stage.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{relu, relu_backward, BatchNorm, BnCache, Mode};
use crate::ops::{conv3d_backward_with, conv3d_forward, pool3d, pool3d_backward, ConvSpec, PoolMode};
use crate::params::{add_grad, NamedTensors, ParamKind, Parameters};
use crate::rng::keyed_rng;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stage_depths: [usize; 4],
    pub stage_strides: [usize; 4],
    pub channel_multipliers: [usize; 4],
}

impl Default for BackboneConfig {
    /// ResNet-34 depths.
    fn default() -> Self {
        Self {
            stem_channels: 64,
            stage_depths: [3, 4, 6, 3],
            stage_strides: [1, 2, 2, 2],
            channel_multipliers: [1, 2, 4, 8],
        }
    }
}

impl BackboneConfig {
    pub fn tiny() -> Self {
        Self {
            stem_channels: 8,
            stage_depths: [1, 1, 1, 1],
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" | "resnet34" => Ok(Self::default()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::invalid(
                "backbone preset",
                format!("unknown preset {other:?} (expected \"default\" or \"tiny\")"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 {
            return Err(Error::invalid("backbone config", "stem_channels must be positive"));
        }
        for s in 0..4 {
            if self.stage_depths[s] == 0 {
                return Err(Error::invalid("backbone config", format!("stage {} has depth 0", s + 1)));
            }
            if self.stage_strides[s] == 0 || self.channel_multipliers[s] == 0 {
                return Err(Error::invalid(
                    "backbone config",
                    format!("stage {} stride and multiplier must be positive", s + 1),
                ));
            }
        }
        Ok(())
    }

    pub fn stage_channels(&self) -> [usize; 4] {
        self.channel_multipliers.map(|m| self.stem_channels * m)
    }

    pub fn block_count(&self) -> usize {
        self.stage_depths.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TapPoint {
    Block1,
    Block2,
    Block3,
    Block4,
    AvgPool,
}

impl TapPoint {
    pub const ALL: [TapPoint; 5] = [
        TapPoint::Block1,
        TapPoint::Block2,
        TapPoint::Block3,
        TapPoint::Block4,
        TapPoint::AvgPool,
    ];

    /// Number of stages executed to reach this tap.
    pub fn stages(self) -> usize {
        match self {
            TapPoint::Block1 => 1,
            TapPoint::Block2 => 2,
            TapPoint::Block3 => 3,
            TapPoint::Block4 | TapPoint::AvgPool => 4,
        }
    }
}

impl fmt::Display for TapPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TapPoint::Block1 => "Block1",
            TapPoint::Block2 => "Block2",
            TapPoint::Block3 => "Block3",
            TapPoint::Block4 => "Block4",
            TapPoint::AvgPool => "AvgPool",
        };
        f.write_str(s)
    }
}

impl FromStr for TapPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TapPoint::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("tap point", format!("unknown tap {s:?}")))
    }
}

/// Per-sample output shape of `tap` for a cubic input of side `extent`.
pub fn tap_shape(config: &BackboneConfig, tap: TapPoint, extent: usize) -> Result<Vec<usize>> {
    config.validate()?;
    let channels = config.stage_channels();
    let mut e = extent;
    if e == 0 {
        return Err(Error::invalid("tap_shape", "input extent must be positive"));
    }
    for s in 0..tap.stages() {
        let stride = config.stage_strides[s];
        if !e.is_multiple_of(stride) {
            return Err(Error::invalid(
                "tap_shape",
                format!("extent {e} entering stage {} is not divisible by stride {stride}", s + 1),
            ));
        }
        e /= stride;
    }
    let c = channels[tap.stages() - 1];
    Ok(match tap {
        TapPoint::AvgPool => vec![c],
        _ => vec![c, e, e, e],
    })
}

/// Convolution without bias followed by batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn<T: Element = f32> {
    pub spec: ConvSpec,
    pub weights: Tensor<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Element> ConvBn<T> {
    fn new(spec: ConvSpec, seed: u64, name: &str) -> Self {
        let fan_in = spec.in_channels * spec.kernel.pow(3);
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let mut rng = keyed_rng(seed, name, 0);
        let weights = Tensor::from_fn(&spec.weight_shape(), |_| T::from_f64(normal.sample(&mut rng)));
        Self {
            spec,
            weights,
            bn: BatchNorm::new(spec.out_channels),
        }
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BnCache<T>)> {
        let y = conv3d_forward(x, &self.weights, None, &self.spec)?;
        self.bn.forward(&y, mode)
    }

    fn backward(
        &self,
        x: &Tensor<T>,
        cache: &BnCache<T>,
        upstream: &Tensor<T>,
        input_grad: bool,
        names: (&str, &str),
        grads: &mut NamedTensors<T>,
    ) -> Result<Option<Tensor<T>>> {
        let bn = self.bn.backward(cache, upstream)?;
        let conv = conv3d_backward_with(&bn.input, x, &self.weights, &self.spec, input_grad)?;
        let (conv_name, bn_name) = names;
        add_grad(grads, format!("{conv_name}.w"), conv.weights)?;
        add_grad(grads, format!("{bn_name}.gamma"), bn.gamma)?;
        add_grad(grads, format!("{bn_name}.beta"), bn.beta)?;
        Ok(conv.input)
    }

    fn visit(&self, conv_name: &str, bn_name: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        f(&format!("{conv_name}.w"), ParamKind::Trainable, &self.weights);
        visit_bn(&self.bn, bn_name, f);
    }

    fn visit_mut(&mut self, conv_name: &str, bn_name: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        f(&format!("{conv_name}.w"), ParamKind::Trainable, &mut self.weights);
        visit_bn_mut(&mut self.bn, bn_name, f);
    }

    fn cast<U: Element>(&self) -> ConvBn<U> {
        ConvBn {
            spec: self.spec,
            weights: self.weights.cast(),
            bn: self.bn.cast(),
        }
    }
}

pub(crate) fn visit_bn<T: Element>(bn: &BatchNorm<T>, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
    f(&format!("{prefix}.gamma"), ParamKind::Trainable, &bn.gamma);
    f(&format!("{prefix}.beta"), ParamKind::Trainable, &bn.beta);
    f(&format!("{prefix}.rmean"), ParamKind::Buffer, &bn.running_mean);
    f(&format!("{prefix}.rvar"), ParamKind::Buffer, &bn.running_var);
}

pub(crate) fn visit_bn_mut<T: Element>(
    bn: &mut BatchNorm<T>,
    prefix: &str,
    f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>),
) {
    f(&format!("{prefix}.gamma"), ParamKind::Trainable, &mut bn.gamma);
    f(&format!("{prefix}.beta"), ParamKind::Trainable, &mut bn.beta);
    f(&format!("{prefix}.rmean"), ParamKind::Buffer, &mut bn.running_mean);
    f(&format!("{prefix}.rvar"), ParamKind::Buffer, &mut bn.running_var);
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock<T: Element = f32> {
    pub name: String,
    pub conv1: ConvBn<T>,
    pub conv2: ConvBn<T>,
    pub proj: Option<ConvBn<T>>,
}

struct BlockCache<T: Element> {
    bn1: BnCache<T>,
    mid: Tensor<T>,
    bn2: BnCache<T>,
    proj: Option<BnCache<T>>,
    out: Tensor<T>,
}

impl<T: Element> BasicBlock<T> {
    fn new(name: String, in_ch: usize, out_ch: usize, stride: usize, seed: u64) -> Self {
        let conv1 = ConvBn::new(ConvSpec::new(in_ch, out_ch, 3, stride, 1), seed, &format!("{name}.conv1.w"));
        let conv2 = ConvBn::new(ConvSpec::new(out_ch, out_ch, 3, 1, 1), seed, &format!("{name}.conv2.w"));
        let proj = (stride != 1 || in_ch != out_ch)
            .then(|| ConvBn::new(ConvSpec::new(in_ch, out_ch, 1, stride, 0), seed, &format!("{name}.proj.w")));
        Self {
            name,
            conv1,
            conv2,
            proj,
        }
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<BlockCache<T>> {
        let (a, bn1) = self.conv1.forward(x, mode)?;
        let mid = relu(&a);
        drop(a);
        let (mut b, bn2) = self.conv2.forward(&mid, mode)?;
        let proj = match &self.proj {
            Some(p) => {
                let (s, cache) = p.forward(x, mode)?;
                b.add_assign(&s)?;
                Some(cache)
            }
            None => {
                b.add_assign(x)?;
                None
            }
        };
        let out = relu(&b);
        Ok(BlockCache {
            bn1,
            mid,
            bn2,
            proj,
            out,
        })
    }

    fn backward(
        &self,
        x: &Tensor<T>,
        cache: &BlockCache<T>,
        upstream: &Tensor<T>,
        grads: &mut NamedTensors<T>,
    ) -> Result<Tensor<T>> {
        let n = &self.name;
        let d = relu_backward(&cache.out, upstream)?;
        let dmid = self
            .conv2
            .backward(&cache.mid, &cache.bn2, &d, true, (&format!("{n}.conv2"), &format!("{n}.bn2")), grads)?
            .expect("input gradient requested");
        let da = relu_backward(&cache.mid, &dmid)?;
        let mut dx = self
            .conv1
            .backward(x, &cache.bn1, &da, true, (&format!("{n}.conv1"), &format!("{n}.bn1")), grads)?
            .expect("input gradient requested");
        match (&self.proj, &cache.proj) {
            (Some(p), Some(pc)) => {
                let ds = p
                    .backward(x, pc, &d, true, (&format!("{n}.proj"), &format!("{n}.proj.bn")), grads)?
                    .expect("input gradient requested");
                dx.add_assign(&ds)?;
            }
            _ => dx.add_assign(&d)?,
        }
        Ok(dx)
    }

    fn commit(&mut self, cache: &BlockCache<T>) {
        self.conv1.bn.commit(&cache.bn1);
        self.conv2.bn.commit(&cache.bn2);
        if let (Some(p), Some(pc)) = (&mut self.proj, &cache.proj) {
            p.bn.commit(pc);
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        let n = &self.name;
        self.conv1.visit(&format!("{n}.conv1"), &format!("{n}.bn1"), f);
        self.conv2.visit(&format!("{n}.conv2"), &format!("{n}.bn2"), f);
        if let Some(p) = &self.proj {
            p.visit(&format!("{n}.proj"), &format!("{n}.proj.bn"), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        let n = self.name.clone();
        self.conv1.visit_mut(&format!("{n}.conv1"), &format!("{n}.bn1"), f);
        self.conv2.visit_mut(&format!("{n}.conv2"), &format!("{n}.bn2"), f);
        if let Some(p) = &mut self.proj {
            p.visit_mut(&format!("{n}.proj"), &format!("{n}.proj.bn"), f);
        }
    }

    fn cast<U: Element>(&self) -> BasicBlock<U> {
        BasicBlock {
            name: self.name.clone(),
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            proj: self.proj.as_ref().map(|p| p.cast()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T: Element = f32> {
    config: BackboneConfig,
    pub stem: ConvBn<T>,
    /// `stages[s][b]` is block `b + 1` of stage `s + 1`.
    pub stages: Vec<Vec<BasicBlock<T>>>,
}

/// Saved activations of one training-mode forward pass.
pub struct BackboneCache<T: Element> {
    tap: TapPoint,
    stem: BnCache<T>,
    stem_out: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
}

impl<T: Element> BackboneCache<T> {
    /// Every post-ReLU activation, in forward order.
    pub fn visit_activations(&self, f: &mut dyn FnMut(&Tensor<T>)) {
        f(&self.stem_out);
        for b in &self.blocks {
            f(&b.mid);
            f(&b.out);
        }
    }

    fn last_activation(&self) -> &Tensor<T> {
        self.blocks.last().map(|b| &b.out).unwrap_or(&self.stem_out)
    }
}

pub fn build_backbone<T: Element>(config: &BackboneConfig, init_seed: u64) -> Result<Backbone<T>> {
    config.validate()?;
    let stem = ConvBn::new(ConvSpec::new(1, config.stem_channels, 3, 1, 1), init_seed, "stem.conv.w");
    let channels = config.stage_channels();
    let mut in_ch = config.stem_channels;
    let mut stages = Vec::with_capacity(4);
    for s in 0..4 {
        let blocks = (0..config.stage_depths[s])
            .map(|b| {
                let stride = if b == 0 { config.stage_strides[s] } else { 1 };
                let block = BasicBlock::new(
                    format!("stage{}.block{}", s + 1, b + 1),
                    in_ch,
                    channels[s],
                    stride,
                    init_seed,
                );
                in_ch = channels[s];
                block
            })
            .collect();
        stages.push(blocks);
    }
    Ok(Backbone {
        config: config.clone(),
        stem,
        stages,
    })
}

impl<T: Element> Backbone<T> {
    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.ndim() != 5 {
            return Err(Error::shape("backbone_forward", "input rank", "5 (N,1,D,H,W)", input.ndim()));
        }
        if input.shape()[1] != 1 {
            return Err(Error::shape("backbone_forward", "input channel axis", 1, input.shape()[1]));
        }
        let s = input.shape();
        if s[2] != s[3] || s[3] != s[4] {
            return Err(Error::shape(
                "backbone_forward",
                "spatial extents",
                "a cube",
                format!("{:?}", &s[2..]),
            ));
        }
        tap_shape(&self.config, TapPoint::Block4, s[2]).map(|_| ())
    }

    /// Features at `tap`, `[N, C, D, H, W]` or `[N, C]` for [`TapPoint::AvgPool`].
    /// Intermediate activations are released as soon as they are consumed.
    pub fn forward(&self, input: &Tensor<T>, tap: TapPoint, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let (a, _) = self.stem.forward(input, mode)?;
        let mut x = relu(&a);
        drop(a);
        for stage in &self.stages[..tap.stages()] {
            for block in stage {
                x = block.forward(&x, mode)?.out;
            }
        }
        match tap {
            TapPoint::AvgPool => pool3d(&x, PoolMode::GlobalAvg, 1, 1),
            _ => Ok(x),
        }
    }

    /// As [`Backbone::forward`], keeping what [`Backbone::backward`] needs.
    pub fn forward_train(&self, input: &Tensor<T>, tap: TapPoint, mode: Mode) -> Result<(Tensor<T>, BackboneCache<T>)> {
        self.check_input(input)?;
        let (a, stem) = self.stem.forward(input, mode)?;
        let stem_out = relu(&a);
        drop(a);
        let mut cache = BackboneCache {
            tap,
            stem,
            stem_out,
            blocks: Vec::new(),
        };
        for stage in &self.stages[..tap.stages()] {
            for block in stage {
                let bc = block.forward(cache.last_activation(), mode)?;
                cache.blocks.push(bc);
            }
        }
        let out = match tap {
            TapPoint::AvgPool => pool3d(cache.last_activation(), PoolMode::GlobalAvg, 1, 1)?,
            _ => cache.last_activation().clone(),
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to `input` when `input_grad` is set.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        cache: &BackboneCache<T>,
        upstream: &Tensor<T>,
        input_grad: bool,
        grads: &mut NamedTensors<T>,
    ) -> Result<Option<Tensor<T>>> {
        let mut d = match cache.tap {
            TapPoint::AvgPool => pool3d_backward(cache.last_activation(), upstream, PoolMode::GlobalAvg, 1, 1)?,
            _ => upstream.clone(),
        };
        let blocks: Vec<&BasicBlock<T>> = self.stages[..cache.tap.stages()].iter().flatten().collect();
        for (i, (block, bc)) in blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let x = if i == 0 { &cache.stem_out } else { &cache.blocks[i - 1].out };
            d = block.backward(x, bc, &d, grads)?;
        }
        let d = relu_backward(&cache.stem_out, &d)?;
        self.stem
            .backward(input, &cache.stem, &d, input_grad, ("stem.conv", "stem.bn"), grads)
    }

    /// Folds the batch statistics of a train-mode cache into the running averages.
    pub fn commit(&mut self, cache: &BackboneCache<T>) {
        self.stem.bn.commit(&cache.stem);
        let blocks = self.stages.iter_mut().flatten();
        for (block, bc) in blocks.zip(&cache.blocks) {
            block.commit(bc);
        }
    }

    pub fn cast<U: Element>(&self) -> Backbone<U> {
        Backbone {
            config: self.config.clone(),
            stem: self.stem.cast(),
            stages: self.stages.iter().map(|s| s.iter().map(|b| b.cast()).collect()).collect(),
        }
    }
}

impl<T: Element> Parameters<T> for Backbone<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.stem.visit("stem.conv", "stem.bn", f);
        for block in self.stages.iter().flatten() {
            block.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.stem.visit_mut("stem.conv", "stem.bn", f);
        for block in self.stages.iter_mut().flatten() {
            block.visit_mut(f);
        }
    }
}
