//! Two-stream classifier: one shared backbone applied to the T1 and T2
//! patches, flattened features concatenated as `(T1, T2)`, then the head
//! `FC(hidden) → BN → ReLU → dropout → FC(1)`.
//!
//! The single-stream variant feeds one patch through the same backbone and a
//! head of half the input width.

use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbone::{build_backbone, tap_shape, visit_bn, visit_bn_mut, Backbone, BackboneCache, BackboneConfig, TapPoint};
use crate::error::{Error, Result};
use crate::layers::{dropout, dropout_backward, relu, relu_backward, sigmoid, BatchNorm, BnCache, DropoutSpec, Mode};
use crate::ops::{linear, linear_backward};
use crate::params::{add_grad, NamedTensors, ParamKind, Parameters};
use crate::rng::keyed_rng;
use crate::tensor::{Element, Tensor};

pub const PATCH_EXTENT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamMode {
    TwoStream,
    SingleStream,
}

impl StreamMode {
    pub fn streams(self) -> usize {
        match self {
            StreamMode::TwoStream => 2,
            StreamMode::SingleStream => 1,
        }
    }
}

/// Which scans a model looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    T1,
    T2,
    T1T2,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::T1, Modality::T2, Modality::T1T2];

    pub fn stream_mode(self) -> StreamMode {
        match self {
            Modality::T1T2 => StreamMode::TwoStream,
            _ => StreamMode::SingleStream,
        }
    }

    pub fn patches<'a, T: Element>(self, t1: &'a Tensor<T>, t2: &'a Tensor<T>) -> Patches<'a, T> {
        match self {
            Modality::T1 => Patches::Single(t1),
            Modality::T2 => Patches::Single(t2),
            Modality::T1T2 => Patches::Pair(t1, t2),
        }
    }

    /// Row label used in result tables.
    pub fn model_name(self) -> &'static str {
        match self {
            Modality::T1 => "3DCNN-T1",
            Modality::T2 => "3DCNN-T2",
            Modality::T1T2 => "TS-3DCNN-T1T2",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::T1 => "t1",
            Modality::T2 => "t2",
            Modality::T1T2 => "t1t2",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(Modality::T1),
            "t2" => Ok(Modality::T2),
            "t1t2" => Ok(Modality::T1T2),
            _ => Err(Error::invalid("modality", format!("{s:?} is not one of t1, t2, t1t2"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub input_width: usize,
}

impl HeadConfig {
    /// Default head (64 hidden units, dropout 0.3) sized for `tap`.
    pub fn for_tap(backbone: &BackboneConfig, tap: TapPoint, mode: StreamMode, patch_extent: usize) -> Result<Self> {
        let per_stream: usize = tap_shape(backbone, tap, patch_extent)?.iter().product();
        Ok(Self {
            hidden_units: 64,
            dropout_rate: 0.3,
            input_width: mode.streams() * per_stream,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head<T: Element = f32> {
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    pub bn: BatchNorm<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
    pub dropout_rate: f64,
}

fn init_normal<T: Element>(shape: &[usize], std: f64, seed: u64, name: &str) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut rng = keyed_rng(seed, name, 0);
    Tensor::from_fn(shape, |_| T::from_f64(normal.sample(&mut rng)))
}

impl<T: Element> Head<T> {
    fn new(cfg: &HeadConfig, seed: u64) -> Self {
        let (w, h) = (cfg.input_width, cfg.hidden_units);
        Self {
            fc1_w: init_normal(&[h, w], (2.0 / w as f64).sqrt(), seed, "head.fc1.w"),
            fc1_b: Tensor::zeros(&[h]),
            bn: BatchNorm::new(h),
            fc2_w: init_normal(&[1, h], (1.0 / h as f64).sqrt(), seed, "head.fc2.w"),
            fc2_b: Tensor::zeros(&[1]),
            dropout_rate: cfg.dropout_rate,
        }
    }

    fn cast<U: Element>(&self) -> Head<U> {
        Head {
            fc1_w: self.fc1_w.cast(),
            fc1_b: self.fc1_b.cast(),
            bn: self.bn.cast(),
            fc2_w: self.fc2_w.cast(),
            fc2_b: self.fc2_b.cast(),
            dropout_rate: self.dropout_rate,
        }
    }
}

/// How one forward pass runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pass {
    pub mode: Mode,
    /// Run the backbone in eval mode and skip its backward pass.
    pub freeze_backbone: bool,
    pub dropout_seed: u64,
    pub dropout_stream: u64,
}

impl Pass {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            freeze_backbone: false,
            dropout_seed: 0,
            dropout_stream: 0,
        }
    }

    pub fn train(dropout_seed: u64, dropout_stream: u64) -> Self {
        Self {
            mode: Mode::Train,
            freeze_backbone: false,
            dropout_seed,
            dropout_stream,
        }
    }

    pub fn with_frozen_backbone(mut self, frozen: bool) -> Self {
        self.freeze_backbone = frozen;
        self
    }

    fn backbone_mode(&self) -> Mode {
        if self.freeze_backbone {
            Mode::Eval
        } else {
            self.mode
        }
    }
}

/// Model input: a `(T1, T2)` pair or a single time point, each `[N, 1, D, H, W]`.
#[derive(Debug, Clone, Copy)]
pub enum Patches<'a, T: Element> {
    Pair(&'a Tensor<T>, &'a Tensor<T>),
    Single(&'a Tensor<T>),
}

impl<'a, T: Element> Patches<'a, T> {
    fn streams(&self) -> Vec<&'a Tensor<T>> {
        match *self {
            Patches::Pair(a, b) => vec![a, b],
            Patches::Single(a) => vec![a],
        }
    }

    pub fn batch_size(&self) -> usize {
        self.streams()[0].shape().first().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamModel<T: Element = f32> {
    pub backbone: Backbone<T>,
    pub head: Head<T>,
    tap: TapPoint,
    mode: StreamMode,
    head_config: HeadConfig,
    patch_extent: usize,
}

/// Saved activations of one training-mode forward pass.
pub struct ModelCache<T: Element> {
    streams: Vec<Option<BackboneCache<T>>>,
    embedding: Tensor<T>,
    bn: BnCache<T>,
    hidden: Tensor<T>,
    mask: Option<Vec<T>>,
    dropped: Tensor<T>,
}

impl<T: Element> ModelCache<T> {
    /// Concatenated features fed to the head, `[N, input_width]`.
    pub fn embedding(&self) -> &Tensor<T> {
        &self.embedding
    }
}

pub fn build_model<T: Element>(
    backbone_cfg: &BackboneConfig,
    tap: TapPoint,
    head_cfg: &HeadConfig,
    mode: StreamMode,
    patch_extent: usize,
    seed: u64,
) -> Result<TwoStreamModel<T>> {
    let expected = HeadConfig::for_tap(backbone_cfg, tap, mode, patch_extent)?.input_width;
    if head_cfg.input_width != expected {
        return Err(Error::invalid(
            "build_model",
            format!(
                "head input width {} does not match {} stream(s) of {tap} features ({expected})",
                head_cfg.input_width,
                mode.streams()
            ),
        ));
    }
    if head_cfg.hidden_units == 0 {
        return Err(Error::invalid("build_model", "hidden_units must be positive"));
    }
    if !(0.0..1.0).contains(&head_cfg.dropout_rate) {
        return Err(Error::invalid(
            "build_model",
            format!("dropout rate {} outside [0, 1)", head_cfg.dropout_rate),
        ));
    }
    Ok(TwoStreamModel {
        backbone: build_backbone(backbone_cfg, seed)?,
        head: Head::new(head_cfg, seed),
        tap,
        mode,
        head_config: head_cfg.clone(),
        patch_extent,
    })
}

impl<T: Element> TwoStreamModel<T> {
    pub fn tap(&self) -> TapPoint {
        self.tap
    }

    pub fn stream_mode(&self) -> StreamMode {
        self.mode
    }

    pub fn head_config(&self) -> &HeadConfig {
        &self.head_config
    }

    pub fn patch_extent(&self) -> usize {
        self.patch_extent
    }

    pub fn cast<U: Element>(&self) -> TwoStreamModel<U> {
        TwoStreamModel {
            backbone: self.backbone.cast(),
            head: self.head.cast(),
            tap: self.tap,
            mode: self.mode,
            head_config: self.head_config.clone(),
            patch_extent: self.patch_extent,
        }
    }

    fn check_patches(&self, patches: &Patches<'_, T>) -> Result<()> {
        match (patches, self.mode) {
            (Patches::Pair(a, b), StreamMode::TwoStream) => {
                if a.shape() != b.shape() {
                    return Err(Error::shape(
                        "forward_pair",
                        "T2 batch",
                        format!("{:?}", a.shape()),
                        format!("{:?}", b.shape()),
                    ));
                }
            }
            (Patches::Single(_), StreamMode::SingleStream) => {}
            (Patches::Pair(..), StreamMode::SingleStream) => {
                return Err(Error::invalid("forward_pair", "model is in single-stream mode"));
            }
            (Patches::Single(_), StreamMode::TwoStream) => {
                return Err(Error::invalid("forward_single", "model is in two-stream mode"));
            }
        }
        let x = patches.streams()[0];
        let e = self.patch_extent;
        if x.ndim() != 5 || x.shape()[2..] != [e, e, e] {
            return Err(Error::shape(
                "model forward",
                "patch",
                format!("[N, 1, {e}, {e}, {e}]"),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    /// Row-wise concatenation of per-stream features, each flattened per sample.
    pub fn concat_features(features: &[Tensor<T>]) -> Result<Tensor<T>> {
        let n = features[0].shape()[0];
        let widths: Vec<usize> = features.iter().map(|f| f.len() / n).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for row in 0..n {
            for (f, &w) in features.iter().zip(&widths) {
                data.extend_from_slice(&f.data()[row * w..(row + 1) * w]);
            }
        }
        Tensor::new(vec![n, total], data)
    }

    /// Concatenated flattened features `[N, input_width]`, T1 first.
    pub fn embeddings(&self, patches: Patches<'_, T>, pass: Pass) -> Result<Tensor<T>> {
        self.check_patches(&patches)?;
        let features = patches
            .streams()
            .into_iter()
            .map(|x| self.backbone.forward(x, self.tap, pass.backbone_mode()))
            .collect::<Result<Vec<_>>>()?;
        Self::concat_features(&features)
    }

    fn head_forward(
        &self,
        embedding: &Tensor<T>,
        pass: Pass,
    ) -> Result<(Tensor<T>, BnCache<T>, Tensor<T>, Option<Vec<T>>, Tensor<T>)> {
        let h = &self.head;
        let a = linear(embedding, &h.fc1_w, Some(&h.fc1_b))?;
        let (b, bn) = h.bn.forward(&a, pass.mode)?;
        let hidden = relu(&b);
        let spec = DropoutSpec {
            rate: h.dropout_rate,
            mode: pass.mode,
            seed: pass.dropout_seed,
            stream: pass.dropout_stream,
        };
        let (dropped, mask) = dropout(&hidden, &spec)?;
        let out = linear(&dropped, &h.fc2_w, Some(&h.fc2_b))?;
        let n = out.len();
        Ok((out.reshape(&[n])?, bn, hidden, mask, dropped))
    }

    /// Head output for a precomputed embedding `[N, input_width]`.
    pub fn head_logits(&self, embedding: &Tensor<T>, pass: Pass) -> Result<Tensor<T>> {
        Ok(self.head_forward(embedding, pass)?.0)
    }

    /// Post-ReLU hidden activations of the head.
    pub fn head_activations(&self, embedding: &Tensor<T>, pass: Pass) -> Result<Tensor<T>> {
        Ok(self.head_forward(embedding, pass)?.2)
    }

    /// Head parameter gradients and the embedding gradient.
    pub fn head_gradients(
        &self,
        embedding: &Tensor<T>,
        pass: Pass,
        upstream: &Tensor<T>,
    ) -> Result<(NamedTensors<T>, Tensor<T>)> {
        let (_, bn, hidden, mask, dropped) = self.head_forward(embedding, pass)?;
        let cache = ModelCache {
            streams: Vec::new(),
            embedding: embedding.clone(),
            bn,
            hidden,
            mask,
            dropped,
        };
        let mut grads = NamedTensors::new();
        let dz = self.head_backward(&cache, upstream, &mut grads)?;
        Ok((grads, dz))
    }

    /// Logits `[N]` without keeping activations.
    pub fn logits(&self, patches: Patches<'_, T>, pass: Pass) -> Result<Tensor<T>> {
        let z = self.embeddings(patches, pass)?;
        Ok(self.head_forward(&z, pass)?.0)
    }

    pub fn forward_pair(&self, t1: &Tensor<T>, t2: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.logits(Patches::Pair(t1, t2), Pass { mode, ..Pass::eval() })
    }

    pub fn forward_single(&self, patch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.logits(Patches::Single(patch), Pass { mode, ..Pass::eval() })
    }

    pub fn forward_train(&self, patches: Patches<'_, T>, pass: Pass) -> Result<(Tensor<T>, ModelCache<T>)> {
        self.check_patches(&patches)?;
        let mut features = Vec::new();
        let mut streams = Vec::new();
        for x in patches.streams() {
            if pass.freeze_backbone {
                features.push(self.backbone.forward(x, self.tap, Mode::Eval)?);
                streams.push(None);
            } else {
                let (f, c) = self.backbone.forward_train(x, self.tap, pass.mode)?;
                features.push(f);
                streams.push(Some(c));
            }
        }
        let embedding = Self::concat_features(&features)?;
        drop(features);
        let (logits, bn, hidden, mask, dropped) = self.head_forward(&embedding, pass)?;
        Ok((
            logits,
            ModelCache {
                streams,
                embedding,
                bn,
                hidden,
                mask,
                dropped,
            },
        ))
    }

    /// Gradients of every trainable parameter touched by the pass, given
    /// `d loss / d logits`. Shared backbone gradients are summed over streams.
    pub fn backward(&self, patches: Patches<'_, T>, cache: &ModelCache<T>, upstream: &Tensor<T>) -> Result<NamedTensors<T>> {
        let mut grads = NamedTensors::new();
        let embedding_grad = self.head_backward(cache, upstream, &mut grads)?;
        let n = embedding_grad.shape()[0];
        let width = embedding_grad.shape()[1] / cache.streams.len();
        for (s, (x, sc)) in patches.streams().into_iter().zip(&cache.streams).enumerate() {
            let Some(sc) = sc else { continue };
            let mut part = Vec::with_capacity(n * width);
            for row in embedding_grad.data().chunks_exact(width * cache.streams.len()) {
                part.extend_from_slice(&row[s * width..(s + 1) * width]);
            }
            let mut shape = vec![n];
            shape.extend(tap_shape(self.backbone.config(), self.tap, self.patch_extent)?);
            let d = Tensor::new(shape, part)?;
            self.backbone.backward(x, sc, &d, false, &mut grads)?;
        }
        Ok(grads)
    }

    fn head_backward(&self, cache: &ModelCache<T>, upstream: &Tensor<T>, grads: &mut NamedTensors<T>) -> Result<Tensor<T>> {
        let h = &self.head;
        let n = cache.dropped.shape()[0];
        if upstream.shape() != [n] {
            return Err(Error::shape("model backward", "upstream", format!("[{n}]"), format!("{:?}", upstream.shape())));
        }
        let g2 = linear_backward(&upstream.clone().reshape(&[n, 1])?, &cache.dropped, &h.fc2_w)?;
        add_grad(grads, "head.fc2.w".into(), g2.weights)?;
        add_grad(grads, "head.fc2.b".into(), g2.bias)?;
        let d = dropout_backward(cache.mask.as_deref(), &g2.input);
        let d = relu_backward(&cache.hidden, &d)?;
        let bn = h.bn.backward(&cache.bn, &d)?;
        add_grad(grads, "head.bn.gamma".into(), bn.gamma)?;
        add_grad(grads, "head.bn.beta".into(), bn.beta)?;
        let g1 = linear_backward(&bn.input, &cache.embedding, &h.fc1_w)?;
        add_grad(grads, "head.fc1.w".into(), g1.weights)?;
        add_grad(grads, "head.fc1.b".into(), g1.bias)?;
        Ok(g1.input)
    }

    /// Folds train-mode batch statistics into the running averages, streams
    /// in `(T1, T2)` order.
    pub fn commit(&mut self, cache: &ModelCache<T>) {
        for sc in cache.streams.iter().flatten() {
            self.backbone.commit(sc);
        }
        self.head.bn.commit(&cache.bn);
    }
}

impl<T: Element> ModelCache<T> {
    /// Hash of every ReLU on/off decision in the pass.
    pub fn kink_signature(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        let mut mix = |t: &Tensor<T>| {
            for v in t.data() {
                (*v > T::ZERO).hash(&mut hasher);
            }
        };
        for sc in self.streams.iter().flatten() {
            sc.visit_activations(&mut mix);
        }
        mix(&self.hidden);
        hasher.finish()
    }
}

impl<T: Element> Parameters<T> for TwoStreamModel<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.backbone.visit(f);
        let h = &self.head;
        f("head.fc1.w", ParamKind::Trainable, &h.fc1_w);
        f("head.fc1.b", ParamKind::Trainable, &h.fc1_b);
        visit_bn(&h.bn, "head.bn", f);
        f("head.fc2.w", ParamKind::Trainable, &h.fc2_w);
        f("head.fc2.b", ParamKind::Trainable, &h.fc2_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.backbone.visit_mut(f);
        let h = &mut self.head;
        f("head.fc1.w", ParamKind::Trainable, &mut h.fc1_w);
        f("head.fc1.b", ParamKind::Trainable, &mut h.fc1_b);
        visit_bn_mut(&mut h.bn, "head.bn", f);
        f("head.fc2.w", ParamKind::Trainable, &mut h.fc2_w);
        f("head.fc2.b", ParamKind::Trainable, &mut h.fc2_b);
    }
}

/// Malignancy probabilities and labels (1 = malignant iff `p >= threshold`).
pub fn classify<T: Element>(logits: &Tensor<T>, threshold: f64) -> Result<(Vec<f64>, Vec<u8>)> {
    if !logits.all_finite() {
        return Err(Error::NonFinite {
            context: "classify: logits".into(),
        });
    }
    let probs: Vec<f64> = logits.data().iter().map(|z| sigmoid(z.to_f64())).collect();
    let labels = probs.iter().map(|&p| u8::from(p >= threshold)).collect();
    Ok((probs, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(tap: TapPoint, mode: StreamMode, extent: usize) -> TwoStreamModel<f64> {
        let cfg = BackboneConfig::tiny();
        let head = HeadConfig::for_tap(&cfg, tap, mode, extent).unwrap();
        build_model(&cfg, tap, &head, mode, extent, 3).unwrap()
    }

    #[test]
    fn head_widths() {
        let cfg = BackboneConfig::tiny();
        let w = |tap, mode| HeadConfig::for_tap(&cfg, tap, mode, 32).unwrap().input_width;
        assert_eq!(w(TapPoint::Block2, StreamMode::TwoStream), 131_072);
        assert_eq!(w(TapPoint::AvgPool, StreamMode::SingleStream), 64);
    }

    #[test]
    fn inconsistent_head_width_is_rejected() {
        let cfg = BackboneConfig::tiny();
        let mut head = HeadConfig::for_tap(&cfg, TapPoint::AvgPool, StreamMode::TwoStream, 32).unwrap();
        head.input_width = 64;
        assert!(build_model::<f32>(&cfg, TapPoint::AvgPool, &head, StreamMode::TwoStream, 32, 0).is_err());
    }

    #[test]
    fn head_parameter_count() {
        let m = tiny(TapPoint::AvgPool, StreamMode::TwoStream, 8);
        let mut head = 0;
        m.visit(&mut |name, _, t| {
            if name.starts_with("head.") {
                head += t.len();
            }
        });
        assert_eq!(head, 128 * 64 + 64 + 2 * 64 + 2 * 64 + 64 + 1);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let pair = tiny(TapPoint::AvgPool, StreamMode::TwoStream, 8);
        let single = tiny(TapPoint::AvgPool, StreamMode::SingleStream, 8);
        let x = Tensor::zeros(&[2, 1, 8, 8, 8]);
        assert!(pair.forward_single(&x, Mode::Eval).is_err());
        assert!(single.forward_pair(&x, &x, Mode::Eval).is_err());
        let short = Tensor::zeros(&[1, 1, 8, 8, 8]);
        assert!(pair.forward_pair(&x, &short, Mode::Eval).is_err());
    }

    #[test]
    fn identical_patches_give_identical_halves_and_swap_swaps_halves() {
        let m = tiny(TapPoint::Block2, StreamMode::TwoStream, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Tensor::<f64>::randn(&[3, 1, 8, 8, 8], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[3, 1, 8, 8, 8], 1.0, &mut rng);
        for pass in [Pass::eval(), Pass::train(1, 0)] {
            let z = m.embeddings(Patches::Pair(&a, &a), pass).unwrap();
            let w = z.shape()[1] / 2;
            for row in z.data().chunks_exact(2 * w) {
                assert_eq!(row[..w], row[w..]);
            }
            let ab = m.embeddings(Patches::Pair(&a, &b), pass).unwrap();
            let ba = m.embeddings(Patches::Pair(&b, &a), pass).unwrap();
            for (r1, r2) in ab.data().chunks_exact(2 * w).zip(ba.data().chunks_exact(2 * w)) {
                assert_eq!(r1[..w], r2[w..]);
                assert_eq!(r1[w..], r2[..w]);
            }
        }
    }

    #[test]
    fn classify_thresholds_at_one_half() {
        let z = Tensor::<f64>::new(vec![3], vec![0.0, 2.0, -3.0]).unwrap();
        let (p, l) = classify(&z, 0.5).unwrap();
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 0.880797).abs() < 1e-6);
        assert!((p[2] - 0.047426).abs() < 1e-6);
        assert_eq!(l, vec![1, 1, 0]);
        let bad = Tensor::<f64>::new(vec![1], vec![f64::NAN]).unwrap();
        assert!(classify(&bad, 0.5).is_err());
    }
}
