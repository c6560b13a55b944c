//! 3D convolution with cubic kernels and zero padding.
//!
//! When output rows are at least `VW` wide, the forward pass and the weight
//! gradient run a direct kernel over a width-phase split of each padded
//! sample, `VW` outputs and `FB` filters at a time, and a unit-stride input
//! gradient is the forward convolution of the upstream gradient with flipped
//! filters. Narrower layers and the remaining input gradients lower each
//! sample to columns (`im2col`/`col2im`) and use [`gemm`]. Samples are processed in parallel and per-sample
//! weight gradients are reduced in sample order, so the result is independent
//! of the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm::{gemm, Mat};
use crate::tensor::{Element, Tensor};

/// Upper bound on the number of elements in one column buffer.
const COLS_BUDGET: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            has_bias: false,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.has_bias = true;
        self
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let k = self.kernel;
        [self.out_channels, self.in_channels, k, k, k]
    }

    /// `floor((extent + 2p - k) / s) + 1`, or an error naming `axis` when the
    /// padded extent is smaller than the kernel.
    pub fn output_extent(&self, extent: usize, axis: &str) -> Result<usize> {
        let padded = extent + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::shape(
                "conv3d",
                axis,
                format!("padded extent >= kernel {}", self.kernel),
                padded,
            ));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::invalid(
                "conv3d",
                format!("channels, kernel and stride must be positive: {self:?}"),
            ));
        }
        Ok(())
    }
}

struct Geometry {
    n: usize,
    c: usize,
    f: usize,
    k: usize,
    s: usize,
    p: usize,
    input: [usize; 3],
    padded: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn kdim(&self) -> usize {
        self.c * self.k * self.k * self.k
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output[1] * self.output[2]
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    /// Rows at least one vector wide go through the direct kernels.
    fn direct(&self) -> bool {
        self.output[2] >= VW
    }

    fn slab_depth(&self) -> usize {
        (COLS_BUDGET / (self.kdim() * self.out_plane()).max(1)).clamp(1, self.output[0])
    }
}

const AXES: [&str; 3] = ["depth axis", "height axis", "width axis"];

fn geometry<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let shape = input.shape();
    if shape.len() != 5 {
        return Err(Error::shape("conv3d", "input rank", "5 (N,C,D,H,W)", shape.len()));
    }
    if shape[1] != spec.in_channels {
        return Err(Error::shape("conv3d", "input channel axis", spec.in_channels, shape[1]));
    }
    let wshape = spec.weight_shape();
    if weights.shape() != wshape {
        return Err(Error::shape(
            "conv3d",
            "weights",
            format!("{wshape:?}"),
            format!("{:?}", weights.shape()),
        ));
    }
    let mut output = [0; 3];
    let mut padded = [0; 3];
    for axis in 0..3 {
        output[axis] = spec.output_extent(shape[2 + axis], AXES[axis])?;
        padded[axis] = shape[2 + axis] + 2 * spec.padding;
    }
    Ok(Geometry {
        n: shape[0],
        c: spec.in_channels,
        f: spec.out_channels,
        k: spec.kernel,
        s: spec.stride,
        p: spec.padding,
        input: [shape[2], shape[3], shape[4]],
        padded,
        output,
    })
}

fn check_bias<T: Element>(bias: Option<&Tensor<T>>, spec: &ConvSpec) -> Result<()> {
    match (bias, spec.has_bias) {
        (Some(b), true) if b.shape() == [spec.out_channels] => Ok(()),
        (Some(b), true) => Err(Error::shape(
            "conv3d",
            "bias",
            format!("[{}]", spec.out_channels),
            format!("{:?}", b.shape()),
        )),
        (None, false) => Ok(()),
        (None, true) => Err(Error::invalid("conv3d", "spec declares a bias but none was given")),
        (Some(_), false) => Err(Error::invalid("conv3d", "bias given but spec has has_bias = false")),
    }
}

/// Zero-padded copy of one sample, laid out `[C][Dp][Hp][Wp]`.
fn pad_sample<T: Element>(g: &Geometry, sample: &[T]) -> Vec<T> {
    if g.p == 0 {
        return sample.to_vec();
    }
    let [d, h, w] = g.input;
    let [dp, hp, wp] = g.padded;
    let mut out = vec![T::ZERO; g.c * dp * hp * wp];
    for c in 0..g.c {
        for z in 0..d {
            for y in 0..h {
                let src = ((c * d + z) * h + y) * w;
                let dst = ((c * dp + z + g.p) * hp + y + g.p) * wp + g.p;
                out[dst..dst + w].copy_from_slice(&sample[src..src + w]);
            }
        }
    }
    out
}

/// Fills `cols[kidx][pos]` for output depth slices `[od0, od1)`.
fn im2col<T: Element>(g: &Geometry, padded: &[T], od0: usize, od1: usize, cols: &mut [T]) {
    let [_, ho, wo] = g.output;
    let [dp, hp, wp] = g.padded;
    let npos = (od1 - od0) * ho * wo;
    let k = g.k;
    let s = g.s;
    let mut kidx = 0;
    for c in 0..g.c {
        for i in 0..k {
            for j in 0..k {
                for l in 0..k {
                    let row = &mut cols[kidx * npos..(kidx + 1) * npos];
                    let mut pos = 0;
                    for od in od0..od1 {
                        for oh in 0..ho {
                            let base = ((c * dp + od * s + i) * hp + oh * s + j) * wp + l;
                            let dst = &mut row[pos..pos + wo];
                            if s == 1 {
                                dst.copy_from_slice(&padded[base..base + wo]);
                            } else {
                                for (ow, v) in dst.iter_mut().enumerate() {
                                    *v = padded[base + ow * s];
                                }
                            }
                            pos += wo;
                        }
                    }
                    kidx += 1;
                }
            }
        }
    }
}

/// Scatter-adds `dcols` back into the padded gradient buffer.
fn col2im<T: Element>(g: &Geometry, dcols: &[T], od0: usize, od1: usize, dpadded: &mut [T]) {
    let [_, ho, wo] = g.output;
    let [dp, hp, wp] = g.padded;
    let npos = (od1 - od0) * ho * wo;
    let k = g.k;
    let s = g.s;
    let mut kidx = 0;
    for c in 0..g.c {
        for i in 0..k {
            for j in 0..k {
                for l in 0..k {
                    let row = &dcols[kidx * npos..(kidx + 1) * npos];
                    let mut pos = 0;
                    for od in od0..od1 {
                        for oh in 0..ho {
                            let base = ((c * dp + od * s + i) * hp + oh * s + j) * wp + l;
                            let src = &row[pos..pos + wo];
                            if s == 1 {
                                for (d, &v) in dpadded[base..base + wo].iter_mut().zip(src) {
                                    *d += v;
                                }
                            } else {
                                for (ow, &v) in src.iter().enumerate() {
                                    dpadded[base + ow * s] += v;
                                }
                            }
                            pos += wo;
                        }
                    }
                    kidx += 1;
                }
            }
        }
    }
}

fn crop_sample<T: Element>(g: &Geometry, padded: &[T]) -> Vec<T> {
    if g.p == 0 {
        return padded.to_vec();
    }
    let [d, h, w] = g.input;
    let [dp, hp, wp] = g.padded;
    let mut out = vec![T::ZERO; g.c * d * h * w];
    for c in 0..g.c {
        for z in 0..d {
            for y in 0..h {
                let dst = ((c * d + z) * h + y) * w;
                let src = ((c * dp + z + g.p) * hp + y + g.p) * wp + g.p;
                out[dst..dst + w].copy_from_slice(&padded[src..src + w]);
            }
        }
    }
    out
}

/// Output rows are computed `VW` positions at a time.
const VW: usize = crate::gemm::NR;
/// Output channels per register block.
const FB: usize = crate::gemm::MR;

/// Width-phase split of a padded sample: `x[r][c][z][y][m] = padded[c][z][y][m*s + r]`.
/// With stride `s`, the inputs that `VW` consecutive outputs of a row read for
/// one kernel tap are then contiguous.
struct Phased<T> {
    data: Vec<T>,
    /// `offsets[kidx]`: position of tap `(c, i, j, l)` relative to an output row base.
    offsets: Vec<usize>,
    wq: usize,
}

impl<T: Element> Phased<T> {
    fn new(g: &Geometry, padded: &[T]) -> Self {
        let [dp, hp, wp] = g.padded;
        let s = g.s;
        let wq = wp.div_ceil(s);
        let rows = g.c * dp * hp;
        let phase_len = rows * wq;
        let mut data = vec![T::ZERO; s * phase_len + wq + 2 * VW];
        for r in 0..s {
            let phase = &mut data[r * phase_len..(r + 1) * phase_len];
            for (row, dst) in phase.chunks_exact_mut(wq).enumerate() {
                let src = &padded[row * wp..(row + 1) * wp];
                for (m, d) in dst.iter_mut().enumerate() {
                    if let Some(&v) = src.get(m * s + r) {
                        *d = v;
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(g.kdim());
        for c in 0..g.c {
            for i in 0..g.k {
                for j in 0..g.k {
                    for l in 0..g.k {
                        offsets.push((l % s) * phase_len + ((c * dp + i) * hp + j) * wq + l / s);
                    }
                }
            }
        }
        Self { data, offsets, wq }
    }

    fn row_base(&self, g: &Geometry, od: usize, oh: usize) -> usize {
        (od * g.s * g.padded[1] + oh * g.s) * self.wq
    }
}

/// Weights regrouped as `[f / FB][kidx][FB]`, zero rows past the last filter.
fn pack_filters<T: Element>(g: &Geometry, weights: &[T]) -> Vec<T> {
    let kdim = g.kdim();
    let blocks = g.f.div_ceil(FB);
    let mut out = vec![T::ZERO; blocks * kdim * FB];
    for f in 0..g.f {
        let (b, r) = (f / FB, f % FB);
        for kk in 0..kdim {
            out[(b * kdim + kk) * FB + r] = weights[f * kdim + kk];
        }
    }
    out
}

fn direct_forward<T: Element>(g: &Geometry, x: &Phased<T>, filters: &[T], out: &mut [T]) {
    let kdim = g.kdim();
    let [od_n, oh_n, wo] = g.output;
    for fb in 0..g.f.div_ceil(FB) {
        let wpanel = &filters[fb * kdim * FB..(fb + 1) * kdim * FB];
        let rows = FB.min(g.f - fb * FB);
        for od in 0..od_n {
            for oh in 0..oh_n {
                let base = x.row_base(g, od, oh);
                for ow0 in (0..wo).step_by(VW) {
                    let acc = T::rows_kernel(wpanel, &x.data[base + ow0..], &x.offsets);
                    let n = VW.min(wo - ow0);
                    for (r, a) in acc.iter().enumerate().take(rows) {
                        let dst = ((fb * FB + r) * od_n + od) * oh_n * wo + oh * wo + ow0;
                        out[dst..dst + n].copy_from_slice(&a[..n]);
                    }
                }
            }
        }
    }
}

/// Upstream gradient of one sample regrouped as `[f / FB][od][oh][ow / VW][FB][VW]`,
/// zero past the end of each row and past the last filter.
fn pack_upstream<T: Element>(g: &Geometry, up: &[T]) -> Vec<T> {
    let [od_n, oh_n, wo] = g.output;
    let chunks = wo.div_ceil(VW);
    let mut out = vec![T::ZERO; g.f.div_ceil(FB) * od_n * oh_n * chunks * FB * VW];
    for f in 0..g.f {
        let (b, r) = (f / FB, f % FB);
        for od in 0..od_n {
            for oh in 0..oh_n {
                let src = &up[((f * od_n + od) * oh_n + oh) * wo..][..wo];
                for (q, part) in src.chunks(VW).enumerate() {
                    let dst = ((((b * od_n + od) * oh_n + oh) * chunks + q) * FB + r) * VW;
                    out[dst..dst + part.len()].copy_from_slice(part);
                }
            }
        }
    }
    out
}

/// Adds this sample's weight gradient into `dw` (`[f][kidx]`). One output
/// depth slice at a time, so the upstream block being read stays in cache.
fn direct_weight_grad<T: Element>(g: &Geometry, x: &Phased<T>, up: &[T], dw: &mut [T]) {
    let kdim = g.kdim();
    let [od_n, oh_n, wo] = g.output;
    let chunks = wo.div_ceil(VW);
    let slice_len = oh_n * chunks * FB * VW;
    let mut starts = Vec::with_capacity(oh_n * chunks);
    for od in 0..od_n {
        starts.clear();
        for oh in 0..oh_n {
            let base = x.row_base(g, od, oh);
            starts.extend((0..chunks).map(|q| base + q * VW));
        }
        for fb in 0..g.f.div_ceil(FB) {
            let ublock = &up[(fb * od_n + od) * slice_len..][..slice_len];
            let rows = FB.min(g.f - fb * FB);
            for (kk, &off) in x.offsets.iter().enumerate() {
                let acc = T::hadamard_kernel(ublock, &x.data[off..], &starts);
                for (r, a) in acc.iter().enumerate().take(rows) {
                    let mut sum = T::ZERO;
                    for &v in a {
                        sum += v;
                    }
                    dw[(fb * FB + r) * kdim + kk] += sum;
                }
            }
        }
    }
}

/// `out[n,f,d,h,w] = bias[f] + sum_{c,i,j,l} in_pad[n,c,d*s+i,h*s+j,w*s+l] * wt[f,c,i,j,l]`.
pub fn conv3d_forward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = geometry(input, weights, spec)?;
    check_bias(bias, spec)?;
    let in_len = g.c * g.in_volume();
    let out_len = g.f * g.out_volume();
    let filters = if g.direct() { pack_filters(&g, weights.data()) } else { Vec::new() };

    let samples: Vec<Vec<T>> = (0..g.n)
        .into_par_iter()
        .map(|n| {
            let padded = pad_sample(&g, &input.data()[n * in_len..(n + 1) * in_len]);
            let mut out = vec![T::ZERO; out_len];
            if g.direct() {
                direct_forward(&g, &Phased::new(&g, &padded), &filters, &mut out);
            } else {
                lowered_forward(&g, &padded, weights.data(), &mut out);
            }
            if let Some(b) = bias {
                for (f, chunk) in out.chunks_exact_mut(g.out_volume()).enumerate() {
                    let bf = b.data()[f];
                    chunk.iter_mut().for_each(|v| *v += bf);
                }
            }
            out
        })
        .collect();

    let mut data = Vec::with_capacity(g.n * out_len);
    for s in samples {
        data.extend_from_slice(&s);
    }
    Tensor::new(vec![g.n, g.f, g.output[0], g.output[1], g.output[2]], data)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Element> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Exact gradients of [`conv3d_forward`] for the given upstream gradient.
pub fn conv3d_backward<T: Element>(
    upstream: &Tensor<T>,
    saved_input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    conv3d_backward_with(upstream, saved_input, weights, spec, true)
}

/// As [`conv3d_backward`]; skips the input gradient when `input_grad` is
/// false (first layer of a network).
pub fn conv3d_backward_with<T: Element>(
    upstream: &Tensor<T>,
    saved_input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = geometry(saved_input, weights, spec)?;
    let expected = [g.n, g.f, g.output[0], g.output[1], g.output[2]];
    if upstream.shape() != expected {
        return Err(Error::shape(
            "conv3d_backward",
            "upstream",
            format!("{expected:?}"),
            format!("{:?}", upstream.shape()),
        ));
    }
    let in_len = g.c * g.in_volume();
    let out_len = g.f * g.out_volume();
    let kdim = g.kdim();
    // A unit-stride input gradient is itself a convolution of the upstream
    // gradient with the flipped, transposed filters.
    let transposed = g.direct() && g.s == 1 && g.p < g.k;
    let lowered_dx = input_grad && !transposed;

    let per_sample: Vec<(Vec<T>, Option<Vec<T>>)> = (0..g.n)
        .into_par_iter()
        .map(|n| {
            let up = &upstream.data()[n * out_len..(n + 1) * out_len];
            let padded = pad_sample(&g, &saved_input.data()[n * in_len..(n + 1) * in_len]);
            let mut dw = vec![T::ZERO; g.f * kdim];
            if g.direct() {
                direct_weight_grad(&g, &Phased::new(&g, &padded), &pack_upstream(&g, up), &mut dw);
            } else {
                lowered_weight_grad(&g, &padded, up, &mut dw);
            }
            let dx = lowered_dx.then(|| lowered_input_grad(&g, up, weights.data()));
            (dw, dx)
        })
        .collect();

    let mut dw = vec![T::ZERO; g.f * kdim];
    let mut dx = lowered_dx.then(|| Vec::with_capacity(g.n * in_len));
    for (w, x) in per_sample {
        for (a, b) in dw.iter_mut().zip(&w) {
            *a += *b;
        }
        if let (Some(all), Some(x)) = (dx.as_mut(), x) {
            all.extend_from_slice(&x);
        }
    }
    let dx = match (input_grad, transposed) {
        (false, _) => None,
        (true, true) => {
            let k = g.k;
            let flipped = Tensor::from_fn(&[g.c, g.f, k, k, k], |idx| {
                let (l, rest) = (idx % k, idx / k);
                let (j, rest) = (rest % k, rest / k);
                let (i, rest) = (rest % k, rest / k);
                let (f, c) = (rest % g.f, rest / g.f);
                weights.data()[(((f * g.c + c) * k + (k - 1 - i)) * k + (k - 1 - j)) * k + (k - 1 - l)]
            });
            let spec_t = ConvSpec::new(g.f, g.c, k, 1, k - 1 - g.p);
            Some(conv3d_forward(upstream, &flipped, None, &spec_t)?)
        }
        (true, false) => Some(Tensor::new(saved_input.shape().to_vec(), dx.expect("lowered input gradient"))?),
    };

    let bias = spec.has_bias.then(|| {
        let mut db = vec![0.0f64; g.f];
        for n in 0..g.n {
            for (f, acc) in db.iter_mut().enumerate() {
                let start = n * out_len + f * g.out_volume();
                *acc += upstream.data()[start..start + g.out_volume()]
                    .iter()
                    .map(|v| v.to_f64())
                    .sum::<f64>();
            }
        }
        Tensor::from_fn(&[g.f], |f| T::from_f64(db[f]))
    });

    Ok(ConvGrads {
        input: dx,
        weights: Tensor::new(weights.shape().to_vec(), dw)?,
        bias,
    })
}

fn lowered_forward<T: Element>(g: &Geometry, padded: &[T], weights: &[T], out: &mut [T]) {
    let kdim = g.kdim();
    let plane = g.out_plane();
    let slab = g.slab_depth();
    let mut cols = vec![T::ZERO; kdim * slab * plane];
    for od0 in (0..g.output[0]).step_by(slab) {
        let od1 = (od0 + slab).min(g.output[0]);
        let npos = (od1 - od0) * plane;
        im2col(g, padded, od0, od1, &mut cols);
        gemm(
            g.f,
            npos,
            kdim,
            Mat::n(weights, kdim),
            Mat::n(&cols[..kdim * npos], npos),
            &mut out[od0 * plane..],
            g.out_volume(),
            false,
        );
    }
}

fn lowered_weight_grad<T: Element>(g: &Geometry, padded: &[T], up: &[T], dw: &mut [T]) {
    let kdim = g.kdim();
    let plane = g.out_plane();
    let slab = g.slab_depth();
    let mut cols = vec![T::ZERO; kdim * slab * plane];
    for od0 in (0..g.output[0]).step_by(slab) {
        let od1 = (od0 + slab).min(g.output[0]);
        let npos = (od1 - od0) * plane;
        im2col(g, padded, od0, od1, &mut cols);
        gemm(
            g.f,
            kdim,
            npos,
            Mat::n(&up[od0 * plane..], g.out_volume()),
            Mat::t(&cols[..kdim * npos], npos),
            dw,
            kdim,
            true,
        );
    }
}

/// Input gradient of one sample through `im2col`/`col2im`.
fn lowered_input_grad<T: Element>(g: &Geometry, up: &[T], weights: &[T]) -> Vec<T> {
    let kdim = g.kdim();
    let plane = g.out_plane();
    let slab = g.slab_depth();
    let mut dpadded = vec![T::ZERO; g.c * g.padded.iter().product::<usize>()];
    let mut dcols = vec![T::ZERO; kdim * slab * plane];
    for od0 in (0..g.output[0]).step_by(slab) {
        let od1 = (od0 + slab).min(g.output[0]);
        let npos = (od1 - od0) * plane;
        gemm(
            kdim,
            npos,
            g.f,
            Mat::t(weights, kdim),
            Mat::n(&up[od0 * plane..], g.out_volume()),
            &mut dcols[..kdim * npos],
            npos,
            false,
        );
        col2im(g, &dcols[..kdim * npos], od0, od1, &mut dpadded);
    }
    crop_sample(g, &dpadded)
}

/// Direct nested-loop evaluation of the convolution, accumulating in f64.
/// Used as the independent oracle for the lowered kernel.
pub fn conv3d_reference<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<f64>> {
    let g = geometry(input, weights, spec)?;
    check_bias(bias, spec)?;
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let (k, s, p) = (g.k as isize, g.s as isize, g.p as isize);
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0f64; g.n * g.f * od * oh * ow];
    let mut idx = 0;
    for n in 0..g.n {
        for f in 0..g.f {
            for z in 0..od as isize {
                for y in 0..oh as isize {
                    for xx in 0..ow as isize {
                        let mut acc = bias.map_or(0.0, |b| b.data()[f].to_f64());
                        for c in 0..g.c {
                            for i in 0..k {
                                for j in 0..k {
                                    for l in 0..k {
                                        let (iz, iy, ix) = (z * s + i - p, y * s + j - p, xx * s + l - p);
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = (((n * g.c + c) * d + iz as usize) * h + iy as usize) * w + ix as usize;
                                        let wi = (((f * g.c + c) * g.k + i as usize) * g.k + j as usize) * g.k + l as usize;
                                        acc += x[xi].to_f64() * wt[wi].to_f64();
                                    }
                                }
                            }
                        }
                        out[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.f, od, oh, ow], out)
}
