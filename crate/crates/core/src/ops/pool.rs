//! Max, average and global-average pooling over the three spatial axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Avg,
    /// Reduces D, H and W completely; the output has shape `[N, C]`.
    GlobalAvg,
}

struct Windows {
    n: usize,
    c: usize,
    input: [usize; 3],
    output: [usize; 3],
    window: usize,
    stride: usize,
}

fn windows<T: Element>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Windows> {
    let shape = input.shape();
    if shape.len() != 5 {
        return Err(Error::shape("pool3d", "input rank", "5 (N,C,D,H,W)", shape.len()));
    }
    if window == 0 || stride == 0 {
        return Err(Error::invalid("pool3d", "window and stride must be positive"));
    }
    let mut output = [0; 3];
    for axis in 0..3 {
        let extent = shape[2 + axis];
        if window > extent {
            return Err(Error::shape(
                "pool3d",
                ["depth axis", "height axis", "width axis"][axis],
                format!("extent >= window {window}"),
                extent,
            ));
        }
        output[axis] = (extent - window) / stride + 1;
    }
    Ok(Windows {
        n: shape[0],
        c: shape[1],
        input: [shape[2], shape[3], shape[4]],
        output,
        window,
        stride,
    })
}

impl Windows {
    /// Flat offsets (within one channel volume) of the window feeding output `(z, y, x)`,
    /// in row-major scan order.
    fn offsets(&self, z: usize, y: usize, x: usize) -> impl Iterator<Item = usize> + '_ {
        let [_, h, w] = self.input;
        let win = self.window;
        let (z0, y0, x0) = (z * self.stride, y * self.stride, x * self.stride);
        (0..win).flat_map(move |i| {
            (0..win).flat_map(move |j| (0..win).map(move |l| ((z0 + i) * h + y0 + j) * w + x0 + l))
        })
    }
}

/// Pools `input`. `window` and `stride` are ignored for [`PoolMode::GlobalAvg`].
pub fn pool3d<T: Element>(input: &Tensor<T>, mode: PoolMode, window: usize, stride: usize) -> Result<Tensor<T>> {
    if mode == PoolMode::GlobalAvg {
        return global_avg(input);
    }
    let g = windows(input, window, stride)?;
    let in_vol: usize = g.input.iter().product();
    let [od, oh, ow] = g.output;
    let count = (g.window * g.window * g.window) as f64;
    let mut out = Vec::with_capacity(g.n * g.c * od * oh * ow);
    for plane in input.data().chunks_exact(in_vol) {
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let v = match mode {
                        PoolMode::Max => {
                            let mut best = plane[g.offsets(z, y, x).next().unwrap_or(0)];
                            for o in g.offsets(z, y, x) {
                                if plane[o] > best {
                                    best = plane[o];
                                }
                            }
                            best
                        }
                        PoolMode::Avg => {
                            let s: f64 = g.offsets(z, y, x).map(|o| plane[o].to_f64()).sum();
                            T::from_f64(s / count)
                        }
                        PoolMode::GlobalAvg => unreachable!(),
                    };
                    out.push(v);
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.c, od, oh, ow], out)
}

fn global_avg<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = input.shape();
    if shape.len() != 5 {
        return Err(Error::shape("pool3d", "input rank", "5 (N,C,D,H,W)", shape.len()));
    }
    let vol: usize = shape[2..].iter().product();
    let data = input
        .data()
        .chunks_exact(vol)
        .map(|p| T::from_f64(p.iter().map(|v| v.to_f64()).sum::<f64>() / vol as f64))
        .collect();
    Tensor::new(vec![shape[0], shape[1]], data)
}

/// Routes `upstream` back to the input: to the first maximal element of each
/// window for max pooling, uniformly for averages.
pub fn pool3d_backward<T: Element>(
    input: &Tensor<T>,
    upstream: &Tensor<T>,
    mode: PoolMode,
    window: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let shape = input.shape();
    if mode == PoolMode::GlobalAvg {
        if shape.len() != 5 || upstream.shape() != &shape[..2] {
            return Err(Error::shape(
                "pool3d_backward",
                "upstream",
                format!("{:?}", shape.get(..2).unwrap_or(shape)),
                format!("{:?}", upstream.shape()),
            ));
        }
        let vol: usize = shape[2..].iter().product();
        let scale = 1.0 / vol as f64;
        let mut grad = Vec::with_capacity(input.len());
        for &u in upstream.data() {
            let v = T::from_f64(u.to_f64() * scale);
            grad.extend(std::iter::repeat_n(v, vol));
        }
        return Tensor::new(shape.to_vec(), grad);
    }
    let g = windows(input, window, stride)?;
    let expected = [g.n, g.c, g.output[0], g.output[1], g.output[2]];
    if upstream.shape() != expected {
        return Err(Error::shape(
            "pool3d_backward",
            "upstream",
            format!("{expected:?}"),
            format!("{:?}", upstream.shape()),
        ));
    }
    let in_vol: usize = g.input.iter().product();
    let out_vol: usize = g.output.iter().product();
    let [od, oh, ow] = g.output;
    let count = (g.window * g.window * g.window) as f64;
    let mut grad = vec![T::ZERO; input.len()];
    for (ch, (plane, gplane)) in input
        .data()
        .chunks_exact(in_vol)
        .zip(grad.chunks_exact_mut(in_vol))
        .enumerate()
    {
        let up = &upstream.data()[ch * out_vol..(ch + 1) * out_vol];
        let mut o = 0;
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    match mode {
                        PoolMode::Max => {
                            let mut arg = None;
                            for off in g.offsets(z, y, x) {
                                if arg.is_none_or(|a: usize| plane[off] > plane[a]) {
                                    arg = Some(off);
                                }
                            }
                            if let Some(a) = arg {
                                gplane[a] += up[o];
                            }
                        }
                        PoolMode::Avg => {
                            let share = T::from_f64(up[o].to_f64() / count);
                            for off in g.offsets(z, y, x) {
                                gplane[off] += share;
                            }
                        }
                        PoolMode::GlobalAvg => unreachable!(),
                    }
                    o += 1;
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_constant_is_constant() {
        let x = Tensor::<f32>::full(&[1, 2, 4, 4, 4], 5.0);
        let y = pool3d(&x, PoolMode::Max, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn average_of_single_window() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 2, 2, 2], |i| i as f64);
        let y = pool3d(&x, PoolMode::Avg, 2, 2).unwrap();
        assert_eq!(y.data(), &[3.5]);
    }

    #[test]
    fn global_average_shape() {
        let x = Tensor::<f32>::zeros(&[1, 512, 4, 4, 4]);
        assert_eq!(pool3d(&x, PoolMode::GlobalAvg, 0, 0).unwrap().shape(), &[1, 512]);
    }

    #[test]
    fn window_larger_than_extent_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 1, 4]);
        let err = pool3d(&x, PoolMode::Max, 2, 2).unwrap_err();
        assert!(err.to_string().contains("height axis"));
    }

    #[test]
    fn max_backward_prefers_first_index_on_ties() {
        let x = Tensor::<f64>::full(&[1, 1, 2, 2, 2], 1.0);
        let up = Tensor::full(&[1, 1, 1, 1, 1], 3.0);
        let g = pool3d_backward(&x, &up, PoolMode::Max, 2, 2).unwrap();
        assert_eq!(g.data()[0], 3.0);
        assert!(g.data()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn avg_backward_spreads_uniformly() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2, 2]);
        let up = Tensor::full(&[1, 1, 1, 1, 1], 8.0);
        let g = pool3d_backward(&x, &up, PoolMode::Avg, 2, 2).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
        let gg = pool3d_backward(&x, &Tensor::full(&[1, 1], 8.0), PoolMode::GlobalAvg, 0, 0).unwrap();
        assert_eq!(g, gg);
    }
}
