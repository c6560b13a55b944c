//! Packed single-threaded matrix multiply used by the convolution and affine
//! kernels.
//!
//! The summation order for every output element is fixed by the block sizes
//! alone, so results do not depend on how callers distribute work.

use crate::tensor::Element;

pub(crate) const MR: usize = 8;
pub(crate) const NR: usize = 16;
const KC: usize = 256;
const MC: usize = 128;
const NC: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// Row-major matrix operand. With `Op::T` the logical matrix is the transpose
/// of what is stored.
#[derive(Clone, Copy)]
pub struct Mat<'a, T> {
    pub data: &'a [T],
    pub ld: usize,
    pub op: Op,
}

impl<'a, T: Element> Mat<'a, T> {
    pub fn n(data: &'a [T], ld: usize) -> Self {
        Self {
            data,
            ld,
            op: Op::N,
        }
    }

    pub fn t(data: &'a [T], ld: usize) -> Self {
        Self {
            data,
            ld,
            op: Op::T,
        }
    }

    #[cfg(test)]
    fn at(&self, row: usize, col: usize) -> T {
        match self.op {
            Op::N => self.data[row * self.ld + col],
            Op::T => self.data[col * self.ld + row],
        }
    }
}

/// `C[m×n] = A[m×k]·B[k×n]`, or `C += A·B` when `accumulate` is set.
/// `c` is row-major with leading dimension `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    n: usize,
    k: usize,
    a: Mat<'_, T>,
    b: Mat<'_, T>,
    c: &mut [T],
    ldc: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                c[i * ldc..i * ldc + n].fill(T::ZERO);
            }
        }
        return;
    }
    let mut packed_a = vec![T::ZERO; MC.min(m.next_multiple_of(MR)) * KC.min(k)];
    let mut packed_b = vec![T::ZERO; NC.min(n.next_multiple_of(NR)) * KC.min(k)];

    for jc in (0..n).step_by(NC) {
        let nb = NC.min(n - jc);
        for pc in (0..k).step_by(KC) {
            let kb = KC.min(k - pc);
            pack_b(&b, pc, kb, jc, nb, &mut packed_b);
            let add = accumulate || pc > 0;
            for ic in (0..m).step_by(MC) {
                let mb = MC.min(m - ic);
                pack_a(&a, ic, mb, pc, kb, &mut packed_a);
                for q in 0..nb.div_ceil(NR) {
                    let pb = &packed_b[q * kb * NR..(q + 1) * kb * NR];
                    let col0 = jc + q * NR;
                    let cols = NR.min(n - col0);
                    for p in 0..mb.div_ceil(MR) {
                        let pa = &packed_a[p * kb * MR..(p + 1) * kb * MR];
                        let acc = micro_kernel(pa, pb);
                        let row0 = ic + p * MR;
                        let rows = MR.min(m - row0);
                        for (r, acc_row) in acc.iter().enumerate().take(rows) {
                            let dst = &mut c[(row0 + r) * ldc + col0..(row0 + r) * ldc + col0 + cols];
                            if add {
                                for (d, &v) in dst.iter_mut().zip(acc_row) {
                                    *d += v;
                                }
                            } else {
                                dst.copy_from_slice(&acc_row[..cols]);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn micro_kernel<T: Element>(pa: &[T], pb: &[T]) -> [[T; NR]; MR] {
    T::micro_kernel(pa, pb)
}

/// Register-blocked `MR×NR` product over packed panels. Portable version.
#[inline(always)]
#[cfg_attr(all(target_arch = "x86_64", target_feature = "avx512f"), allow(dead_code))]
pub(crate) fn micro_portable<T: Element>(pa: &[T], pb: &[T]) -> [[T; NR]; MR] {
    let mut acc = [[T::ZERO; NR]; MR];
    for (a, b) in pa.chunks_exact(MR).zip(pb.chunks_exact(NR)) {
        for r in 0..MR {
            let ar = a[r];
            for j in 0..NR {
                acc[r][j] = ar.mul_add(b[j], acc[r][j]);
            }
        }
    }
    acc
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
pub(crate) fn micro_f32(pa: &[f32], pb: &[f32]) -> [[f32; NR]; MR] {
    use std::arch::x86_64::*;
    let kb = pa.len() / MR;
    assert!(pb.len() >= kb * NR);
    // SAFETY: avx512f is enabled at compile time; every load stays within
    // `pa[..kb*MR]` and `pb[..kb*NR]`, checked above.
    unsafe {
        let mut acc = [_mm512_setzero_ps(); MR];
        for kk in 0..kb {
            let b = _mm512_loadu_ps(pb.as_ptr().add(kk * NR));
            let a = pa.as_ptr().add(kk * MR);
            for (r, acc_r) in acc.iter_mut().enumerate() {
                *acc_r = _mm512_fmadd_ps(_mm512_set1_ps(*a.add(r)), b, *acc_r);
            }
        }
        let mut out = [[0f32; NR]; MR];
        for r in 0..MR {
            _mm512_storeu_ps(out[r].as_mut_ptr(), acc[r]);
        }
        out
    }
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
pub(crate) fn micro_f64(pa: &[f64], pb: &[f64]) -> [[f64; NR]; MR] {
    use std::arch::x86_64::*;
    let kb = pa.len() / MR;
    assert!(pb.len() >= kb * NR);
    // SAFETY: as in `micro_f32`.
    unsafe {
        let mut lo = [_mm512_setzero_pd(); MR];
        let mut hi = [_mm512_setzero_pd(); MR];
        for kk in 0..kb {
            let b0 = _mm512_loadu_pd(pb.as_ptr().add(kk * NR));
            let b1 = _mm512_loadu_pd(pb.as_ptr().add(kk * NR + 8));
            let a = pa.as_ptr().add(kk * MR);
            for r in 0..MR {
                let ar = _mm512_set1_pd(*a.add(r));
                lo[r] = _mm512_fmadd_pd(ar, b0, lo[r]);
                hi[r] = _mm512_fmadd_pd(ar, b1, hi[r]);
            }
        }
        let mut out = [[0f64; NR]; MR];
        for r in 0..MR {
            _mm512_storeu_pd(out[r].as_mut_ptr(), lo[r]);
            _mm512_storeu_pd(out[r].as_mut_ptr().add(8), hi[r]);
        }
        out
    }
}

#[cfg(all(
    target_arch = "x86_64",
    target_feature = "avx2",
    target_feature = "fma",
    not(target_feature = "avx512f")
))]
pub(crate) fn micro_f32(pa: &[f32], pb: &[f32]) -> [[f32; NR]; MR] {
    use std::arch::x86_64::*;
    let kb = pa.len() / MR;
    assert!(pb.len() >= kb * NR);
    // SAFETY: avx2+fma are enabled at compile time; loads are bounds-checked above.
    unsafe {
        let mut lo = [_mm256_setzero_ps(); MR];
        let mut hi = [_mm256_setzero_ps(); MR];
        for kk in 0..kb {
            let b0 = _mm256_loadu_ps(pb.as_ptr().add(kk * NR));
            let b1 = _mm256_loadu_ps(pb.as_ptr().add(kk * NR + 8));
            let a = pa.as_ptr().add(kk * MR);
            for r in 0..MR {
                let ar = _mm256_set1_ps(*a.add(r));
                lo[r] = _mm256_fmadd_ps(ar, b0, lo[r]);
                hi[r] = _mm256_fmadd_ps(ar, b1, hi[r]);
            }
        }
        let mut out = [[0f32; NR]; MR];
        for r in 0..MR {
            _mm256_storeu_ps(out[r].as_mut_ptr(), lo[r]);
            _mm256_storeu_ps(out[r].as_mut_ptr().add(8), hi[r]);
        }
        out
    }
}

#[cfg(not(all(
    target_arch = "x86_64",
    any(target_feature = "avx512f", all(target_feature = "avx2", target_feature = "fma"))
)))]
pub(crate) fn micro_f32(pa: &[f32], pb: &[f32]) -> [[f32; NR]; MR] {
    micro_portable(pa, pb)
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
pub(crate) fn micro_f64(pa: &[f64], pb: &[f64]) -> [[f64; NR]; MR] {
    micro_portable(pa, pb)
}

/// `acc[r][v] = sum_kk pa[kk*MR + r] * pb[offs[kk] + v]`: the micro-kernel with
/// B rows read in place at arbitrary offsets. Portable version.
#[inline(always)]
#[cfg_attr(all(target_arch = "x86_64", target_feature = "avx512f"), allow(dead_code))]
pub(crate) fn rows_portable<T: Element>(pa: &[T], pb: &[T], offs: &[usize]) -> [[T; NR]; MR] {
    let mut acc = [[T::ZERO; NR]; MR];
    for (a, &o) in pa.chunks_exact(MR).zip(offs) {
        let b = &pb[o..o + NR];
        for r in 0..MR {
            for j in 0..NR {
                acc[r][j] = a[r].mul_add(b[j], acc[r][j]);
            }
        }
    }
    acc
}

/// `acc[r][v] = sum_q pu[(q*MR + r)*NR + v] * pb[offs[q] + v]`: elementwise
/// products of packed `MR×NR` tiles with in-place B rows. Portable version.
#[inline(always)]
#[cfg_attr(all(target_arch = "x86_64", target_feature = "avx512f"), allow(dead_code))]
pub(crate) fn hadamard_portable<T: Element>(pu: &[T], pb: &[T], offs: &[usize]) -> [[T; NR]; MR] {
    let mut acc = [[T::ZERO; NR]; MR];
    for (u, &o) in pu.chunks_exact(MR * NR).zip(offs) {
        let b = &pb[o..o + NR];
        for r in 0..MR {
            for j in 0..NR {
                acc[r][j] = u[r * NR + j].mul_add(b[j], acc[r][j]);
            }
        }
    }
    acc
}

fn check_rows(pa_len: usize, per_row: usize, pb_len: usize, offs: &[usize]) {
    assert!(pa_len >= offs.len() * per_row, "packed operand too short");
    assert!(offs.iter().all(|&o| o + NR <= pb_len), "row offset out of range");
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
pub(crate) fn rows_f32(pa: &[f32], pb: &[f32], offs: &[usize]) -> [[f32; NR]; MR] {
    use std::arch::x86_64::*;
    check_rows(pa.len(), MR, pb.len(), offs);
    // SAFETY: avx512f is enabled at compile time; `check_rows` bounds every load.
    unsafe {
        let mut acc = [_mm512_setzero_ps(); MR];
        for (kk, &o) in offs.iter().enumerate() {
            let b = _mm512_loadu_ps(pb.as_ptr().add(o));
            let a = pa.as_ptr().add(kk * MR);
            for (r, acc_r) in acc.iter_mut().enumerate() {
                *acc_r = _mm512_fmadd_ps(_mm512_set1_ps(*a.add(r)), b, *acc_r);
            }
        }
        let mut out = [[0f32; NR]; MR];
        for r in 0..MR {
            _mm512_storeu_ps(out[r].as_mut_ptr(), acc[r]);
        }
        out
    }
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
pub(crate) fn hadamard_f32(pu: &[f32], pb: &[f32], offs: &[usize]) -> [[f32; NR]; MR] {
    use std::arch::x86_64::*;
    check_rows(pu.len(), MR * NR, pb.len(), offs);
    // SAFETY: as in `rows_f32`.
    unsafe {
        let mut acc = [_mm512_setzero_ps(); MR];
        for (q, &o) in offs.iter().enumerate() {
            let b = _mm512_loadu_ps(pb.as_ptr().add(o));
            let u = pu.as_ptr().add(q * MR * NR);
            for (r, acc_r) in acc.iter_mut().enumerate() {
                *acc_r = _mm512_fmadd_ps(_mm512_loadu_ps(u.add(r * NR)), b, *acc_r);
            }
        }
        let mut out = [[0f32; NR]; MR];
        for r in 0..MR {
            _mm512_storeu_ps(out[r].as_mut_ptr(), acc[r]);
        }
        out
    }
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
pub(crate) fn rows_f64(pa: &[f64], pb: &[f64], offs: &[usize]) -> [[f64; NR]; MR] {
    use std::arch::x86_64::*;
    check_rows(pa.len(), MR, pb.len(), offs);
    // SAFETY: as in `rows_f32`.
    unsafe {
        let mut lo = [_mm512_setzero_pd(); MR];
        let mut hi = [_mm512_setzero_pd(); MR];
        for (kk, &o) in offs.iter().enumerate() {
            let b0 = _mm512_loadu_pd(pb.as_ptr().add(o));
            let b1 = _mm512_loadu_pd(pb.as_ptr().add(o + 8));
            let a = pa.as_ptr().add(kk * MR);
            for r in 0..MR {
                let ar = _mm512_set1_pd(*a.add(r));
                lo[r] = _mm512_fmadd_pd(ar, b0, lo[r]);
                hi[r] = _mm512_fmadd_pd(ar, b1, hi[r]);
            }
        }
        let mut out = [[0f64; NR]; MR];
        for r in 0..MR {
            _mm512_storeu_pd(out[r].as_mut_ptr(), lo[r]);
            _mm512_storeu_pd(out[r].as_mut_ptr().add(8), hi[r]);
        }
        out
    }
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
pub(crate) fn hadamard_f64(pu: &[f64], pb: &[f64], offs: &[usize]) -> [[f64; NR]; MR] {
    use std::arch::x86_64::*;
    check_rows(pu.len(), MR * NR, pb.len(), offs);
    // SAFETY: as in `rows_f32`.
    unsafe {
        let mut lo = [_mm512_setzero_pd(); MR];
        let mut hi = [_mm512_setzero_pd(); MR];
        for (q, &o) in offs.iter().enumerate() {
            let b0 = _mm512_loadu_pd(pb.as_ptr().add(o));
            let b1 = _mm512_loadu_pd(pb.as_ptr().add(o + 8));
            let u = pu.as_ptr().add(q * MR * NR);
            for r in 0..MR {
                lo[r] = _mm512_fmadd_pd(_mm512_loadu_pd(u.add(r * NR)), b0, lo[r]);
                hi[r] = _mm512_fmadd_pd(_mm512_loadu_pd(u.add(r * NR + 8)), b1, hi[r]);
            }
        }
        let mut out = [[0f64; NR]; MR];
        for r in 0..MR {
            _mm512_storeu_pd(out[r].as_mut_ptr(), lo[r]);
            _mm512_storeu_pd(out[r].as_mut_ptr().add(8), hi[r]);
        }
        out
    }
}

#[cfg(all(
    target_arch = "x86_64",
    target_feature = "avx2",
    target_feature = "fma",
    not(target_feature = "avx512f")
))]
pub(crate) fn rows_f32(pa: &[f32], pb: &[f32], offs: &[usize]) -> [[f32; NR]; MR] {
    use std::arch::x86_64::*;
    check_rows(pa.len(), MR, pb.len(), offs);
    // SAFETY: avx2+fma are enabled at compile time; `check_rows` bounds every load.
    unsafe {
        let mut lo = [_mm256_setzero_ps(); MR];
        let mut hi = [_mm256_setzero_ps(); MR];
        for (kk, &o) in offs.iter().enumerate() {
            let b0 = _mm256_loadu_ps(pb.as_ptr().add(o));
            let b1 = _mm256_loadu_ps(pb.as_ptr().add(o + 8));
            let a = pa.as_ptr().add(kk * MR);
            for r in 0..MR {
                let ar = _mm256_set1_ps(*a.add(r));
                lo[r] = _mm256_fmadd_ps(ar, b0, lo[r]);
                hi[r] = _mm256_fmadd_ps(ar, b1, hi[r]);
            }
        }
        let mut out = [[0f32; NR]; MR];
        for r in 0..MR {
            _mm256_storeu_ps(out[r].as_mut_ptr(), lo[r]);
            _mm256_storeu_ps(out[r].as_mut_ptr().add(8), hi[r]);
        }
        out
    }
}

#[cfg(all(
    target_arch = "x86_64",
    target_feature = "avx2",
    target_feature = "fma",
    not(target_feature = "avx512f")
))]
pub(crate) fn hadamard_f32(pu: &[f32], pb: &[f32], offs: &[usize]) -> [[f32; NR]; MR] {
    use std::arch::x86_64::*;
    check_rows(pu.len(), MR * NR, pb.len(), offs);
    // SAFETY: as in `rows_f32`.
    unsafe {
        let mut lo = [_mm256_setzero_ps(); MR];
        let mut hi = [_mm256_setzero_ps(); MR];
        for (q, &o) in offs.iter().enumerate() {
            let b0 = _mm256_loadu_ps(pb.as_ptr().add(o));
            let b1 = _mm256_loadu_ps(pb.as_ptr().add(o + 8));
            let u = pu.as_ptr().add(q * MR * NR);
            for r in 0..MR {
                lo[r] = _mm256_fmadd_ps(_mm256_loadu_ps(u.add(r * NR)), b0, lo[r]);
                hi[r] = _mm256_fmadd_ps(_mm256_loadu_ps(u.add(r * NR + 8)), b1, hi[r]);
            }
        }
        let mut out = [[0f32; NR]; MR];
        for r in 0..MR {
            _mm256_storeu_ps(out[r].as_mut_ptr(), lo[r]);
            _mm256_storeu_ps(out[r].as_mut_ptr().add(8), hi[r]);
        }
        out
    }
}

#[cfg(not(all(
    target_arch = "x86_64",
    any(target_feature = "avx512f", all(target_feature = "avx2", target_feature = "fma"))
)))]
pub(crate) fn rows_f32(pa: &[f32], pb: &[f32], offs: &[usize]) -> [[f32; NR]; MR] {
    rows_portable(pa, pb, offs)
}

#[cfg(not(all(
    target_arch = "x86_64",
    any(target_feature = "avx512f", all(target_feature = "avx2", target_feature = "fma"))
)))]
pub(crate) fn hadamard_f32(pu: &[f32], pb: &[f32], offs: &[usize]) -> [[f32; NR]; MR] {
    hadamard_portable(pu, pb, offs)
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
pub(crate) fn rows_f64(pa: &[f64], pb: &[f64], offs: &[usize]) -> [[f64; NR]; MR] {
    rows_portable(pa, pb, offs)
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
pub(crate) fn hadamard_f64(pu: &[f64], pb: &[f64], offs: &[usize]) -> [[f64; NR]; MR] {
    hadamard_portable(pu, pb, offs)
}

fn pack_a<T: Element>(a: &Mat<'_, T>, ic: usize, mb: usize, pc: usize, kb: usize, out: &mut [T]) {
    for p in 0..mb.div_ceil(MR) {
        let panel = &mut out[p * kb * MR..(p + 1) * kb * MR];
        let row0 = ic + p * MR;
        let rows = MR.min(ic + mb - row0);
        match a.op {
            Op::N => {
                for r in 0..MR {
                    if r < rows {
                        let src = &a.data[(row0 + r) * a.ld + pc..(row0 + r) * a.ld + pc + kb];
                        for (kk, &v) in src.iter().enumerate() {
                            panel[kk * MR + r] = v;
                        }
                    } else {
                        for kk in 0..kb {
                            panel[kk * MR + r] = T::ZERO;
                        }
                    }
                }
            }
            Op::T => {
                for kk in 0..kb {
                    let dst = &mut panel[kk * MR..(kk + 1) * MR];
                    let src = &a.data[(pc + kk) * a.ld + row0..(pc + kk) * a.ld + row0 + rows];
                    dst[..rows].copy_from_slice(src);
                    dst[rows..].fill(T::ZERO);
                }
            }
        }
    }
}

fn pack_b<T: Element>(b: &Mat<'_, T>, pc: usize, kb: usize, jc: usize, nb: usize, out: &mut [T]) {
    for q in 0..nb.div_ceil(NR) {
        let panel = &mut out[q * kb * NR..(q + 1) * kb * NR];
        let col0 = jc + q * NR;
        let cols = NR.min(jc + nb - col0);
        match b.op {
            Op::N => {
                for kk in 0..kb {
                    let dst = &mut panel[kk * NR..(kk + 1) * NR];
                    let src = &b.data[(pc + kk) * b.ld + col0..(pc + kk) * b.ld + col0 + cols];
                    dst[..cols].copy_from_slice(src);
                    dst[cols..].fill(T::ZERO);
                }
            }
            Op::T => {
                for j in 0..NR {
                    if j < cols {
                        let src = &b.data[(col0 + j) * b.ld + pc..(col0 + j) * b.ld + pc + kb];
                        for (kk, &v) in src.iter().enumerate() {
                            panel[kk * NR + j] = v;
                        }
                    } else {
                        for kk in 0..kb {
                            panel[kk * NR + j] = T::ZERO;
                        }
                    }
                }
            }
        }
    }
}

/// Reference product used by tests.
#[cfg(test)]
pub(crate) fn naive<T: Element>(m: usize, n: usize, k: usize, a: Mat<'_, T>, b: Mat<'_, T>) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a.at(i, p).to_f64() * b.at(p, j).to_f64()).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matches_naive_for_all_transpose_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, n, k) in &[(1, 1, 1), (7, 19, 5), (9, 33, 300), (130, 17, 3), (16, 1030, 40)] {
            for &oa in &[Op::N, Op::T] {
                for &ob in &[Op::N, Op::T] {
                    let a = random(m * k, &mut rng);
                    let b = random(k * n, &mut rng);
                    let am = match oa {
                        Op::N => Mat::n(&a, k),
                        Op::T => Mat::t(&a, m),
                    };
                    let bm = match ob {
                        Op::N => Mat::n(&b, n),
                        Op::T => Mat::t(&b, k),
                    };
                    let expected = naive(m, n, k, am, bm);
                    let mut c = vec![1.0; m * n];
                    gemm(m, n, k, am, bm, &mut c, n, false);
                    for (x, y) in c.iter().zip(&expected) {
                        assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()), "{m}x{n}x{k} {oa:?}{ob:?}");
                    }
                    gemm(m, n, k, am, bm, &mut c, n, true);
                    for (x, y) in c.iter().zip(&expected) {
                        assert!((x - 2.0 * y).abs() < 1e-11 * (1.0 + y.abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn respects_leading_dimension_of_output() {
        let a = vec![1.0f64, 2.0, 3.0, 4.0];
        let b = vec![1.0f64, 0.0, 0.0, 1.0];
        let mut c = vec![-7.0; 2 * 5];
        gemm(2, 2, 2, Mat::n(&a, 2), Mat::n(&b, 2), &mut c, 5, false);
        assert_eq!(&c[0..2], &[1.0, 2.0]);
        assert_eq!(&c[5..7], &[3.0, 4.0]);
        assert_eq!(c[2], -7.0);
    }

    #[test]
    fn row_kernels_match_portable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let depth = 7;
        let pb = random(200, &mut rng);
        let offs: Vec<usize> = (0..depth).map(|_| rng.random_range(0..200 - NR)).collect();
        let pa = random(depth * MR, &mut rng);
        let pu = random(depth * MR * NR, &mut rng);
        let close = |x: [[f64; NR]; MR], y: [[f64; NR]; MR]| {
            x.iter().flatten().zip(y.iter().flatten()).all(|(a, b)| (a - b).abs() < 1e-13)
        };
        assert!(close(f64::rows_kernel(&pa, &pb, &offs), rows_portable(&pa, &pb, &offs)));
        assert!(close(f64::hadamard_kernel(&pu, &pb, &offs), hadamard_portable(&pu, &pb, &offs)));
        let pa32: Vec<f32> = pa.iter().map(|&v| v as f32).collect();
        let pb32: Vec<f32> = pb.iter().map(|&v| v as f32).collect();
        let fast = f32::rows_kernel(&pa32, &pb32, &offs);
        let slow = rows_portable(&pa32, &pb32, &offs);
        assert!(fast.iter().flatten().zip(slow.iter().flatten()).all(|(a, b)| (a - b).abs() < 1e-5));
        let mk = micro_portable(&pa[..depth * MR], &pb[..depth * NR]);
        assert!(close(f64::micro_kernel(&pa[..depth * MR], &pb[..depth * NR]), mk));
    }
}
