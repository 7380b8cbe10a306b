//! Register-blocked matrix kernels for the convolution hot paths.
//!
//! The shapes there are skinny (few output channels, a few thousand columns
//! per chunk), where general GEMM libraries waste most of their micro-tiles.
//! Every output element of [`gemm_nn`] is accumulated as one sequential
//! multiply-add chain over the inner dimension, whether it falls in a full
//! block or in a tail, so a column's result never depends on where it sits in
//! the matrix.

use crate::element::Element;

const NB: usize = 64;
const MB: usize = 4;
const LANES: usize = 16;

#[inline(always)]
fn madd<T: Element, const FMA: bool>(a: T, b: T, acc: T) -> T {
    if FMA {
        a.mul_add(b, acc)
    } else {
        acc + a * b
    }
}

/// `c[m×n] = A[m×k] · B[k×n]`, where `A[i][p] = a[i*a_rs + p*a_cs]`, row `p`
/// of `B` is `b[b_off[p]..][..n]` and `c` is dense row-major.
#[inline(always)]
fn nn_impl<T: Element, const FMA: bool>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_rs: usize,
    a_cs: usize,
    b: &[T],
    b_off: &[usize],
    c: &mut [T],
) {
    let at = |i: usize, p: usize| a[i * a_rs + p * a_cs];
    let mut j0 = 0;
    while j0 + NB <= n {
        let mut i0 = 0;
        while i0 + MB <= m {
            let mut acc = [[T::zero(); NB]; MB];
            for p in 0..k {
                let brow: &[T; NB] = b[b_off[p] + j0..][..NB].try_into().expect("block width");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = at(i0 + r, p);
                    for t in 0..NB {
                        row[t] = madd::<T, FMA>(av, brow[t], row[t]);
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i0 + r) * n + j0..][..NB].copy_from_slice(row);
            }
            i0 += MB;
        }
        while i0 < m {
            let mut row = [T::zero(); NB];
            for p in 0..k {
                let brow: &[T; NB] = b[b_off[p] + j0..][..NB].try_into().expect("block width");
                let av = at(i0, p);
                for t in 0..NB {
                    row[t] = madd::<T, FMA>(av, brow[t], row[t]);
                }
            }
            c[i0 * n + j0..][..NB].copy_from_slice(&row);
            i0 += 1;
        }
        j0 += NB;
    }
    if j0 < n {
        let w = n - j0;
        for i in 0..m {
            let mut row = [T::zero(); NB];
            for p in 0..k {
                let av = at(i, p);
                let brow = &b[b_off[p] + j0..][..w];
                for t in 0..w {
                    row[t] = madd::<T, FMA>(av, brow[t], row[t]);
                }
            }
            c[i * n + j0..][..w].copy_from_slice(&row[..w]);
        }
    }
}

/// `c[m×n] += A[m×k] · B[n×k]ᵀ` with row `i` of `A` at `a[a_off[i]..]`, row
/// `j` of `B` at `b[b_off[j]..]` and `c` dense row-major.
#[inline(always)]
fn nt_impl<T: Element, const FMA: bool>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    a_off: &[usize],
    b: &[T],
    b_off: &[usize],
    c: &mut [T],
) {
    let kv = k / LANES * LANES;
    let dot_tail = |i: usize, j: usize| {
        let mut s = T::zero();
        for p in kv..k {
            s = madd::<T, FMA>(a[a_off[i] + p], b[b_off[j] + p], s);
        }
        s
    };
    let reduce = |v: &[T; LANES]| v.iter().fold(T::zero(), |s, &x| s + x);
    let mut i0 = 0;
    while i0 < m {
        let ib = MB.min(m - i0);
        let mut j0 = 0;
        while j0 < n {
            let jb = MB.min(n - j0);
            if ib == MB && jb == MB {
                let mut acc = [[T::zero(); LANES]; MB * MB];
                let mut p = 0;
                while p < kv {
                    for r in 0..MB {
                        let ar: [T; LANES] = a[a_off[i0 + r] + p..][..LANES].try_into().expect("lanes");
                        for s in 0..MB {
                            let bs: [T; LANES] = b[b_off[j0 + s] + p..][..LANES].try_into().expect("lanes");
                            let ac = &mut acc[r * MB + s];
                            for t in 0..LANES {
                                ac[t] = madd::<T, FMA>(ar[t], bs[t], ac[t]);
                            }
                        }
                    }
                    p += LANES;
                }
                for r in 0..MB {
                    for s in 0..MB {
                        c[(i0 + r) * n + j0 + s] += reduce(&acc[r * MB + s]) + dot_tail(i0 + r, j0 + s);
                    }
                }
            } else {
                for r in 0..ib {
                    for s in 0..jb {
                        let (i, j) = (i0 + r, j0 + s);
                        let mut acc = [T::zero(); LANES];
                        let mut p = 0;
                        while p < kv {
                            for t in 0..LANES {
                                acc[t] = madd::<T, FMA>(a[a_off[i] + p + t], b[b_off[j] + p + t], acc[t]);
                            }
                            p += LANES;
                        }
                        c[i * n + j] += reduce(&acc) + dot_tail(i, j);
                    }
                }
            }
            j0 += jb;
        }
        i0 += ib;
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512;

/// Reinterprets a slice of `T` as `f32` when `T` is `f32`.
fn as_f32<T: Element>(v: &[T]) -> Option<&[f32]> {
    (std::any::TypeId::of::<T>() == std::any::TypeId::of::<f32>())
        // SAFETY: `T` is `f32`, so layout and length are identical.
        .then(|| unsafe { std::slice::from_raw_parts(v.as_ptr().cast::<f32>(), v.len()) })
}

fn as_f32_mut<T: Element>(v: &mut [T]) -> Option<&mut [f32]> {
    (std::any::TypeId::of::<T>() == std::any::TypeId::of::<f32>())
        // SAFETY: `T` is `f32`, so layout and length are identical.
        .then(|| unsafe { std::slice::from_raw_parts_mut(v.as_mut_ptr().cast::<f32>(), v.len()) })
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::*;

    #[target_feature(enable = "avx512f,avx2,fma")]
    pub(super) unsafe fn nn_avx512<T: Element>(
        m: usize,
        k: usize,
        n: usize,
        a: &[T],
        a_rs: usize,
        a_cs: usize,
        b: &[T],
        b_off: &[usize],
        c: &mut [T],
    ) {
        nn_impl::<T, true>(m, k, n, a, a_rs, a_cs, b, b_off, c)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn nn_avx2<T: Element>(
        m: usize,
        k: usize,
        n: usize,
        a: &[T],
        a_rs: usize,
        a_cs: usize,
        b: &[T],
        b_off: &[usize],
        c: &mut [T],
    ) {
        nn_impl::<T, true>(m, k, n, a, a_rs, a_cs, b, b_off, c)
    }

    #[target_feature(enable = "avx512f,avx2,fma")]
    pub(super) unsafe fn nt_avx512<T: Element>(
        m: usize,
        n: usize,
        k: usize,
        a: &[T],
        a_off: &[usize],
        b: &[T],
        b_off: &[usize],
        c: &mut [T],
    ) {
        nt_impl::<T, true>(m, n, k, a, a_off, b, b_off, c)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn nt_avx2<T: Element>(
        m: usize,
        n: usize,
        k: usize,
        a: &[T],
        a_off: &[usize],
        b: &[T],
        b_off: &[usize],
        c: &mut [T],
    ) {
        nt_impl::<T, true>(m, n, k, a, a_off, b, b_off, c)
    }

    #[derive(Clone, Copy, PartialEq, Eq)]
    pub(super) enum Level {
        Avx512,
        Avx2,
        Generic,
    }

    pub(super) fn level() -> Level {
        if std::env::var_os("DYNGEST_GENERIC_KERNELS").is_some() {
            Level::Generic
        } else if is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("fma") {
            Level::Avx512
        } else if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            Level::Avx2
        } else {
            Level::Generic
        }
    }
}

#[cfg(target_arch = "x86_64")]
fn cached_level() -> x86::Level {
    static LEVEL: std::sync::OnceLock<x86::Level> = std::sync::OnceLock::new();
    *LEVEL.get_or_init(x86::level)
}

/// Row offsets `0, stride, 2*stride, ...` of a dense matrix.
pub fn dense_rows(rows: usize, stride: usize) -> Vec<usize> {
    (0..rows).map(|r| r * stride).collect()
}

/// `c[m×n] = A · B` with `A[i][p] = a[i*a_rs + p*a_cs]` and row `p` of `B`
/// at `b[b_off[p]..][..n]`; `c` is dense row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm_nn<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_rs: usize,
    a_cs: usize,
    b: &[T],
    b_off: &[usize],
    c: &mut [T],
) {
    assert!(b_off.len() == k && b_off.iter().all(|&o| o + n <= b.len()), "gemm_nn rhs out of bounds");
    assert!(c.len() >= m * n, "gemm_nn output too small");
    if m > 0 && k > 0 {
        assert!((m - 1) * a_rs + (k - 1) * a_cs < a.len(), "gemm_nn lhs out of bounds");
    }
    #[cfg(target_arch = "x86_64")]
    {
        // SAFETY: the target features were detected at runtime.
        match cached_level() {
            x86::Level::Avx512 => {
                if let (Some(a32), Some(b32)) = (as_f32(a), as_f32(b)) {
                    let c32 = as_f32_mut(c).expect("same element type");
                    return unsafe { avx512::nn_f32(m, k, n, a32, a_rs, a_cs, b32, b_off, c32) };
                }
                return unsafe { x86::nn_avx512(m, k, n, a, a_rs, a_cs, b, b_off, c) };
            }
            x86::Level::Avx2 => return unsafe { x86::nn_avx2(m, k, n, a, a_rs, a_cs, b, b_off, c) },
            x86::Level::Generic => {}
        }
    }
    nn_impl::<T, false>(m, k, n, a, a_rs, a_cs, b, b_off, c)
}

/// `c[m×n] += A[m×k] · B[n×k]ᵀ` with row `i` of `A` at `a[a_off[i]..][..k]`
/// and row `j` of `B` at `b[b_off[j]..][..k]`; `c` is dense row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm_nt_acc<T: Element>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    a_off: &[usize],
    b: &[T],
    b_off: &[usize],
    c: &mut [T],
) {
    assert!(a_off.len() == m && a_off.iter().all(|&o| o + k <= a.len()), "gemm_nt lhs out of bounds");
    assert!(b_off.len() == n && b_off.iter().all(|&o| o + k <= b.len()), "gemm_nt rhs out of bounds");
    assert!(c.len() >= m * n, "gemm_nt output too small");
    #[cfg(target_arch = "x86_64")]
    {
        // SAFETY: the target features were detected at runtime.
        match cached_level() {
            x86::Level::Avx512 => {
                if let (Some(a32), Some(b32)) = (as_f32(a), as_f32(b)) {
                    let c32 = as_f32_mut(c).expect("same element type");
                    return unsafe { avx512::nt_f32(m, n, k, a32, a_off, b32, b_off, c32) };
                }
                return unsafe { x86::nt_avx512(m, n, k, a, a_off, b, b_off, c) };
            }
            x86::Level::Avx2 => return unsafe { x86::nt_avx2(m, n, k, a, a_off, b, b_off, c) },
            x86::Level::Generic => {}
        }
    }
    nt_impl::<T, false>(m, n, k, a, a_off, b, b_off, c)
}
