//! AVX-512 `f32` kernels with packed left panels and register-resident
//! accumulators. Each output of [`nn_f32`] is the same fused multiply-add
//! chain the portable kernel computes, so results match it bit for bit.

use std::arch::x86_64::*;

const NR: usize = 64;
const LANES: usize = 16;

/// Lanes `[q*16, q*16 + 16)` of the first `width` columns.
fn tail_masks(width: usize) -> [u16; 4] {
    std::array::from_fn(|q| {
        let live = width.saturating_sub(q * LANES).min(LANES);
        if live == LANES {
            u16::MAX
        } else {
            (1u16 << live) - 1
        }
    })
}

/// Rows per left panel: up to six, splitting 7..=9 remaining rows evenly.
fn panel_rows(rem: usize) -> usize {
    match rem {
        0..=6 => rem,
        7..=9 => rem.div_ceil(2),
        _ => 6,
    }
}

/// # Safety
/// Requires AVX-512F. Every `b_off[p] + n` must lie within `b`,
/// `(m-1)*a_rs + (k-1)*a_cs` within `a`, and `c` must hold `m*n` values.
#[target_feature(enable = "avx512f")]
#[allow(clippy::too_many_arguments)]
pub(super) unsafe fn nn_f32(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_rs: usize,
    a_cs: usize,
    b: &[f32],
    b_off: &[usize],
    c: &mut [f32],
) {
    let mut pack = vec![0f32; k * 6];
    let mut i0 = 0;
    while i0 < m {
        let mr = panel_rows(m - i0);
        for p in 0..k {
            for r in 0..mr {
                pack[p * mr + r] = a[(i0 + r) * a_rs + p * a_cs];
            }
        }
        let ap = pack.as_ptr();
        let cp = c.as_mut_ptr().add(i0 * n);
        match mr {
            1 => panel::<1>(k, n, ap, b.as_ptr(), b_off.as_ptr(), cp),
            2 => panel::<2>(k, n, ap, b.as_ptr(), b_off.as_ptr(), cp),
            3 => panel::<3>(k, n, ap, b.as_ptr(), b_off.as_ptr(), cp),
            4 => panel::<4>(k, n, ap, b.as_ptr(), b_off.as_ptr(), cp),
            5 => panel::<5>(k, n, ap, b.as_ptr(), b_off.as_ptr(), cp),
            _ => panel::<6>(k, n, ap, b.as_ptr(), b_off.as_ptr(), cp),
        }
        i0 += mr;
    }
}

#[inline(always)]
unsafe fn panel<const MR: usize>(
    k: usize,
    n: usize,
    ap: *const f32,
    b: *const f32,
    b_off: *const usize,
    c: *mut f32,
) {
    let mut j0 = 0;
    while j0 + NR <= n {
        micro::<MR, false>(k, ap, b, b_off, j0, [u16::MAX; 4], c.add(j0), n);
        j0 += NR;
    }
    if j0 < n {
        micro::<MR, true>(k, ap, b, b_off, j0, tail_masks(n - j0), c.add(j0), n);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
unsafe fn micro<const MR: usize, const MASKED: bool>(
    k: usize,
    ap: *const f32,
    b: *const f32,
    b_off: *const usize,
    j0: usize,
    masks: [u16; 4],
    c: *mut f32,
    ldc: usize,
) {
    let mut acc = [[_mm512_setzero_ps(); 4]; MR];
    for p in 0..k {
        let row = b.add(*b_off.add(p) + j0);
        let bv: [__m512; 4] = if MASKED {
            std::array::from_fn(|q| _mm512_maskz_loadu_ps(masks[q], row.add(q * LANES)))
        } else {
            std::array::from_fn(|q| _mm512_loadu_ps(row.add(q * LANES)))
        };
        for (r, acc_r) in acc.iter_mut().enumerate() {
            let av = _mm512_set1_ps(*ap.add(p * MR + r));
            for q in 0..4 {
                acc_r[q] = _mm512_fmadd_ps(av, bv[q], acc_r[q]);
            }
        }
    }
    for (r, acc_r) in acc.iter().enumerate() {
        let out = c.add(r * ldc);
        for q in 0..4 {
            if MASKED {
                _mm512_mask_storeu_ps(out.add(q * LANES), masks[q], acc_r[q]);
            } else {
                _mm512_storeu_ps(out.add(q * LANES), acc_r[q]);
            }
        }
    }
}

/// # Safety
/// Requires AVX-512F. Every `a_off[i] + k` must lie within `a`, every
/// `b_off[j] + k` within `b`, and `c` must hold `m*n` values.
#[target_feature(enable = "avx512f")]
#[allow(clippy::too_many_arguments)]
pub(super) unsafe fn nt_f32(
    m: usize,
    n: usize,
    k: usize,
    a: &[f32],
    a_off: &[usize],
    b: &[f32],
    b_off: &[usize],
    c: &mut [f32],
) {
    macro_rules! dispatch {
        ($mr:expr, $nr:expr, $($args:expr),*) => {
            match ($mr, $nr) {
                (4, 4) => dot_block::<4, 4>($($args),*),
                (4, 3) => dot_block::<4, 3>($($args),*),
                (4, 2) => dot_block::<4, 2>($($args),*),
                (4, 1) => dot_block::<4, 1>($($args),*),
                (3, 4) => dot_block::<3, 4>($($args),*),
                (3, 3) => dot_block::<3, 3>($($args),*),
                (3, 2) => dot_block::<3, 2>($($args),*),
                (3, 1) => dot_block::<3, 1>($($args),*),
                (2, 4) => dot_block::<2, 4>($($args),*),
                (2, 3) => dot_block::<2, 3>($($args),*),
                (2, 2) => dot_block::<2, 2>($($args),*),
                (2, 1) => dot_block::<2, 1>($($args),*),
                (1, 4) => dot_block::<1, 4>($($args),*),
                (1, 3) => dot_block::<1, 3>($($args),*),
                (1, 2) => dot_block::<1, 2>($($args),*),
                _ => dot_block::<1, 1>($($args),*),
            }
        };
    }
    let mut i0 = 0;
    while i0 < m {
        let mr = (m - i0).min(4);
        let mut j0 = 0;
        while j0 < n {
            let nr = (n - j0).min(4);
            let cp = c.as_mut_ptr().add(i0 * n + j0);
            dispatch!(mr, nr, k, a.as_ptr(), a_off.as_ptr().add(i0), b.as_ptr(), b_off.as_ptr().add(j0), cp, n);
            j0 += nr;
        }
        i0 += mr;
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
unsafe fn dot_block<const MR: usize, const NC: usize>(
    k: usize,
    a: *const f32,
    a_off: *const usize,
    b: *const f32,
    b_off: *const usize,
    c: *mut f32,
    ldc: usize,
) {
    let ar: [*const f32; MR] = std::array::from_fn(|r| a.add(*a_off.add(r)));
    let br: [*const f32; NC] = std::array::from_fn(|s| b.add(*b_off.add(s)));
    let mut acc = [[_mm512_setzero_ps(); NC]; MR];
    let kv = k / LANES * LANES;
    let mut p = 0;
    while p < kv {
        let bv: [__m512; NC] = std::array::from_fn(|s| _mm512_loadu_ps(br[s].add(p)));
        for r in 0..MR {
            let av = _mm512_loadu_ps(ar[r].add(p));
            for s in 0..NC {
                acc[r][s] = _mm512_fmadd_ps(av, bv[s], acc[r][s]);
            }
        }
        p += LANES;
    }
    if p < k {
        let mask = (1u16 << (k - p)) - 1;
        let bv: [__m512; NC] = std::array::from_fn(|s| _mm512_maskz_loadu_ps(mask, br[s].add(p)));
        for r in 0..MR {
            let av = _mm512_maskz_loadu_ps(mask, ar[r].add(p));
            for s in 0..NC {
                acc[r][s] = _mm512_fmadd_ps(av, bv[s], acc[r][s]);
            }
        }
    }
    for r in 0..MR {
        for s in 0..NC {
            *c.add(r * ldc + s) += _mm512_reduce_add_ps(acc[r][s]);
        }
    }
}
