//! 3D convolution via chunked im2col + GEMM.

use crate::element::Element;
use crate::kernels;
use crate::error::{config_err, Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Output extent of a strided, padded window: `floor((d + 2p - k) / s) + 1`.
pub fn conv_out_dim(d: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if s == 0 || d + 2 * p < k {
        return None;
    }
    Some((d + 2 * p - k) / s + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if input.len() != 5 {
            return Err(config_err(format!("conv3d input must be rank 5, got {input:?}")));
        }
        if weight.len() != 5 {
            return Err(config_err(format!("conv3d weight must be rank 5, got {weight:?}")));
        }
        if input[1] != weight[1] {
            return Err(config_err(format!(
                "conv3d channel mismatch: input C_in={} but weight C_in={}",
                input[1], weight[1]
            )));
        }
        let kernel = [weight[2], weight[3], weight[4]];
        let in_dims = [input[2], input[3], input[4]];
        let mut out_dims = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 {
                return Err(config_err(format!("conv3d stride[{a}] must be >= 1")));
            }
            out_dims[a] = conv_out_dim(in_dims[a], kernel[a], stride[a], padding[a]).ok_or_else(|| {
                config_err(format!(
                    "conv3d dim {a}: padded extent {} smaller than kernel {}",
                    in_dims[a] + 2 * padding[a],
                    kernel[a]
                ))
            })?;
        }
        Ok(Conv3dGeometry {
            batch: input[0],
            in_channels: input[1],
            out_channels: weight[0],
            in_dims,
            out_dims,
            kernel,
            stride,
            padding,
        })
    }

    pub fn in_cells(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_cells(&self) -> usize {
        self.out_dims.iter().product()
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the im2col matrix.
    pub fn col_rows(&self) -> usize {
        self.in_channels * self.kernel_volume()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_dims[0], self.out_dims[1], self.out_dims[2]]
    }

    /// `N * C_out * T_o * H_o * W_o * C_in * k_t * k_h * k_w`.
    pub fn macs(&self) -> u64 {
        (self.batch * self.out_channels * self.out_cells() * self.col_rows()) as u64
    }
}

/// Range of output positions `o` whose input index `o*s + k - p` lies in `[0, d)`.
fn valid_range(out: usize, d: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    // lo = ceil((p - k) / s) when p > k
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    // o*s + k - p < d  <=>  o*s < d + p - k
    let hi = if d + p > k { (d + p - k).div_ceil(s) } else { 0 };
    (lo.min(out), hi.min(out).max(lo.min(out)))
}

/// Bytes of im2col scratch per chunk; sized to stay resident in L2.
const CHUNK_BYTES: usize = 256 * 1024;
/// Lower bound on GEMM columns per chunk so narrow layers still fill the
/// kernels' column blocks.
const MIN_CHUNK_COLS: usize = 512;

/// Input `(t, h)` row feeding output row `r` through kernel taps `(a, b)`,
/// or `None` when it falls in the zero padding.
#[inline]
fn source_row(g: &Conv3dGeometry, r: usize, a: usize, b: usize) -> Option<usize> {
    let ho = g.out_dims[1];
    let (ot, oh) = (r / ho, r % ho);
    let it = (ot * g.stride[0] + a).checked_sub(g.padding[0]).filter(|&v| v < g.in_dims[0])?;
    let ih = (oh * g.stride[1] + b).checked_sub(g.padding[1]).filter(|&v| v < g.in_dims[1])?;
    Some(it * g.in_dims[1] + ih)
}

/// Fills output rows `r0..r1` of one sample into `col`, whose rows are `ld`
/// elements apart (`col` starts at the segment's first column).
pub(crate) fn im2col_rows<T: Element>(x: &[T], g: &Conv3dGeometry, r0: usize, r1: usize, col: &mut [T], ld: usize) {
    let wd = g.in_dims[2];
    let wo = g.out_dims[2];
    let [kt, kh, kw] = g.kernel;
    let (sw, pw) = (g.stride[2], g.padding[2]);
    let in_cells = g.in_cells();
    for ci in 0..g.in_channels {
        let xc = &x[ci * in_cells..][..in_cells];
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let (w_lo, w_hi) = valid_range(wo, wd, c, sw, pw);
                    let row = ((ci * kt + a) * kh + b) * kw + c;
                    let dst = &mut col[row * ld..];
                    for r in r0..r1 {
                        let line = &mut dst[(r - r0) * wo..][..wo];
                        let Some(src_row) = source_row(g, r, a, b) else {
                            line.fill(T::zero());
                            continue;
                        };
                        let src = &xc[src_row * wd..][..wd];
                        line[..w_lo].fill(T::zero());
                        line[w_hi..].fill(T::zero());
                        if sw == 1 {
                            let start = w_lo + c - pw;
                            line[w_lo..w_hi].copy_from_slice(&src[start..start + (w_hi - w_lo)]);
                        } else {
                            for ow in w_lo..w_hi {
                                line[ow] = src[ow * sw + c - pw];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds the `col` segment for output rows `r0..r1` into one sample's
/// input gradient.
pub(crate) fn col2im_rows<T: Element>(col: &[T], g: &Conv3dGeometry, r0: usize, r1: usize, ld: usize, dx: &mut [T]) {
    let wd = g.in_dims[2];
    let wo = g.out_dims[2];
    let [kt, kh, kw] = g.kernel;
    let (sw, pw) = (g.stride[2], g.padding[2]);
    let in_cells = g.in_cells();
    for ci in 0..g.in_channels {
        let dxc = &mut dx[ci * in_cells..][..in_cells];
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let (w_lo, w_hi) = valid_range(wo, wd, c, sw, pw);
                    let row = ((ci * kt + a) * kh + b) * kw + c;
                    let src = &col[row * ld..];
                    for r in r0..r1 {
                        let Some(src_row) = source_row(g, r, a, b) else { continue };
                        let line = &src[(r - r0) * wo..][..wo];
                        let dst = &mut dxc[src_row * wd..][..wd];
                        if sw == 1 {
                            let start = w_lo + c - pw;
                            for (d, &v) in dst[start..start + (w_hi - w_lo)].iter_mut().zip(&line[w_lo..w_hi]) {
                                *d += v;
                            }
                        } else {
                            for ow in w_lo..w_hi {
                                dst[ow * sw + c - pw] += line[ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Part of a chunk lying in one sample: output rows `r0..r1` of sample `n`,
/// starting at GEMM column `offset`.
#[derive(Clone, Copy, Debug)]
struct Segment {
    n: usize,
    r0: usize,
    r1: usize,
    offset: usize,
}

/// Splits the `batch * T_o * H_o` output rows into chunks of whole rows,
/// each chunk being a list of per-sample segments.
fn chunk_plan<T>(g: &Conv3dGeometry) -> Vec<(usize, Vec<Segment>)> {
    let rows = g.out_dims[0] * g.out_dims[1];
    let wo = g.out_dims[2].max(1);
    let by_bytes = CHUNK_BYTES / (g.col_rows() * std::mem::size_of::<T>()).max(1);
    let rows_per_chunk = (by_bytes.max(MIN_CHUNK_COLS) / wo).max(1);
    let total = g.batch * rows;
    let mut plan = Vec::new();
    let mut start = 0;
    while start < total {
        let end = (start + rows_per_chunk).min(total);
        let mut segs = Vec::new();
        let mut gr = start;
        while gr < end {
            let (n, r0) = (gr / rows, gr % rows);
            let r1 = rows.min(r0 + (end - gr));
            segs.push(Segment { n, r0, r1, offset: (gr - start) * wo });
            gr += r1 - r0;
        }
        plan.push(((end - start) * wo, segs));
        start = end;
    }
    plan
}

fn forward_im2col<T: Element>(x: &[T], w: &[T], g: &Conv3dGeometry, out: &mut [T]) {
    let cells = g.out_cells();
    let in_len = g.in_channels * g.in_cells();
    let co = g.out_channels;
    let k = g.col_rows();
    let wo = g.out_dims[2];
    let mut col = Vec::new();
    let mut ybuf = Vec::new();
    for (ncols, segs) in chunk_plan::<T>(g) {
        col.resize(k * ncols, T::zero());
        ybuf.resize(co * ncols, T::zero());
        for s in &segs {
            im2col_rows(&x[s.n * in_len..][..in_len], g, s.r0, s.r1, &mut col[s.offset..], ncols);
        }
        kernels::gemm_nn(co, k, ncols, w, k, 1, &col, &kernels::dense_rows(k, ncols), &mut ybuf);
        for s in &segs {
            let len = (s.r1 - s.r0) * wo;
            for c in 0..co {
                out[(s.n * co + c) * cells + s.r0 * wo..][..len].copy_from_slice(&ybuf[c * ncols + s.offset..][..len]);
            }
        }
    }
}

fn backward_im2col<T: Element>(
    x: &[T],
    w: &[T],
    g: &Conv3dGeometry,
    dy: &[T],
    mut dw: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
) {
    let cells = g.out_cells();
    let k = g.col_rows();
    let wo = g.out_dims[2];
    let co = g.out_channels;
    let in_len = g.in_channels * g.in_cells();
    let mut col = Vec::new();
    let mut dybuf = Vec::new();
    for (ncols, segs) in chunk_plan::<T>(g) {
        dybuf.resize(co * ncols, T::zero());
        for s in &segs {
            let len = (s.r1 - s.r0) * wo;
            for c in 0..co {
                dybuf[c * ncols + s.offset..][..len].copy_from_slice(&dy[(s.n * co + c) * cells + s.r0 * wo..][..len]);
            }
        }
        col.resize(k * ncols, T::zero());
        if let Some(dw) = dw.as_deref_mut() {
            for s in &segs {
                im2col_rows(&x[s.n * in_len..][..in_len], g, s.r0, s.r1, &mut col[s.offset..], ncols);
            }
            let a_off = kernels::dense_rows(co, ncols);
            kernels::gemm_nt_acc(co, k, ncols, &dybuf, &a_off, &col, &kernels::dense_rows(k, ncols), dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            // reuse the buffer for dcol = W^T dY
            kernels::gemm_nn(k, co, ncols, w, 1, k, &dybuf, &kernels::dense_rows(co, ncols), &mut col);
            for s in &segs {
                col2im_rows(&col[s.offset..], g, s.r0, s.r1, ncols, &mut dx[s.n * in_len..][..in_len]);
            }
        }
    }
}

/// Minimum GEMM columns per sample for the shifted-view path.
const SHIFT_MIN_COLS: usize = 256;

/// Per-sample expanded-input layout that turns every im2col row into a
/// shifted view of one buffer.
///
/// The zero-padded input is split by stride phase along all three axes:
/// with padded index `tp = tq*st + rt` (likewise `hp`, `wp`), the buffer is
/// `Z[ci][rt][rh][rw][tq][hq][wq]`, each input element stored once. Kernel
/// tap `a` reads phase `a % st` shifted by `a / st` planes (likewise `b`,
/// `c`), so the im2col row for taps `(ci, a, b, c)` is the contiguous run of
/// `Z` starting at `block(ci, a % st, b % sh, c % sw) + ((a / st)*Hq + b / sh)*Wq + c / sw`
/// over GEMM columns `j = (ot*Hq + oh)*Wq + ow`. Columns with `oh >= Ho` or
/// `ow >= Wo` are computed and discarded.
#[derive(Clone, Debug)]
struct ShiftLayout {
    hq: usize,
    wq: usize,
    /// GEMM columns per sample.
    cols: usize,
    /// Length of one `(ci, rt, rh, rw)` block of `Z`.
    block: usize,
    /// Start of each im2col row in `Z`, in `(ci, a, b, c)` order.
    rows: Vec<usize>,
}

impl ShiftLayout {
    fn applies(g: &Conv3dGeometry) -> bool {
        Self::cols_for(g) >= SHIFT_MIN_COLS
    }

    fn phase_dims(g: &Conv3dGeometry) -> [usize; 3] {
        std::array::from_fn(|i| (g.in_dims[i] + 2 * g.padding[i]).div_ceil(g.stride[i]))
    }

    fn cols_for(g: &Conv3dGeometry) -> usize {
        let [_, hq, wq] = Self::phase_dims(g);
        let [to, ho, wo] = g.out_dims;
        ((to - 1) * hq + ho - 1) * wq + wo
    }

    fn new(g: &Conv3dGeometry) -> Self {
        let [tq, hq, wq] = Self::phase_dims(g);
        let [kt, kh, kw] = g.kernel;
        let [st, sh, sw] = g.stride;
        let block = tq * hq * wq;
        let mut rows = Vec::with_capacity(g.col_rows());
        for ci in 0..g.in_channels {
            for a in 0..kt {
                for b in 0..kh {
                    for c in 0..kw {
                        let m = ((ci * st + a % st) * sh + b % sh) * sw + c % sw;
                        rows.push(m * block + ((a / st) * hq + b / sh) * wq + c / sw);
                    }
                }
            }
        }
        ShiftLayout { hq, wq, cols: Self::cols_for(g), block, rows }
    }

    /// Number of `Z` blocks, `C_in * st * sh * sw`.
    fn blocks(g: &Conv3dGeometry) -> usize {
        g.in_channels * g.stride.iter().product::<usize>()
    }

    /// Calls `f(input_line, z_starts)` for every `W` line of the input, where
    /// `z_starts[r]` is the `Z` index that input element `w` with
    /// `(w + pw) % sw == r` lands at for `(w + pw) / sw == 0`.
    fn for_each_line(&self, g: &Conv3dGeometry, mut f: impl FnMut(usize, &[usize])) {
        let [td, hd, _] = g.in_dims;
        let [st, sh, sw] = g.stride;
        let (pt, ph) = (g.padding[0], g.padding[1]);
        let mut starts = vec![0; sw];
        for ci in 0..g.in_channels {
            for t in 0..td {
                let tp = t + pt;
                for h in 0..hd {
                    let hp = h + ph;
                    let m = ((ci * st + tp % st) * sh + hp % sh) * sw;
                    let inner = ((tp / st) * self.hq + hp / sh) * self.wq;
                    for (r, z) in starts.iter_mut().enumerate() {
                        *z = (m + r) * self.block + inner;
                    }
                    f((ci * td + t) * hd + h, &starts);
                }
            }
        }
    }
}

/// Expands one sample into its `Z` buffer (see [`ShiftLayout`]). Only the
/// positions backed by input are written; every other entry of `z` is
/// padding and must already be zero.
fn fill_z<T: Element>(x: &[T], g: &Conv3dGeometry, lay: &ShiftLayout, z: &mut [T]) {
    let wd = g.in_dims[2];
    let (sw, pw) = (g.stride[2], g.padding[2]);
    lay.for_each_line(g, |line, starts| {
        let src = &x[line * wd..][..wd];
        if sw == 1 {
            z[starts[0] + pw..][..wd].copy_from_slice(src);
        } else if sw == 2 {
            // pairwise form vectorizes; the generic strided loop does not
            let (e, o) = (starts[pw % 2] + pw / 2, starts[(pw + 1) % 2] + (pw + 1) / 2);
            let half = wd / 2;
            let (even, odd) = if e < o {
                let (lo, hi) = z.split_at_mut(o);
                (&mut lo[e..e + half + wd % 2], &mut hi[..half])
            } else {
                let (lo, hi) = z.split_at_mut(e);
                (&mut hi[..half + wd % 2], &mut lo[o..o + half])
            };
            for ((p, ev), od) in src.chunks_exact(2).zip(even.iter_mut()).zip(odd.iter_mut()) {
                *ev = p[0];
                *od = p[1];
            }
            if wd % 2 == 1 {
                even[half] = src[wd - 1];
            }
        } else {
            for (w, &v) in src.iter().enumerate() {
                z[starts[(w + pw) % sw] + (w + pw) / sw] = v;
            }
        }
    });
}

/// Adds a `Z`-shaped gradient back onto one sample's input gradient.
fn unfill_z<T: Element>(dz: &[T], g: &Conv3dGeometry, lay: &ShiftLayout, dx: &mut [T]) {
    let wd = g.in_dims[2];
    let (sw, pw) = (g.stride[2], g.padding[2]);
    lay.for_each_line(g, |line, starts| {
        let dst = &mut dx[line * wd..][..wd];
        if sw == 1 {
            for (d, &v) in dst.iter_mut().zip(&dz[starts[0] + pw..][..wd]) {
                *d += v;
            }
        } else if sw == 2 {
            let half = wd / 2;
            let even = &dz[starts[pw % 2] + pw / 2..][..half + wd % 2];
            let odd = &dz[starts[(pw + 1) % 2] + (pw + 1) / 2..][..half];
            for ((p, &ev), &od) in dst.chunks_exact_mut(2).zip(even).zip(odd) {
                p[0] += ev;
                p[1] += od;
            }
            if wd % 2 == 1 {
                dst[wd - 1] += even[half];
            }
        } else {
            for (w, d) in dst.iter_mut().enumerate() {
                *d += dz[starts[(w + pw) % sw] + (w + pw) / sw];
            }
        }
    });
}

fn forward_shift<T: Element>(x: &[T], w: &[T], g: &Conv3dGeometry, out: &mut [T]) {
    let lay = ShiftLayout::new(g);
    let (co, k, n) = (g.out_channels, g.col_rows(), lay.cols);
    let [to, ho, wo] = g.out_dims;
    let cells = g.out_cells();
    let in_len = g.in_channels * g.in_cells();
    let mut z = vec![T::zero(); ShiftLayout::blocks(g) * lay.block];
    let mut ybuf = vec![T::zero(); co * n];
    for s in 0..g.batch {
        fill_z(&x[s * in_len..][..in_len], g, &lay, &mut z);
        kernels::gemm_nn(co, k, n, w, k, 1, &z, &lay.rows, &mut ybuf);
        for c in 0..co {
            let dst = &mut out[(s * co + c) * cells..][..cells];
            for ot in 0..to {
                for oh in 0..ho {
                    dst[(ot * ho + oh) * wo..][..wo].copy_from_slice(&ybuf[c * n + (ot * lay.hq + oh) * lay.wq..][..wo]);
                }
            }
        }
    }
}

fn backward_shift<T: Element>(
    x: &[T],
    w: &[T],
    g: &Conv3dGeometry,
    dy: &[T],
    mut dw: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
) {
    let lay = ShiftLayout::new(g);
    let (co, k, n) = (g.out_channels, g.col_rows(), lay.cols);
    let [to, ho, wo] = g.out_dims;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let (hq, wq) = (lay.hq, lay.wq);
    let cells = g.out_cells();
    let in_len = g.in_channels * g.in_cells();
    // most taps of any phase along each axis
    let (qa_n, qb_n, qc_n) = ((kt - 1) / st + 1, (kh - 1) / sh + 1, (kw - 1) / sw + 1);
    // dY rows in GEMM-column order, with a zero margin in front wide enough
    // for the largest tap shift and zeros behind up to a full Z block.
    let margin = ((qa_n - 1) * hq + qb_n - 1) * wq + qc_n - 1;
    let row_len = margin + lay.block;
    let mut dyp = vec![T::zero(); co * row_len];
    let dy_rows: Vec<usize> = (0..co).map(|c| c * row_len + margin).collect();
    let mut z = Vec::new();
    // dZ[(ci, rt, rh, rw)] = sum over (co, qa, qb, qc) of
    //   W[co, ci, qa*st + rt, qb*sh + rh, qc*sw + rw] * dY[co] shifted by (qa, qb, qc)
    // One GEMM per phase (rt, rh, rw), over only the taps that phase has.
    let mut phases = Vec::new();
    let mut dz = Vec::new();
    let mut tmp = Vec::new();
    let cin = g.in_channels;
    let taps_on = |k: usize, s: usize, r: usize| if r < k { (k - r).div_ceil(s) } else { 0 };
    if dw.is_some() {
        z = vec![T::zero(); ShiftLayout::blocks(g) * lay.block];
    }
    if dx.is_some() {
        dz = vec![T::zero(); ShiftLayout::blocks(g) * lay.block];
        tmp = vec![T::zero(); cin * lay.block];
        for rt in 0..st {
            for rh in 0..sh {
                for rw in 0..sw {
                    let (na, nb, nc) = (taps_on(kt, st, rt), taps_on(kh, sh, rh), taps_on(kw, sw, rw));
                    let taps = co * na * nb * nc;
                    if taps == 0 {
                        continue;
                    }
                    let mut wt = Vec::with_capacity(cin * taps);
                    for ci in 0..cin {
                        for o in 0..co {
                            for qa in 0..na {
                                for qb in 0..nb {
                                    for qc in 0..nc {
                                        let (a, b, c) = (qa * st + rt, qb * sh + rh, qc * sw + rw);
                                        wt.push(w[o * k + ((ci * kt + a) * kh + b) * kw + c]);
                                    }
                                }
                            }
                        }
                    }
                    let mut shifted = Vec::with_capacity(taps);
                    for o in 0..co {
                        for qa in 0..na {
                            for qb in 0..nb {
                                for qc in 0..nc {
                                    shifted.push(o * row_len + margin - ((qa * hq + qb) * wq + qc));
                                }
                            }
                        }
                    }
                    phases.push(((rt * sh + rh) * sw + rw, taps, wt, shifted));
                }
            }
        }
    }
    for s in 0..g.batch {
        for c in 0..co {
            let src = &dy[(s * co + c) * cells..][..cells];
            for ot in 0..to {
                for oh in 0..ho {
                    dyp[dy_rows[c] + (ot * hq + oh) * wq..][..wo].copy_from_slice(&src[(ot * ho + oh) * wo..][..wo]);
                }
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            fill_z(&x[s * in_len..][..in_len], g, &lay, &mut z);
            kernels::gemm_nt_acc(co, k, n, &dyp, &dy_rows, &z, &lay.rows, dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let nphase = st * sh * sw;
            for (p, taps, wt, shifted) in &phases {
                kernels::gemm_nn(cin, *taps, lay.block, wt, *taps, 1, &dyp, shifted, &mut tmp);
                for ci in 0..cin {
                    dz[(ci * nphase + p) * lay.block..][..lay.block].copy_from_slice(&tmp[ci * lay.block..][..lay.block]);
                }
            }
            unfill_z(&dz, g, &lay, &mut dx[s * in_len..][..in_len]);
        }
    }
}

impl<T: Element> Graph<T> {
    /// 3D convolution with zero padding over `[N, C, T, H, W]` input.
    pub fn conv3d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        let geom = Conv3dGeometry::new(self.shape(input), self.shape(weight), stride, padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.out_channels] {
                return Err(config_err(format!(
                    "conv3d bias shape {:?} does not match C_out={}",
                    self.shape(b),
                    geom.out_channels
                )));
            }
        }
        let x = self.value(input);
        if !x.is_finite() {
            return Err(TensorError::Numeric("conv3d input contains non-finite values".into()));
        }
        let cells = geom.out_cells();
        let w = self.value(weight).data();
        let mut out = vec![T::zero(); geom.batch * geom.out_channels * cells];
        if ShiftLayout::applies(&geom) {
            forward_shift(x.data(), w, &geom, &mut out);
        } else {
            forward_im2col(x.data(), w, &geom, &mut out);
        }
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (i, chunk) in out.chunks_mut(cells).enumerate() {
                let bc = bv[i % geom.out_channels];
                chunk.iter_mut().for_each(|v| *v += bc);
            }
        }
        self.record_macs("conv3d", geom.macs());
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        let rg = self.any_grad(&inputs);
        let value = Tensor::from_parts(geom.output_shape(), out);
        Ok(self.push_node(value, Op::Conv3d { input, weight, bias, geom }, rg))
    }
}

/// Weight, bias and input gradients. The expanded input is rebuilt from the
/// stored input rather than kept from the forward pass.
pub(crate) fn conv3d_backward<T: Element>(
    graph: &Graph<T>,
    input: Var,
    weight: Var,
    bias: Option<Var>,
    geom: &Conv3dGeometry,
    out_grad: &[T],
) -> Vec<(Var, Vec<T>)> {
    let cells = geom.out_cells();
    let co = geom.out_channels;
    let want_w = graph.requires_grad(weight);
    let want_x = graph.requires_grad(input);
    let x = graph.value(input).data();
    let w = graph.value(weight).data();
    let mut dw = if want_w { vec![T::zero(); co * geom.col_rows()] } else { Vec::new() };
    let mut dx = if want_x { vec![T::zero(); geom.batch * geom.in_channels * geom.in_cells()] } else { Vec::new() };
    if want_w || want_x {
        let dw_opt = want_w.then_some(dw.as_mut_slice());
        let dx_opt = want_x.then_some(dx.as_mut_slice());
        if ShiftLayout::applies(geom) {
            backward_shift(x, w, geom, out_grad, dw_opt, dx_opt);
        } else {
            backward_im2col(x, w, geom, out_grad, dw_opt, dx_opt);
        }
    }
    let mut result = Vec::new();
    if want_w {
        result.push((weight, dw));
    }
    if let Some(b) = bias {
        if graph.requires_grad(b) {
            let mut db = vec![T::zero(); co];
            for (i, chunk) in out_grad.chunks(cells).enumerate() {
                db[i % co] += chunk.iter().copied().fold(T::zero(), |acc, v| acc + v);
            }
            result.push((b, db));
        }
    }
    if want_x {
        result.push((input, dx));
    }
    result
}
