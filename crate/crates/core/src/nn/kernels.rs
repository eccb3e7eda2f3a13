//! Slice-level numeric kernels.
//!
//! These are the only places the forward math lives. Both the autodiff graph
//! and the inference path call into them, so a graph forward and an inference
//! forward over the same weights agree bit-for-bit.
//!
//! Matrix products accumulate every output element in a fixed order (over the
//! inner dimension, ascending) so results never depend on tiling.

use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

const MR: usize = 4;
const NR: usize = 8;

/// `out = a · b` with `a: m×k`, `b: k×n`.
///
/// Register-blocked over `MR×NR` output tiles. Every output element is summed
/// over `p = 0..k` in order, starting from zero, whatever tile it falls in.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(T::zero());
    gemm_tiles(|i, p| a[i * k + p], b, m, k, n, out);
}

/// `out += aᵀ · b` with `a: k×m`, `b: k×n`, `out: m×n`.
pub fn matmul_at_b_acc<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    gemm_tiles(|i, p| a[p * m + i], b, m, k, n, out);
}

/// `out[i][j] += Σ_p a(i, p) · b[p][j]`, accumulated in increasing `p`.
#[inline(always)]
fn gemm_tiles<T: Scalar>(a: impl Fn(usize, usize) -> T, b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    let m_main = m / MR * MR;
    let n_main = n / NR * NR;
    let mut panel = vec![T::zero(); k * MR];
    for i0 in (0..m_main).step_by(MR) {
        for (p, chunk) in panel.chunks_exact_mut(MR).enumerate() {
            for (r, v) in chunk.iter_mut().enumerate() {
                *v = a(i0 + r, p);
            }
        }
        for j0 in (0..n_main).step_by(NR) {
            let mut acc = [[T::zero(); NR]; MR];
            for (r, acc_row) in acc.iter_mut().enumerate() {
                acc_row.copy_from_slice(&out[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR]);
            }
            for (p, a_col) in panel.chunks_exact(MR).enumerate() {
                let b_row: &[T; NR] = b[p * n + j0..].first_chunk().expect("tile width");
                for (acc_row, &av) in acc.iter_mut().zip(a_col) {
                    for c in 0..NR {
                        acc_row[c] += av * b_row[c];
                    }
                }
            }
            for (r, acc_row) in acc.iter().enumerate() {
                out[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(acc_row);
            }
        }
        for r in 0..MR {
            scalar_tail(&a, b, i0 + r, n_main, k, n, out);
        }
    }
    for i in m_main..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a(i, p), &b[p * n..(p + 1) * n], out_row);
        }
    }
}

#[inline(always)]
fn scalar_tail<T: Scalar>(a: &impl Fn(usize, usize) -> T, b: &[T], i: usize, j_from: usize, k: usize, n: usize, out: &mut [T]) {
    for j in j_from..n {
        let mut acc = out[i * n + j];
        for p in 0..k {
            acc += a(i, p) * b[p * n + j];
        }
        out[i * n + j] = acc;
    }
}

/// `out = a · bᵀ` with `a: m×k`, `b: n×k`.
pub fn matmul_a_bt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(b.len(), n * k);
    let bt = transpose(b, n, k);
    matmul(a, &bt, m, k, n, out);
}

pub fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Adds `bias` (length `cols`) to every row.
pub fn add_row_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Numerically stable softmax of each row, in place.
pub fn softmax_rows_in_place<T: Scalar>(x: &mut [T], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        softmax_in_place(row);
    }
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = sum.recip();
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Softmax with exponentials, normalizer and division carried in `f64`, so
/// each output holds only its own final rounding error.
pub fn softmax_wide_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for (v, e) in row.iter_mut().zip(exps) {
        *v = T::lit(e / sum);
    }
}

/// Per-row statistics cached by [`layer_norm`] for the backward pass.
#[derive(Debug, Clone)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Row-wise layer normalisation with affine gain and bias.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    cols: usize,
    out: &mut [T],
) -> NormStats<T> {
    let rows = x.len() / cols;
    let n = T::lit(cols as f64);
    let eps = T::lit(LAYER_NORM_EPS);
    let mut stats = NormStats {
        mean: Vec::with_capacity(rows),
        rstd: Vec::with_capacity(rows),
    };
    for (xr, or) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = (var + eps).sqrt().recip();
        for j in 0..cols {
            or[j] = (xr[j] - mean) * rstd * gain[j] + bias[j];
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    stats
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp` of a non-positive argument.
#[inline]
fn tanh_exp<T: Scalar>(x: T) -> T {
    let e = (T::lit(-2.0) * x.abs()).exp();
    let t = (T::one() - e) / (T::one() + e);
    if x < T::zero() {
        -t
    } else {
        t
    }
}

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + tanh_exp(c * (x + a * x * x * x)))
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let inner = c * (x + a * x * x * x);
    let t = tanh_exp(inner);
    let dinner = c * (T::one() + T::lit(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

/// Contiguous sequences packed into one row-major activation matrix.
///
/// Attention never crosses a segment boundary and positions restart at zero in
/// every segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqLayout {
    segments: Vec<(usize, usize)>,
    total: usize,
    causal: bool,
}

impl SeqLayout {
    pub fn single(len: usize) -> Self {
        Self::from_lengths(&[len])
    }

    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut segments = Vec::with_capacity(lengths.len());
        let mut start = 0;
        for &len in lengths {
            segments.push((start, len));
            start += len;
        }
        Self {
            segments,
            total: start,
            causal: true,
        }
    }

    /// Lets every row attend to its whole segment.
    pub fn bidirectional(mut self) -> Self {
        self.causal = false;
        self
    }

    pub fn is_causal(&self) -> bool {
        self.causal
    }

    fn visible(&self, i: usize, len: usize) -> usize {
        if self.causal {
            i + 1
        } else {
            len
        }
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn total_rows(&self) -> usize {
        self.total
    }

    /// `(start, len)` of the segment containing `row`.
    pub fn segment_of(&self, row: usize) -> (usize, usize) {
        let idx = self.segments.partition_point(|&(s, _)| s <= row) - 1;
        self.segments[idx]
    }

    /// Index of the last row of every segment.
    pub fn last_rows(&self) -> Vec<usize> {
        self.segments.iter().map(|&(s, l)| s + l - 1).collect()
    }

    /// Position-within-segment for every row.
    pub fn positions(&self) -> Vec<usize> {
        self.segments.iter().flat_map(|&(_, l)| 0..l).collect()
    }
}

/// Attention probabilities for every (segment, head), each `len×len`
/// row-major; entries a row cannot see stay zero.
pub type AttentionProbs<T> = Vec<Vec<T>>;

/// Multi-head self-attention core, causal unless the layout says otherwise.
///
/// `qkv` is `rows × 3d` laid out as `[Q | K | V]`; writes the concatenated
/// head outputs into `out` (`rows × d`).
pub fn causal_attention<T: Scalar>(
    qkv: &[T],
    layout: &SeqLayout,
    d: usize,
    n_heads: usize,
    out: &mut [T],
) -> AttentionProbs<T> {
    let mut all_probs = Vec::with_capacity(layout.segments().len() * n_heads);
    out.fill(T::zero());
    for &(start, len) in layout.segments() {
        for h in 0..n_heads {
            let mut probs = vec![T::zero(); len * len];
            for i in 0..len {
                let vis = layout.visible(i, len);
                attend_row(
                    qkv,
                    d,
                    n_heads,
                    h,
                    start,
                    i,
                    &mut probs[i * len..i * len + vis],
                    &mut out[(start + i) * d..(start + i + 1) * d],
                );
            }
            all_probs.push(probs);
        }
    }
    all_probs
}

/// Attention output for the listed rows only (`rows.len() × d`), identical
/// bit-for-bit to the matching rows of [`causal_attention`].
pub fn attention_rows<T: Scalar>(
    qkv: &[T],
    layout: &SeqLayout,
    d: usize,
    n_heads: usize,
    rows: &[usize],
    out: &mut [T],
) {
    out.fill(T::zero());
    for (o, &row) in rows.iter().enumerate() {
        let (start, len) = layout.segment_of(row);
        let i = row - start;
        let vis = layout.visible(i, len);
        let mut scratch = vec![T::zero(); vis];
        for h in 0..n_heads {
            attend_row(qkv, d, n_heads, h, start, i, &mut scratch, &mut out[o * d..(o + 1) * d]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn attend_row<T: Scalar>(
    qkv: &[T],
    d: usize,
    n_heads: usize,
    h: usize,
    start: usize,
    i: usize,
    probs_row: &mut [T],
    out_row: &mut [T],
) {
    let dh = d / n_heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let stride = 3 * d;
    let qi = &qkv[(start + i) * stride + h * dh..][..dh];
    for (j, p) in probs_row.iter_mut().enumerate() {
        let kj = &qkv[(start + j) * stride + d + h * dh..][..dh];
        *p = dot(qi, kj) * scale;
    }
    softmax_in_place(probs_row);
    let out_head = &mut out_row[h * dh..(h + 1) * dh];
    for (j, &p) in probs_row.iter().enumerate() {
        let vj = &qkv[(start + j) * stride + 2 * d + h * dh..][..dh];
        axpy(p, vj, out_head);
    }
}

/// Accumulates `d qkv` for [`causal_attention`] given `d out`.
pub fn causal_attention_backward<T: Scalar>(
    qkv: &[T],
    probs: &AttentionProbs<T>,
    grad_out: &[T],
    layout: &SeqLayout,
    d: usize,
    n_heads: usize,
    grad_qkv: &mut [T],
) {
    let dh = d / n_heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let stride = 3 * d;
    let mut idx = 0;
    for &(start, len) in layout.segments() {
        for h in 0..n_heads {
            let p = &probs[idx];
            idx += 1;
            let q_off = h * dh;
            let k_off = d + h * dh;
            let v_off = 2 * d + h * dh;
            let mut dscore = vec![T::zero(); len];
            for i in 0..len {
                let go = &grad_out[(start + i) * d + h * dh..][..dh];
                let vis = layout.visible(i, len);
                let prow = &p[i * len..i * len + vis];
                // dP_ij = dO_i · V_j ; dV_j += P_ij dO_i
                let mut weighted = T::zero();
                for j in 0..vis {
                    let vj = &qkv[(start + j) * stride + v_off..][..dh];
                    let dp = dot(go, vj);
                    dscore[j] = dp;
                    weighted += dp * prow[j];
                    let gv = &mut grad_qkv[(start + j) * stride + v_off..][..dh];
                    axpy(prow[j], go, gv);
                }
                for j in 0..vis {
                    let ds = prow[j] * (dscore[j] - weighted) * scale;
                    let kj_start = (start + j) * stride + k_off;
                    let qi_start = (start + i) * stride + q_off;
                    for t in 0..dh {
                        let kj = qkv[kj_start + t];
                        let qi = qkv[qi_start + t];
                        grad_qkv[qi_start + t] += ds * kj;
                        grad_qkv[kj_start + t] += ds * qi;
                    }
                }
            }
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}
