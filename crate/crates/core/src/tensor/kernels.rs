//! Slice-level numeric kernels shared by the tape ops and by the
//! non-differentiating inspection paths (attention dumps).

use super::Real;

/// Score written at masked key positions before the softmax.
pub const MASK_FILL: f64 = -1e9;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `a [m×k] · b [k×n]`.
pub fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `g [m×n] · bᵀ` where `b` is `[k×n]`; result `[m×k]`.
pub fn matmul_a_bt<F: Real>(g: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = dot(grow, brow);
        }
    }
    out
}

/// `aᵀ · g` where `a` is `[m×k]` and `g` is `[m×n]`; result `[k×n]`.
pub fn matmul_at_b<F: Real>(a: &[F], g: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
    out
}

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// In-place max-shifted softmax over consecutive rows of length `cols`.
pub fn softmax_rows<F: Real>(x: &mut [F], cols: usize) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Geometry of a batched sequence tensor laid out as `[batch·seq_len × width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLayout {
    pub batch: usize,
    pub seq_len: usize,
}

impl SeqLayout {
    pub fn rows(&self) -> usize {
        self.batch * self.seq_len
    }
}

/// Scaled dot-product attention for every example and head.
///
/// `q`, `k`, `v` are `[batch·L × d]`; head `h` owns columns
/// `h·d_k .. (h+1)·d_k`. Keys whose mask entry is `false` get the score
/// [`MASK_FILL`] instead of their dot product. Returns the concatenated head
/// outputs `[batch·L × d]` and the post-softmax weights laid out as
/// `[batch][head][query][key]`.
pub fn attention_forward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    layout: SeqLayout,
    d: usize,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> (Vec<F>, Vec<F>) {
    let l = layout.seq_len;
    let dk = d / heads;
    let scale = F::one() / F::lit(dk as f64).sqrt();
    let fill = F::lit(MASK_FILL);
    let mut out = vec![F::zero(); layout.rows() * d];
    let mut probs = vec![F::zero(); layout.batch * heads * l * l];
    for b in 0..layout.batch {
        for h in 0..heads {
            let c0 = h * dk;
            let pbase = (b * heads + h) * l * l;
            for i in 0..l {
                let qi = &q[(b * l + i) * d + c0..(b * l + i) * d + c0 + dk];
                let prow = &mut probs[pbase + i * l..pbase + (i + 1) * l];
                for (j, p) in prow.iter_mut().enumerate() {
                    let masked = key_mask.is_some_and(|m| !m[b * l + j]);
                    *p = if masked {
                        fill
                    } else {
                        let kj = &k[(b * l + j) * d + c0..(b * l + j) * d + c0 + dk];
                        dot(qi, kj) * scale
                    };
                }
                softmax_rows(prow, l);
                let orow = &mut out[(b * l + i) * d + c0..(b * l + i) * d + c0 + dk];
                for (j, &p) in prow.iter().enumerate() {
                    let vj = &v[(b * l + j) * d + c0..(b * l + j) * d + c0 + dk];
                    for (o, &vv) in orow.iter_mut().zip(vj) {
                        *o = *o + p * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Gradients of [`attention_forward`] with respect to `q`, `k`, `v`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Real>(
    grad_out: &[F],
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    layout: SeqLayout,
    d: usize,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let l = layout.seq_len;
    let dk = d / heads;
    let scale = F::one() / F::lit(dk as f64).sqrt();
    let n = layout.rows() * d;
    let (mut gq, mut gk, mut gv) = (vec![F::zero(); n], vec![F::zero(); n], vec![F::zero(); n]);
    let mut dp = vec![F::zero(); l];
    for b in 0..layout.batch {
        for h in 0..heads {
            let c0 = h * dk;
            let pbase = (b * heads + h) * l * l;
            for i in 0..l {
                let gi = (b * l + i) * d + c0;
                let go = &grad_out[gi..gi + dk];
                let prow = &probs[pbase + i * l..pbase + (i + 1) * l];
                for j in 0..l {
                    let vj = (b * l + j) * d + c0;
                    dp[j] = dot(go, &v[vj..vj + dk]);
                    let p = prow[j];
                    for c in 0..dk {
                        gv[vj + c] = gv[vj + c] + p * go[c];
                    }
                }
                let inner: F = prow.iter().zip(&dp).map(|(&p, &g)| p * g).sum();
                for j in 0..l {
                    if key_mask.is_some_and(|m| !m[b * l + j]) {
                        continue;
                    }
                    let ds = prow[j] * (dp[j] - inner) * scale;
                    if ds == F::zero() {
                        continue;
                    }
                    let kj = (b * l + j) * d + c0;
                    for c in 0..dk {
                        gq[gi + c] = gq[gi + c] + ds * k[kj + c];
                        gk[kj + c] = gk[kj + c] + ds * q[gi + c];
                    }
                }
            }
        }
    }
    (gq, gk, gv)
}

/// Row-wise layer normalization. Returns the output, the normalized input
/// `x̂`, and the per-row reciprocal standard deviation.
pub fn layer_norm_forward<F: Real>(
    x: &[F],
    d: usize,
    gain: &[F],
    bias: &[F],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let rows = x.len() / d;
    let eps = F::lit(LAYER_NORM_EPS);
    let dn = F::lit(d as f64);
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<F>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let xh = (row[c] - mean) * rs;
            xhat[r * d + c] = xh;
            y[r * d + c] = xh * gain[c] + bias[c];
        }
    }
    (y, xhat, rstd)
}

/// Mean and max over the real rows of each example. Output is
/// `[batch × 2d]` (mean then max); `argmax[b·d + c]` is the winning row.
pub fn mean_max_pool_forward<F: Real>(
    z: &[F],
    layout: SeqLayout,
    d: usize,
    mask: &[bool],
) -> (Vec<F>, Vec<usize>, Vec<usize>) {
    let l = layout.seq_len;
    let mut out = vec![F::zero(); layout.batch * 2 * d];
    let mut argmax = vec![0usize; layout.batch * d];
    let mut counts = vec![0usize; layout.batch];
    for b in 0..layout.batch {
        let o = &mut out[b * 2 * d..(b + 1) * 2 * d];
        let (mean, max) = o.split_at_mut(d);
        max.iter_mut().for_each(|m| *m = F::neg_infinity());
        let mut n = 0usize;
        for i in 0..l {
            if !mask[b * l + i] {
                continue;
            }
            n += 1;
            let row = &z[(b * l + i) * d..(b * l + i + 1) * d];
            for c in 0..d {
                mean[c] = mean[c] + row[c];
                if row[c] > max[c] {
                    max[c] = row[c];
                    argmax[b * d + c] = b * l + i;
                }
            }
        }
        let nf = F::lit(n as f64);
        mean.iter_mut().for_each(|m| *m = *m / nf);
        counts[b] = n;
    }
    (out, argmax, counts)
}
