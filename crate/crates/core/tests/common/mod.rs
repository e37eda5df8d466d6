//! Naive reference implementations used as test oracles. Each one is a
//! direct loop over the defining formula and shares no code with the
//! library.

#![allow(dead_code)]

/// Row-major `[r × k] · [k × c]`.
pub fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * c + j];
            }
            out[i * c + j] = s;
        }
    }
    out
}

pub struct AttentionOracle {
    /// `[rows × d]`
    pub out: Vec<f64>,
    /// `[batch][head][query][key]`
    pub probs: Vec<f64>,
}

/// Multi-head self-attention with a separate loop per head. `mask[j]`
/// false removes key `j` from every softmax.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    x: &[f64],
    batch: usize,
    l: usize,
    d: usize,
    heads: usize,
    w: [&[f64]; 4],
    mask: Option<&[bool]>,
) -> AttentionOracle {
    let rows = batch * l;
    let q = matmul(x, w[0], rows, d, d);
    let k = matmul(x, w[1], rows, d, d);
    let v = matmul(x, w[2], rows, d, d);
    let dk = d / heads;
    let mut concat = vec![0.0; rows * d];
    let mut probs = vec![0.0; batch * heads * l * l];
    for b in 0..batch {
        for h in 0..heads {
            for i in 0..l {
                let mut logits = Vec::new();
                for j in 0..l {
                    if mask.is_some_and(|m| !m[b * l + j]) {
                        continue;
                    }
                    let mut s = 0.0;
                    for c in 0..dk {
                        s += q[(b * l + i) * d + h * dk + c] * k[(b * l + j) * d + h * dk + c];
                    }
                    logits.push((j, s / (dk as f64).sqrt()));
                }
                let top = logits.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|p| (p.1 - top).exp()).sum();
                for &(j, s) in &logits {
                    let p = (s - top).exp() / z;
                    probs[((b * heads + h) * l + i) * l + j] = p;
                    for c in 0..dk {
                        concat[(b * l + i) * d + h * dk + c] += p * v[(b * l + j) * d + h * dk + c];
                    }
                }
            }
        }
    }
    AttentionOracle {
        out: matmul(&concat, w[3], rows, d, d),
        probs,
    }
}

/// Mean over real rows followed by max over real rows, per example.
pub fn mean_max(z: &[f64], batch: usize, l: usize, d: usize, mask: &[bool]) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * 2 * d);
    for b in 0..batch {
        let real: Vec<usize> = (0..l).filter(|&i| mask[b * l + i]).collect();
        let n = real.len() as f64;
        for c in 0..d {
            out.push(real.iter().map(|&i| z[(b * l + i) * d + c]).sum::<f64>() / n);
        }
        for c in 0..d {
            out.push(real.iter().map(|&i| z[(b * l + i) * d + c]).fold(f64::NEG_INFINITY, f64::max));
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of a GRU next-item model in plain vectors.
pub struct GruWeights<'a> {
    pub d: usize,
    pub v: usize,
    pub embedding: &'a [f64],
    /// Input, recurrent and bias terms for the z, r and candidate gates.
    pub w: [&'a [f64]; 3],
    pub u: [&'a [f64]; 3],
    pub b: [&'a [f64]; 3],
    pub out_w: &'a [f64],
    pub out_b: &'a [f64],
}

/// One GRU update for a single example, scalar by scalar.
pub fn gru_cell(p: &GruWeights<'_>, x: &[f64], h: &[f64]) -> Vec<f64> {
    let d = p.d;
    let pre = |g: usize, state: &[f64], j: usize| -> f64 {
        let mut s = p.b[g][j];
        for i in 0..d {
            s += x[i] * p.w[g][i * d + j] + state[i] * p.u[g][i * d + j];
        }
        s
    };
    let z: Vec<f64> = (0..d).map(|j| sigmoid(pre(0, h, j))).collect();
    let r: Vec<f64> = (0..d).map(|j| sigmoid(pre(1, h, j))).collect();
    let rh: Vec<f64> = (0..d).map(|j| r[j] * h[j]).collect();
    (0..d)
        .map(|j| {
            let cand = pre(2, &rh, j).tanh();
            (1.0 - z[j]) * h[j] + z[j] * cand
        })
        .collect()
}

/// Logits after running the cell over `items` from a zero state, with the
/// final state optionally scaled element-wise by `cross`.
pub fn gru_logits(p: &GruWeights<'_>, items: &[usize], cross: Option<&[f64]>) -> Vec<f64> {
    let mut h = vec![0.0; p.d];
    for &id in items {
        h = gru_cell(p, &p.embedding[id * p.d..(id + 1) * p.d], &h);
    }
    if let Some(c) = cross {
        h.iter_mut().zip(c).for_each(|(a, b)| *a *= b);
    }
    let mut logits = matmul(&h, p.out_w, 1, p.d, p.v);
    logits.iter_mut().zip(p.out_b).for_each(|(a, b)| *a += b);
    logits
}

/// Contextual item-similarity score of every id, recounted from the raw
/// orders for each query. `orders` holds `(items, context ids)`; ids 0 and
/// 1 are reserved and score 0.
pub fn itemcf_scores(
    orders: &[(Vec<usize>, Vec<usize>)],
    v: usize,
    basket: &[usize],
    context: &[usize],
) -> Vec<f64> {
    let holds = |o: &(Vec<usize>, Vec<usize>), i: usize| o.0.contains(&i);
    let occurrences = |i: usize| orders.iter().filter(|o| holds(o, i)).count() as f64;
    let both = |a: usize, b: usize| orders.iter().filter(|o| holds(o, a) && holds(o, b)).count() as f64;
    let mut scores = vec![0.0; v];
    for (c, score) in scores.iter_mut().enumerate().skip(2) {
        let affinity: f64 = if basket.is_empty() {
            1.0
        } else {
            basket
                .iter()
                .map(|&b| {
                    let denom = (occurrences(b) * occurrences(c)).sqrt();
                    if denom == 0.0 {
                        0.0
                    } else {
                        both(b, c) / denom
                    }
                })
                .sum()
        };
        let mut factor = 1.0;
        for (f, &value) in context.iter().enumerate() {
            let in_context: Vec<&(Vec<usize>, Vec<usize>)> = orders.iter().filter(|o| o.1[f] == value).collect();
            let n = in_context.iter().filter(|o| holds(o, c)).count() as f64;
            let mut total = 0.0;
            for o in &in_context {
                let mut distinct = o.0.clone();
                distinct.retain(|&i| i >= 2);
                distinct.sort_unstable();
                distinct.dedup();
                total += distinct.len() as f64;
            }
            factor *= (n + 1.0) / (total + v as f64);
        }
        *score = affinity * factor;
    }
    scores
}

/// Ids ranked by descending score, ties to the smaller id, reserved ids
/// left out.
pub fn rank_ids(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (2..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    ids
}

/// Largest element-wise `|a - b|`.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
