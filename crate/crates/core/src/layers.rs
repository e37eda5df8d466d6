//! Transformer building blocks expressed as tape operations.
//!
//! Sequence tensors are batched as `[batch·L × d]` matrices; a
//! [`SeqLayout`] says how the rows split into examples. Single-example
//! calls use `batch = 1`.

use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::kernels::SeqLayout;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Per-position flags: `true` is a real item, `false` is padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddingMask(Vec<bool>);

impl PaddingMask {
    /// Validates that real positions form a non-empty contiguous prefix.
    pub fn new(flags: Vec<bool>) -> Result<Self> {
        let real = flags.iter().take_while(|&&f| f).count();
        if real == 0 {
            return Err(Error::contract("padding mask has no real position"));
        }
        if flags[real..].iter().any(|&f| f) {
            return Err(Error::contract("real positions must form a contiguous prefix"));
        }
        Ok(PaddingMask(flags))
    }

    /// `real` leading true flags followed by padding up to `len`.
    pub fn prefix(real: usize, len: usize) -> Result<Self> {
        Self::new((0..len).map(|i| i < real).collect())
    }

    pub fn all_real(len: usize) -> Self {
        PaddingMask(vec![true; len])
    }

    pub fn real_count(&self) -> usize {
        self.0.iter().filter(|&&f| f).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }
}

/// Tape handles for one multi-head self-attention sublayer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub heads: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForwardParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub slope: f64,
}

pub fn embedding_lookup<F: Real>(tape: &mut Tape<'_, F>, table: Var, ids: &[usize]) -> Result<Var> {
    tape.gather(table, ids)
}

pub fn add_positional<F: Real>(tape: &mut Tape<'_, F>, x: Var, pos_table: Var, seq_len: usize) -> Result<Var> {
    tape.add_positional(x, pos_table, seq_len)
}

/// `Concat(head_1..head_h)·W_O` with `head_i = softmax(Q_i K_iᵀ/√d_k) V_i`.
/// Padded key positions are excluded through `mask`; padded query rows are
/// still computed and are expected to be dropped by pooling.
pub fn multi_head_self_attention<F: Real>(
    tape: &mut Tape<'_, F>,
    x: Var,
    p: &AttentionParams,
    layout: SeqLayout,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let q = tape.matmul(x, p.w_q)?;
    let k = tape.matmul(x, p.w_k)?;
    let v = tape.matmul(x, p.w_v)?;
    let heads = tape.attention(q, k, v, layout, p.heads, mask)?;
    let out = tape.matmul(heads, p.w_o)?;
    Ok((out, heads))
}

/// Position-wise `W2·act(W1·x + b1) + b2`.
pub fn feed_forward<F: Real>(tape: &mut Tape<'_, F>, x: Var, p: &FeedForwardParams) -> Result<Var> {
    let h = tape.matmul(x, p.w1)?;
    let h = tape.add_row_bias(h, p.b1)?;
    let h = tape.leaky_relu(h, p.slope);
    let y = tape.matmul(h, p.w2)?;
    tape.add_row_bias(y, p.b2)
}

pub fn layer_norm<F: Real>(tape: &mut Tape<'_, F>, x: Var, gain: Var, bias: Var) -> Result<Var> {
    tape.layer_norm(x, gain, bias)
}

pub fn mean_max_pool<F: Real>(tape: &mut Tape<'_, F>, z: Var, layout: SeqLayout, mask: &[bool]) -> Result<Var> {
    tape.mean_max_pool(z, layout, mask)
}

/// Shape parameters of a Transformer encoder block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub d: usize,
    pub d_ff: usize,
    pub heads: usize,
}

/// Parameter names and shapes of one encoder block under `prefix`.
pub fn encoder_block_layout(prefix: &str, dims: BlockDims) -> Vec<(String, Vec<usize>)> {
    let BlockDims { d, d_ff, .. } = dims;
    [
        ("attn.w_q", vec![d, d]),
        ("attn.w_k", vec![d, d]),
        ("attn.w_v", vec![d, d]),
        ("attn.w_o", vec![d, d]),
        ("ln1.gain", vec![d]),
        ("ln1.bias", vec![d]),
        ("ffn.w1", vec![d, d_ff]),
        ("ffn.b1", vec![d_ff]),
        ("ffn.w2", vec![d_ff, d]),
        ("ffn.b2", vec![d]),
        ("ln2.gain", vec![d]),
        ("ln2.bias", vec![d]),
    ]
    .into_iter()
    .map(|(n, s)| (format!("{prefix}.{n}"), s))
    .collect()
}

/// Xavier matrices, zero biases and unit layer-norm gains.
pub fn init_encoder_block<F: Real>(
    store: &mut ParamStore<F>,
    prefix: &str,
    dims: BlockDims,
    rng: &mut Rng,
) -> Result<()> {
    for (name, shape) in encoder_block_layout(prefix, dims) {
        let t = if shape.len() == 2 {
            rng::xavier_uniform(rng, shape[0], shape[1])
        } else if name.ends_with(".gain") {
            Tensor::filled(&shape, F::one())
        } else {
            Tensor::zeros(&shape)
        };
        store.insert(name, t)?;
    }
    Ok(())
}

/// Tape handles for one post-norm encoder block.
#[derive(Debug, Clone, Copy)]
pub struct EncoderBlock {
    pub attn: AttentionParams,
    pub ln1: (Var, Var),
    pub ffn: FeedForwardParams,
    pub ln2: (Var, Var),
}

impl EncoderBlock {
    pub fn bind(bound: &Bound, prefix: &str, heads: usize, slope: f64) -> Result<Self> {
        let g = |n: &str| bound.get(&format!("{prefix}.{n}"));
        Ok(EncoderBlock {
            attn: AttentionParams {
                w_q: g("attn.w_q")?,
                w_k: g("attn.w_k")?,
                w_v: g("attn.w_v")?,
                w_o: g("attn.w_o")?,
                heads,
            },
            ln1: (g("ln1.gain")?, g("ln1.bias")?),
            ffn: FeedForwardParams {
                w1: g("ffn.w1")?,
                b1: g("ffn.b1")?,
                w2: g("ffn.w2")?,
                b2: g("ffn.b2")?,
                slope,
            },
            ln2: (g("ln2.gain")?, g("ln2.bias")?),
        })
    }

    /// `x → MHSA → +x → LN → FFN → + → LN`. Returns the block output and the
    /// attention node (whose saved weights can be inspected).
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        x: Var,
        layout: SeqLayout,
        mask: Option<&[bool]>,
    ) -> Result<(Var, Var)> {
        let (a, attn_node) = multi_head_self_attention(tape, x, &self.attn, layout, mask)?;
        let h = tape.add(x, a)?;
        let h = layer_norm(tape, h, self.ln1.0, self.ln1.1)?;
        let f = feed_forward(tape, h, &self.ffn)?;
        let out = tape.add(h, f)?;
        let out = layer_norm(tape, out, self.ln2.0, self.ln2.1)?;
        Ok((out, attn_node))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn padding_mask_validation() {
        assert!(PaddingMask::new(vec![true, true, false]).is_ok());
        assert!(PaddingMask::new(vec![false, false]).is_err());
        assert!(PaddingMask::new(vec![true, false, true]).is_err());
        assert_eq!(PaddingMask::prefix(2, 5).unwrap().real_count(), 2);
    }

    #[test]
    fn embedding_lookup_gathers_and_accumulates() {
        let table = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let mut tape = Tape::new();
        let tv = tape.param("table", &table).unwrap();
        let y = embedding_lookup(&mut tape, tv, &[1, 0]).unwrap();
        assert_eq!(tape.value(y), &[0.0, 1.0, 1.0, 0.0]);

        let mut tape = Tape::new();
        let tv = tape.param("table", &table).unwrap();
        let y = embedding_lookup(&mut tape, tv, &[0, 0]).unwrap();
        let w = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let yw = tape.mul(y, w).unwrap();
        let s = tape.sum(yw);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get("table").unwrap().data(), &[4.0, 6.0, 0.0, 0.0]);

        let mut tape = Tape::new();
        let tv = tape.param("table", &table).unwrap();
        assert!(matches!(
            embedding_lookup(&mut tape, tv, &[2]),
            Err(Error::Vocabulary { id: 2, size: 2, .. })
        ));
    }

    #[test]
    fn positional_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let zeros = tape.constant(Tensor::zeros(&[3, 2]));
        let y = add_positional(&mut tape, x, zeros, 2).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0]);

        let x1 = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let pos = tape.constant(t(&[3, 2], &[0.5, -0.5, 9.0, 9.0, 9.0, 9.0]));
        let y = add_positional(&mut tape, x1, pos, 1).unwrap();
        assert_eq!(tape.value(y), &[1.5, 1.5]);

        let x4 = tape.constant(Tensor::zeros(&[4, 2]));
        assert!(matches!(
            add_positional(&mut tape, x4, pos, 4),
            Err(Error::SequenceLength { len: 4, max: 3 })
        ));
    }

    #[test]
    fn single_position_attention_is_value_projection() {
        let x = t(&[1, 2], &[0.3, -0.7]);
        let wq = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let wk = t(&[2, 2], &[-1.0, 0.5, 0.2, 0.1]);
        let wv = t(&[2, 2], &[0.5, 1.5, -2.0, 1.0]);
        let wo = t(&[2, 2], &[1.0, 1.0, 0.0, 2.0]);
        let mut tape = Tape::new();
        let p = AttentionParams {
            w_q: tape.constant(wq),
            w_k: tape.constant(wk),
            w_v: tape.constant(wv.clone()),
            w_o: tape.constant(wo.clone()),
            heads: 2,
        };
        let xv = tape.constant(x.clone());
        let layout = SeqLayout { batch: 1, seq_len: 1 };
        let (y, _) = multi_head_self_attention(&mut tape, xv, &p, layout, None).unwrap();
        let v = crate::tensor::kernels::matmul(x.data(), wv.data(), 1, 2, 2);
        let expected = crate::tensor::kernels::matmul(&v, wo.data(), 1, 2, 2);
        for (a, b) in tape.value(y).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let x = t(&[3, 4], &[0.2, -0.1, 0.4, 1.0, 0.2, -0.1, 0.4, 1.0, 0.2, -0.1, 0.4, 1.0]);
        let mut r = rng::seeded(3);
        let mut tape = Tape::new();
        let p = AttentionParams {
            w_q: tape.constant(rng::xavier_uniform(&mut r, 4, 4)),
            w_k: tape.constant(rng::xavier_uniform(&mut r, 4, 4)),
            w_v: tape.constant(rng::xavier_uniform(&mut r, 4, 4)),
            w_o: tape.constant(rng::xavier_uniform(&mut r, 4, 4)),
            heads: 2,
        };
        let xv = tape.constant(x);
        let layout = SeqLayout { batch: 1, seq_len: 3 };
        let (y, node) = multi_head_self_attention(&mut tape, xv, &p, layout, None).unwrap();
        for &w in tape.attention_probs(node).unwrap() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let out = tape.value(y);
        assert_eq!(out[0..4], out[4..8]);
        assert_eq!(out[0..4], out[8..12]);
    }

    #[test]
    fn mask_length_mismatch_is_a_contract_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[3, 4]));
        let w = tape.constant(Tensor::identity(4));
        let p = AttentionParams {
            w_q: w,
            w_k: w,
            w_v: w,
            w_o: w,
            heads: 2,
        };
        let layout = SeqLayout { batch: 1, seq_len: 3 };
        let r = multi_head_self_attention(&mut tape, x, &p, layout, Some(&[true, true]));
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn feed_forward_zero_weights_and_pointwise() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 1.0, 2.0]));
        let p = FeedForwardParams {
            w1: tape.constant(Tensor::zeros(&[2, 8])),
            b1: tape.constant(Tensor::zeros(&[8])),
            w2: tape.constant(Tensor::zeros(&[8, 2])),
            b2: tape.constant(Tensor::zeros(&[2])),
            slope: 0.01,
        };
        let y = feed_forward(&mut tape, x, &p).unwrap();
        assert_eq!(tape.value(y), &[0.0; 4]);

        let mut r = rng::seeded(5);
        let p = FeedForwardParams {
            w1: tape.constant(rng::xavier_uniform(&mut r, 2, 8)),
            b1: tape.constant(rng::normal(&mut r, &[8], 0.5)),
            w2: tape.constant(rng::xavier_uniform(&mut r, 8, 2)),
            b2: tape.constant(rng::normal(&mut r, &[2], 0.5)),
            slope: 0.01,
        };
        let y = feed_forward(&mut tape, x, &p).unwrap();
        let v = tape.value(y);
        assert_eq!(v[0..2], v[2..4]);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::<f64>::new();
        let g = tape.constant(Tensor::filled(&[2], 1.0));
        let b = tape.constant(Tensor::zeros(&[2]));
        let x = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let y = layer_norm(&mut tape, x, g, b).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0]);

        let a = 0.5;
        let x = tape.constant(t(&[1, 2], &[-a, a]));
        let y = layer_norm(&mut tape, x, g, b).unwrap();
        let expected = a / (a * a + 1e-5f64).sqrt();
        assert!((tape.value(y)[0] + expected).abs() < 1e-15);
        assert!((tape.value(y)[1] - expected).abs() < 1e-15);

        let g0 = tape.constant(Tensor::zeros(&[2]));
        let b1 = tape.constant(t(&[2], &[0.25, -3.0]));
        let x = tape.constant(t(&[2, 2], &[4.0, -1.0, 7.0, 2.0]));
        let y = layer_norm(&mut tape, x, g0, b1).unwrap();
        assert_eq!(tape.value(y), &[0.25, -3.0, 0.25, -3.0]);
    }

    #[test]
    fn mean_max_pool_examples() {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(t(&[1, 3], &[1.0, -2.0, 0.5]));
        let y = mean_max_pool(&mut tape, v, SeqLayout { batch: 1, seq_len: 1 }, &[true]).unwrap();
        assert_eq!(tape.value(y), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);

        let z = tape.constant(t(&[2, 2], &[1.0, 5.0, 3.0, 1.0]));
        let y = mean_max_pool(&mut tape, z, SeqLayout { batch: 1, seq_len: 2 }, &[true, true]).unwrap();
        assert_eq!(tape.value(y), &[2.0, 3.0, 3.0, 5.0]);

        let zp = tape.constant(t(&[3, 2], &[1.0, 5.0, 3.0, 1.0, 100.0, -100.0]));
        let layout = SeqLayout { batch: 1, seq_len: 3 };
        let y = mean_max_pool(&mut tape, zp, layout, &[true, true, false]).unwrap();
        assert_eq!(tape.value(y), &[2.0, 3.0, 3.0, 5.0]);

        assert!(matches!(
            mean_max_pool(&mut tape, zp, layout, &[false, false, false]),
            Err(Error::Contract(_))
        ));
    }
}
