//! Transformer Cross Transformer.
//!
//! ```text
//! items ─ embed + position ─ encoder × seq_layers (masked) ─ mean‖max ─┐
//!                                                                       ⊙ ─ LeakyReLU ─ W_out ─ logits
//! context fields ─ embed ─── encoder × ctx_layers ────────── mean‖max ─┘
//! ```
//!
//! Both branches pool to `2d`, so the cross and the output projection work
//! on `2d`-wide vectors.

use crate::data::{ContextVector, SeqBatch};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::layers::{self, BlockDims, EncoderBlock, PaddingMask};
use crate::params::{Bound, ParamStore};
use crate::rng;
use crate::tensor::kernels::SeqLayout;
use crate::tensor::{Real, Tape, Tensor, Var};

use super::{neural_scores, Scorer, Trainable};

#[derive(Debug, Clone, PartialEq)]
pub struct TxTConfig {
    pub d_embed: usize,
    pub seq_heads: usize,
    pub ctx_heads: usize,
    pub seq_layers: usize,
    pub ctx_layers: usize,
    /// Maximum basket prefix length `L_max`.
    pub seq_len: usize,
    pub leaky_slope: f64,
    /// Feed-forward inner width as a multiple of `d_embed`.
    pub ffn_multiplier: usize,
    pub item_vocab_size: usize,
    /// Ordered `(field name, cardinality)` pairs.
    pub context_fields: Vec<(String, usize)>,
    /// Skip every encoder block (test configuration for isolating the
    /// pooling and cross stages).
    pub bypass_encoders: bool,
}

impl TxTConfig {
    /// Production defaults: embedding 100, 4 sequence heads, 2 context
    /// heads, one layer each, sequence length 5.
    pub fn new(item_vocab_size: usize, context_fields: Vec<(String, usize)>) -> Self {
        TxTConfig {
            d_embed: 100,
            seq_heads: 4,
            ctx_heads: 2,
            seq_layers: 1,
            ctx_layers: 1,
            seq_len: 5,
            leaky_slope: 0.01,
            ffn_multiplier: 4,
            item_vocab_size,
            context_fields,
            bypass_encoders: false,
        }
    }

    pub fn d_ff(&self) -> usize {
        self.d_embed * self.ffn_multiplier
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_embed < 2 {
            return fail(format!("d_embed must be at least 2, got {}", self.d_embed));
        }
        for (what, h) in [("seq_heads", self.seq_heads), ("ctx_heads", self.ctx_heads)] {
            if h == 0 || !self.d_embed.is_multiple_of(h) {
                return fail(format!("d_embed {} is not divisible by {what} {h}", self.d_embed));
            }
        }
        if self.seq_len == 0 || self.ffn_multiplier == 0 {
            return fail("seq_len and ffn_multiplier must be positive".into());
        }
        if self.item_vocab_size < 3 {
            return fail("item vocabulary needs at least one non-reserved item".into());
        }
        if self.context_fields.is_empty() || self.context_fields.iter().any(|(_, c)| *c == 0) {
            return fail("at least one context field with positive cardinality is required".into());
        }
        Ok(())
    }

    fn seq_dims(&self) -> BlockDims {
        BlockDims {
            d: self.d_embed,
            d_ff: self.d_ff(),
            heads: self.seq_heads,
        }
    }

    fn ctx_dims(&self) -> BlockDims {
        BlockDims {
            d: self.d_embed,
            d_ff: self.d_ff(),
            heads: self.ctx_heads,
        }
    }

    /// Every parameter name with its shape, in registration order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_embed;
        let mut out = vec![
            ("item_embedding".to_string(), vec![self.item_vocab_size, d]),
            ("position_embedding".to_string(), vec![self.seq_len, d]),
        ];
        for (name, card) in &self.context_fields {
            out.push((format!("context_embedding.{name}"), vec![*card, d]));
        }
        for i in 0..self.seq_layers {
            out.extend(layers::encoder_block_layout(&format!("seq.block{i}"), self.seq_dims()));
        }
        for i in 0..self.ctx_layers {
            out.extend(layers::encoder_block_layout(&format!("ctx.block{i}"), self.ctx_dims()));
        }
        out.push(("output.w".to_string(), vec![2 * d, self.item_vocab_size]));
        out.push(("output.b".to_string(), vec![self.item_vocab_size]));
        out
    }

    pub fn to_kv(&self, kv: &mut KvMap) {
        kv.set("txt.d_embed", self.d_embed);
        kv.set("txt.seq_heads", self.seq_heads);
        kv.set("txt.ctx_heads", self.ctx_heads);
        kv.set("txt.seq_layers", self.seq_layers);
        kv.set("txt.ctx_layers", self.ctx_layers);
        kv.set("txt.seq_len", self.seq_len);
        kv.set("txt.leaky_slope", self.leaky_slope);
        kv.set("txt.ffn_multiplier", self.ffn_multiplier);
        kv.set("txt.bypass_encoders", self.bypass_encoders);
        kv.set("model.item_vocab_size", self.item_vocab_size);
        kv.set("model.context_fields", super::format_fields(&self.context_fields));
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let cfg = TxTConfig {
            d_embed: kv.parse_value("txt.d_embed")?,
            seq_heads: kv.parse_value("txt.seq_heads")?,
            ctx_heads: kv.parse_value("txt.ctx_heads")?,
            seq_layers: kv.parse_value("txt.seq_layers")?,
            ctx_layers: kv.parse_value("txt.ctx_layers")?,
            seq_len: kv.parse_value("txt.seq_len")?,
            leaky_slope: kv.parse_value("txt.leaky_slope")?,
            ffn_multiplier: kv.parse_value("txt.ffn_multiplier")?,
            bypass_encoders: kv.parse_value("txt.bypass_encoders")?,
            item_vocab_size: kv.parse_value("model.item_vocab_size")?,
            context_fields: super::parse_fields(kv.require("model.context_fields")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxTModel<F> {
    pub config: TxTConfig,
    pub params: ParamStore<F>,
}

/// Tape handles for the model, resolved once per forward pass.
struct TxTVars {
    item_embedding: Var,
    position_embedding: Var,
    context_embedding: Vec<Var>,
    seq_blocks: Vec<EncoderBlock>,
    ctx_blocks: Vec<EncoderBlock>,
    output_w: Var,
    output_b: Var,
}

impl<F: Real> TxTModel<F> {
    /// Xavier-uniform matrices, zero biases, unit layer-norm gains and
    /// `N(0, 0.01²)` embedding tables, all from `seed`.
    pub fn init(config: TxTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(seed);
        let d = config.d_embed;
        let mut params = ParamStore::new();
        params.insert("item_embedding", rng::normal(&mut r, &[config.item_vocab_size, d], 0.01))?;
        params.insert("position_embedding", rng::normal(&mut r, &[config.seq_len, d], 0.01))?;
        for (name, card) in &config.context_fields {
            params.insert(format!("context_embedding.{name}"), rng::normal(&mut r, &[*card, d], 0.01))?;
        }
        for i in 0..config.seq_layers {
            layers::init_encoder_block(&mut params, &format!("seq.block{i}"), config.seq_dims(), &mut r)?;
        }
        for i in 0..config.ctx_layers {
            layers::init_encoder_block(&mut params, &format!("ctx.block{i}"), config.ctx_dims(), &mut r)?;
        }
        params.insert("output.w", rng::xavier_uniform(&mut r, 2 * d, config.item_vocab_size))?;
        params.insert("output.b", Tensor::zeros(&[config.item_vocab_size]))?;
        Ok(TxTModel { config, params })
    }

    pub fn from_params(config: TxTConfig, params: ParamStore<F>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config.param_layout())?;
        Ok(TxTModel { config, params })
    }

    fn vars(&self, bound: &Bound) -> Result<TxTVars> {
        let c = &self.config;
        Ok(TxTVars {
            item_embedding: bound.get("item_embedding")?,
            position_embedding: bound.get("position_embedding")?,
            context_embedding: c
                .context_fields
                .iter()
                .map(|(n, _)| bound.get(&format!("context_embedding.{n}")))
                .collect::<Result<_>>()?,
            seq_blocks: (0..c.seq_layers)
                .map(|i| EncoderBlock::bind(bound, &format!("seq.block{i}"), c.seq_heads, c.leaky_slope))
                .collect::<Result<_>>()?,
            ctx_blocks: (0..c.ctx_layers)
                .map(|i| EncoderBlock::bind(bound, &format!("ctx.block{i}"), c.ctx_heads, c.leaky_slope))
                .collect::<Result<_>>()?,
            output_w: bound.get("output.w")?,
            output_b: bound.get("output.b")?,
        })
    }

    /// Basket representation `[B × 2d]`.
    fn encode_sequence_vars(&self, tape: &mut Tape<'_, F>, v: &TxTVars, batch: &SeqBatch) -> Result<Var> {
        let x = layers::embedding_lookup(tape, v.item_embedding, &batch.item_ids)?;
        let mut x = layers::add_positional(tape, x, v.position_embedding, batch.layout.seq_len)?;
        if !self.config.bypass_encoders {
            for block in &v.seq_blocks {
                x = block.forward(tape, x, batch.layout, Some(&batch.mask))?.0;
            }
        }
        layers::mean_max_pool(tape, x, batch.layout, &batch.mask)
    }

    /// Context representation `[B × 2d]` and the attention node of every
    /// context block.
    fn encode_context_vars(
        &self,
        tape: &mut Tape<'_, F>,
        v: &TxTVars,
        batch: &SeqBatch,
    ) -> Result<(Var, Vec<Var>)> {
        let m = self.config.context_fields.len();
        if batch.fields != m {
            return Err(Error::Dimension {
                op: "encode_context",
                left: vec![m],
                right: vec![batch.fields],
            });
        }
        let b = batch.len();
        let mut parts = Vec::with_capacity(m);
        for (f, &table) in v.context_embedding.iter().enumerate() {
            let ids: Vec<usize> = (0..b).map(|i| batch.context_ids[i * m + f]).collect();
            parts.push(layers::embedding_lookup(tape, table, &ids)?);
        }
        let mut x = tape.interleave_rows(&parts)?;
        let layout = SeqLayout { batch: b, seq_len: m };
        let mut attention = Vec::new();
        if !self.config.bypass_encoders {
            for block in &v.ctx_blocks {
                let (out, attn) = block.forward(tape, x, layout, None)?;
                x = out;
                attention.push(attn);
            }
        }
        let all_real = vec![true; b * m];
        Ok((layers::mean_max_pool(tape, x, layout, &all_real)?, attention))
    }

    pub fn encode_sequence<'p>(&'p self, tape: &mut Tape<'p, F>, batch: &SeqBatch) -> Result<Var> {
        let bound = self.params.bind(tape)?;
        let v = self.vars(&bound)?;
        self.encode_sequence_vars(tape, &v, batch)
    }

    pub fn encode_context<'p>(&'p self, tape: &mut Tape<'p, F>, batch: &SeqBatch) -> Result<Var> {
        let bound = self.params.bind(tape)?;
        let v = self.vars(&bound)?;
        Ok(self.encode_context_vars(tape, &v, batch)?.0)
    }

    /// Logits `[V_item]` for one basket prefix (any length up to `L_max`).
    pub fn forward(&self, item_ids: &[usize], mask: &PaddingMask, ctx: &ContextVector) -> Result<Tensor<F>> {
        let batch = SeqBatch::single(item_ids, mask, ctx)?;
        let mut tape = Tape::new();
        let logits = self.logits(&mut tape, &batch)?;
        let t = tape.tensor(logits);
        t.reshape(vec![self.config.item_vocab_size])
    }

    /// Post-softmax context self-attention weights, indexed
    /// `[layer][head]`, each an `m × m` matrix (query rows, key columns).
    pub fn attention_weight_dump(&self, ctx: &ContextVector) -> Result<Vec<Vec<Tensor<F>>>> {
        let m = self.config.context_fields.len();
        let batch = SeqBatch::single(&[crate::data::UNK_ID], &PaddingMask::all_real(1), ctx)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let v = self.vars(&bound)?;
        let (_, nodes) = self.encode_context_vars(&mut tape, &v, &batch)?;
        let heads = self.config.ctx_heads;
        nodes
            .iter()
            .map(|&node| {
                let probs = tape.attention_probs(node).expect("attention node");
                (0..heads)
                    .map(|h| Tensor::new(vec![m, m], probs[h * m * m..(h + 1) * m * m].to_vec()))
                    .collect()
            })
            .collect()
    }
}

/// `leaky_relu(seq ⊙ ctx)`.
pub fn latent_cross_combine<F: Real>(tape: &mut Tape<'_, F>, seq: Var, ctx: Var, slope: f64) -> Result<Var> {
    if tape.shape(seq) != tape.shape(ctx) {
        return Err(Error::contract(format!(
            "latent cross of mismatched widths {:?} and {:?}",
            tape.shape(seq),
            tape.shape(ctx)
        )));
    }
    let crossed = tape.mul(seq, ctx)?;
    Ok(tape.leaky_relu(crossed, slope))
}

/// Mean cross-entropy of `logits [B × V]` against `labels`.
pub fn cross_entropy_loss<F: Real>(tape: &mut Tape<'_, F>, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

/// Tab-separated attention table: one row per (layer, head, query field),
/// one column per key field.
pub fn format_attention_dump<F: Real>(fields: &[String], weights: &[Vec<Tensor<F>>]) -> String {
    let mut out = format!("layer\thead\tquery\t{}\n", fields.join("\t"));
    for (l, heads) in weights.iter().enumerate() {
        for (h, w) in heads.iter().enumerate() {
            for (q, name) in fields.iter().enumerate() {
                let cells: Vec<String> = w.row(q).iter().map(|x| format!("{x}")).collect();
                out.push_str(&format!("{l}\t{h}\t{name}\t{}\n", cells.join("\t")));
            }
        }
    }
    out
}

impl<F: Real> Trainable<F> for TxTModel<F> {
    fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    fn logits<'p>(&'p self, tape: &mut Tape<'p, F>, batch: &SeqBatch) -> Result<Var> {
        let bound = self.params.bind(tape)?;
        let v = self.vars(&bound)?;
        let seq = self.encode_sequence_vars(tape, &v, batch)?;
        let (ctx, _) = self.encode_context_vars(tape, &v, batch)?;
        let crossed = latent_cross_combine(tape, seq, ctx, self.config.leaky_slope)?;
        let logits = tape.matmul(crossed, v.output_w)?;
        tape.add_row_bias(logits, v.output_b)
    }
}

impl<F: Real> Scorer<F> for TxTModel<F> {
    fn item_vocab_size(&self) -> usize {
        self.config.item_vocab_size
    }

    fn scores(&self, batch: &SeqBatch) -> Result<Vec<F>> {
        neural_scores(self, batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ContextVector;
    use crate::model::Scorer;
    use rand::Rng as _;

    fn tiny(fields: &[(&str, usize)]) -> TxTConfig {
        TxTConfig {
            d_embed: 8,
            seq_heads: 2,
            ctx_heads: 2,
            seq_len: 5,
            ..TxTConfig::new(20, fields.iter().map(|(n, c)| (n.to_string(), *c)).collect())
        }
    }

    fn set(model: &mut TxTModel<f64>, name: &str, f: impl Fn(usize) -> f64) {
        for (i, x) in model.params.get_mut(name).unwrap().data_mut().iter_mut().enumerate() {
            *x = f(i);
        }
    }

    fn seq_out(model: &TxTModel<f64>, batch: &SeqBatch) -> Vec<f64> {
        let mut tape = Tape::new();
        let v = model.encode_sequence(&mut tape, batch).unwrap();
        tape.value(v).to_vec()
    }

    fn ctx_out(model: &TxTModel<f64>, batch: &SeqBatch) -> Vec<f64> {
        let mut tape = Tape::new();
        let v = model.encode_context(&mut tape, batch).unwrap();
        tape.value(v).to_vec()
    }

    #[test]
    fn defaults_match_the_production_configuration() {
        let c = TxTConfig::new(50, vec![("weather".into(), 4)]);
        assert_eq!((c.d_embed, c.seq_heads, c.ctx_heads, c.seq_layers, c.ctx_layers, c.seq_len), (100, 4, 2, 1, 1, 5));
        assert_eq!(c.leaky_slope, 0.01);
        c.validate().unwrap();
        assert!(TxTConfig { seq_heads: 3, ..c.clone() }.validate().is_err());
        let mut kv = KvMap::new();
        c.to_kv(&mut kv);
        assert_eq!(TxTConfig::from_kv(&kv).unwrap(), c);
    }

    #[test]
    fn bypass_single_item_pools_to_its_embedding_twice() {
        let cfg = TxTConfig { bypass_encoders: true, ..tiny(&[("a", 3)]) };
        let mut m: TxTModel<f64> = TxTModel::init(cfg, 1).unwrap();
        set(&mut m, "position_embedding", |_| 0.0);
        let batch = SeqBatch::single(&[7, 0, 0], &PaddingMask::prefix(1, 3).unwrap(), &ContextVector(vec![2])).unwrap();
        let out = seq_out(&m, &batch);
        let e = m.params.get("item_embedding").unwrap().row(7).to_vec();
        assert_eq!(out, [e.clone(), e].concat());
    }

    #[test]
    fn single_context_field_pools_to_its_row_twice() {
        let m: TxTModel<f64> = TxTModel::init(tiny(&[("a", 3)]), 2).unwrap();
        let batch = SeqBatch::single(&[4], &PaddingMask::all_real(1), &ContextVector(vec![1])).unwrap();
        let out = ctx_out(&m, &batch);
        assert_eq!(out[..8], out[8..]);
    }

    #[test]
    fn context_field_order_does_not_matter() {
        let a: TxTModel<f64> = TxTModel::init(tiny(&[("x", 3), ("y", 4), ("z", 5)]), 3).unwrap();
        let mut cfg_b = a.config.clone();
        cfg_b.context_fields = vec![("z".into(), 5), ("x".into(), 3), ("y".into(), 4)];
        let mut params = ParamStore::new();
        for (name, _) in cfg_b.param_layout() {
            params.insert(name.clone(), a.params.get(&name).unwrap().clone()).unwrap();
        }
        let b = TxTModel::from_params(cfg_b, params).unwrap();
        let ba = SeqBatch::single(&[3], &PaddingMask::all_real(1), &ContextVector(vec![1, 2, 4])).unwrap();
        let bb = SeqBatch::single(&[3], &PaddingMask::all_real(1), &ContextVector(vec![4, 1, 2])).unwrap();
        let oa = ctx_out(&a, &ba);
        let ob = ctx_out(&b, &bb);
        for (x, y) in oa.iter().zip(&ob) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn latent_cross_examples() {
        let mut tape: Tape<'_, f64> = Tape::new();
        let s = tape.constant(Tensor::vector(vec![2.0, -1.0]).unwrap());
        let c = tape.constant(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let out = latent_cross_combine(&mut tape, s, c, 0.01).unwrap();
        assert_eq!(tape.value(out), &[6.0, -0.04]);
        let ones = tape.constant(Tensor::vector(vec![1.0, 1.0]).unwrap());
        let out = latent_cross_combine(&mut tape, s, ones, 0.01).unwrap();
        assert_eq!(tape.value(out), &[2.0, -0.01]);
        let zeros = tape.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let out = latent_cross_combine(&mut tape, s, zeros, 0.01).unwrap();
        assert!(tape.value(out).iter().all(|&x| x == 0.0));
        let three = tape.constant(Tensor::vector(vec![1.0, 1.0, 1.0]).unwrap());
        assert!(matches!(latent_cross_combine(&mut tape, s, three, 0.01), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_head_gives_uniform_probabilities_and_bias_picks_argmax() {
        let mut m: TxTModel<f64> = TxTModel::init(tiny(&[("a", 3)]), 4).unwrap();
        set(&mut m, "output.w", |_| 0.0);
        let batch = SeqBatch::single(&[5, 6], &PaddingMask::all_real(2), &ContextVector(vec![0])).unwrap();
        let p = m.probabilities(&batch).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 20.0).abs() < 1e-15));
        set(&mut m, "output.b", |i| if i == 13 { 10.0 } else { 0.0 });
        let logits = m.forward(&[5, 6], &PaddingMask::all_real(2), &ContextVector(vec![0])).unwrap();
        let argmax = (0..20).max_by(|&a, &b| logits.data()[a].total_cmp(&logits.data()[b])).unwrap();
        assert_eq!(argmax, 13);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m: TxTModel<f64> = TxTModel::init(tiny(&[("a", 3), ("b", 2)]), 5).unwrap();
        let batch = SeqBatch::single(&[5, 6, 7], &PaddingMask::all_real(3), &ContextVector(vec![2, 1])).unwrap();
        let sum: f64 = m.probabilities(&batch).unwrap().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape: Tape<'_, f64> = Tape::new();
        let uniform = tape.constant(Tensor::new(vec![1, 4], vec![0.3; 4]).unwrap());
        let loss = cross_entropy_loss(&mut tape, uniform, &[2]).unwrap();
        assert!((tape.value(loss)[0] - 4f64.ln()).abs() < 1e-12);
        let dominant = tape.constant(Tensor::new(vec![1, 3], vec![0.0, 800.0, 0.0]).unwrap());
        let loss = cross_entropy_loss(&mut tape, dominant, &[1]).unwrap();
        assert!(tape.value(loss)[0].abs() < 1e-300);
        assert!(matches!(cross_entropy_loss(&mut tape, uniform, &[4]), Err(Error::Vocabulary { .. })));
    }

    #[test]
    fn appended_padding_is_invisible() {
        let mut r = rng::seeded(6);
        for seed in 0..10 {
            let m: TxTModel<f32> = TxTModel::init(tiny(&[("a", 3), ("b", 4)]), seed).unwrap();
            let real: Vec<usize> = (0..r.gen_range(1..=5)).map(|_| r.gen_range(2..20)).collect();
            let ctx = ContextVector(vec![r.gen_range(0..3), r.gen_range(0..4)]);
            let short = m.forward(&real, &PaddingMask::all_real(real.len()), &ctx).unwrap();
            let mut padded = real.clone();
            padded.resize(5, 0);
            let long = m.forward(&padded, &PaddingMask::prefix(real.len(), 5).unwrap(), &ctx).unwrap();
            for (a, b) in short.data().iter().zip(long.data()) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn attention_dump_examples() {
        let m: TxTModel<f64> = TxTModel::init(tiny(&[("a", 3)]), 7).unwrap();
        let dump = m.attention_weight_dump(&ContextVector(vec![1])).unwrap();
        assert_eq!(dump.len(), 1);
        assert!(dump[0].iter().all(|w| w.data() == [1.0]));

        let mut m: TxTModel<f64> = TxTModel::init(tiny(&[("a", 3), ("b", 3), ("c", 3)]), 8).unwrap();
        let dump = m.attention_weight_dump(&ContextVector(vec![0, 1, 2])).unwrap();
        for w in &dump[0] {
            for q in 0..3 {
                assert!((w.row(q).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        for f in ["a", "b", "c"] {
            set(&mut m, &format!("context_embedding.{f}"), |i| (i % 8) as f64 * 0.1);
        }
        let dump = m.attention_weight_dump(&ContextVector(vec![0, 1, 2])).unwrap();
        for w in &dump[0] {
            assert!(w.data().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
        }
        let text = format_attention_dump(&["a".into(), "b".into(), "c".into()], &dump);
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        assert!(text.starts_with("layer\thead\tquery\ta\tb\tc\n"));
    }
}
