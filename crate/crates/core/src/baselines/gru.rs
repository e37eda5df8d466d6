//! Single-layer GRU next-item models, with and without a latent cross
//! against the element-wise sum of the context embeddings.
//!
//! Gates use the row-vector convention:
//!
//! ```text
//! z  = σ(x·W_z + h·U_z + b_z)
//! r  = σ(x·W_r + h·U_r + b_r)
//! ĥ  = tanh(x·W_h + (r⊙h)·U_h + b_h)
//! h' = h + z⊙(ĥ − h)            // = (1−z)⊙h + z⊙ĥ
//! ```
//!
//! Padded positions leave the state untouched, so the state after the loop
//! is the one after the last real item.

use crate::data::SeqBatch;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::model::{neural_scores, Scorer, Trainable};
use crate::params::ParamStore;
use crate::rng;
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GruConfig {
    /// Embedding and hidden width.
    pub d_hidden: usize,
    pub seq_len: usize,
    pub item_vocab_size: usize,
    pub context_fields: Vec<(String, usize)>,
    /// Multiply the final state by the summed context embedding.
    pub latent_cross: bool,
}

impl GruConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_hidden == 0 || self.seq_len == 0 {
            return Err(Error::Config("d_hidden and seq_len must be positive".into()));
        }
        if self.item_vocab_size < 3 {
            return Err(Error::Config("item vocabulary needs at least one non-reserved item".into()));
        }
        if self.latent_cross && self.context_fields.is_empty() {
            return Err(Error::Config("latent cross needs at least one context field".into()));
        }
        Ok(())
    }

    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_hidden;
        let mut out = vec![("item_embedding".to_string(), vec![self.item_vocab_size, d])];
        for gate in ["z", "r", "h"] {
            out.push((format!("gru.w_{gate}"), vec![d, d]));
            out.push((format!("gru.u_{gate}"), vec![d, d]));
            out.push((format!("gru.b_{gate}"), vec![d]));
        }
        if self.latent_cross {
            for (name, card) in &self.context_fields {
                out.push((format!("context_embedding.{name}"), vec![*card, d]));
            }
        }
        out.push(("output.w".to_string(), vec![d, self.item_vocab_size]));
        out.push(("output.b".to_string(), vec![self.item_vocab_size]));
        out
    }

    pub fn to_kv(&self, kv: &mut KvMap) {
        kv.set("gru.d_hidden", self.d_hidden);
        kv.set("gru.seq_len", self.seq_len);
        kv.set("gru.latent_cross", self.latent_cross);
        kv.set("model.item_vocab_size", self.item_vocab_size);
        kv.set("model.context_fields", crate::model::format_fields(&self.context_fields));
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let cfg = GruConfig {
            d_hidden: kv.parse_value("gru.d_hidden")?,
            seq_len: kv.parse_value("gru.seq_len")?,
            latent_cross: kv.parse_value("gru.latent_cross")?,
            item_vocab_size: kv.parse_value("model.item_vocab_size")?,
            context_fields: crate::model::parse_fields(kv.require("model.context_fields")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruModel<F> {
    pub config: GruConfig,
    pub params: ParamStore<F>,
}

impl<F: Real> GruModel<F> {
    pub fn init(config: GruConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(seed);
        let mut params = ParamStore::new();
        for (name, shape) in config.param_layout() {
            let t = if name.contains("embedding") {
                rng::normal(&mut r, &shape, 0.01)
            } else if shape.len() == 2 {
                rng::xavier_uniform(&mut r, shape[0], shape[1])
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, t)?;
        }
        Ok(GruModel { config, params })
    }

    pub fn from_params(config: GruConfig, params: ParamStore<F>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config.param_layout())?;
        Ok(GruModel { config, params })
    }
}

impl<F: Real> Trainable<F> for GruModel<F> {
    fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    fn logits<'p>(&'p self, tape: &mut Tape<'p, F>, batch: &SeqBatch) -> Result<Var> {
        let bound = self.params.bind(tape)?;
        let g = |n: &str| bound.get(n);
        let d = self.config.d_hidden;
        let (b, l) = (batch.len(), batch.layout.seq_len);
        let emb = g("item_embedding")?;
        let (w_z, u_z, b_z) = (g("gru.w_z")?, g("gru.u_z")?, g("gru.b_z")?);
        let (w_r, u_r, b_r) = (g("gru.w_r")?, g("gru.u_r")?, g("gru.b_r")?);
        let (w_h, u_h, b_h) = (g("gru.w_h")?, g("gru.u_h")?, g("gru.b_h")?);

        let gate = |tape: &mut Tape<'p, F>, x: Var, h: Var, w: Var, u: Var, bias: Var| -> Result<Var> {
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(h, u)?;
            let s = tape.add(xw, hu)?;
            tape.add_row_bias(s, bias)
        };

        let steps = (0..l)
            .rev()
            .find(|&t| (0..b).any(|i| batch.mask[i * l + t]))
            .map_or(0, |t| t + 1);
        let mut h = tape.constant(Tensor::zeros(&[b, d]));
        for t in 0..steps {
            let ids: Vec<usize> = (0..b).map(|i| batch.item_ids[i * l + t]).collect();
            let x = tape.gather(emb, &ids)?;
            let z = gate(tape, x, h, w_z, u_z, b_z)?;
            let z = tape.sigmoid(z);
            let r = gate(tape, x, h, w_r, u_r, b_r)?;
            let r = tape.sigmoid(r);
            let rh = tape.mul(r, h)?;
            let cand = gate(tape, x, rh, w_h, u_h, b_h)?;
            let cand = tape.tanh(cand);
            let delta = tape.sub(cand, h)?;
            let step = tape.mul(z, delta)?;
            let keep: Vec<F> = (0..b)
                .map(|i| if batch.mask[i * l + t] { F::one() } else { F::zero() })
                .collect();
            let keep = tape.constant(Tensor::new(vec![b, 1], keep)?);
            let step = tape.mul(step, keep)?;
            h = tape.add(h, step)?;
        }

        let pre_head = if self.config.latent_cross {
            let m = self.config.context_fields.len();
            if batch.fields != m {
                return Err(Error::Dimension {
                    op: "gru_latent_cross",
                    left: vec![m],
                    right: vec![batch.fields],
                });
            }
            let mut sum: Option<Var> = None;
            for (f, (name, _)) in self.config.context_fields.iter().enumerate() {
                let ids: Vec<usize> = (0..b).map(|i| batch.context_ids[i * m + f]).collect();
                let e = tape.gather(g(&format!("context_embedding.{name}"))?, &ids)?;
                sum = Some(match sum {
                    Some(s) => tape.add(s, e)?,
                    None => e,
                });
            }
            tape.mul(h, sum.expect("at least one field"))?
        } else {
            h
        };
        let logits = tape.matmul(pre_head, g("output.w")?)?;
        tape.add_row_bias(logits, g("output.b")?)
    }
}

impl<F: Real> Scorer<F> for GruModel<F> {
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
    use crate::layers::PaddingMask;

    fn cfg(latent_cross: bool) -> GruConfig {
        GruConfig {
            d_hidden: 4,
            seq_len: 5,
            item_vocab_size: 9,
            context_fields: vec![("a".into(), 3), ("b".into(), 2)],
            latent_cross,
        }
    }

    fn logits(m: &GruModel<f64>, ids: &[usize], ctx: &[usize]) -> Vec<f64> {
        let batch = SeqBatch::single(ids, &PaddingMask::all_real(ids.len()), &ContextVector(ctx.to_vec())).unwrap();
        m.scores(&batch).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let mut m: GruModel<f64> = GruModel::init(cfg(false), 1).unwrap();
        m.params.get_mut("output.w").unwrap().data_mut().fill(0.0);
        let batch = SeqBatch::single(&[3, 4], &PaddingMask::all_real(2), &ContextVector(vec![0, 0])).unwrap();
        assert!(m.probabilities(&batch).unwrap().iter().all(|&p| (p - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn order_matters() {
        let m: GruModel<f64> = GruModel::init(cfg(false), 2).unwrap();
        assert_ne!(logits(&m, &[3, 4, 5], &[0, 0]), logits(&m, &[5, 4, 3], &[0, 0]));
    }

    #[test]
    fn latent_cross_with_unit_context_reduces_to_plain_gru() {
        let plain: GruModel<f64> = GruModel::init(cfg(false), 3).unwrap();
        let mut crossed: GruModel<f64> = GruModel::init(cfg(true), 3).unwrap();
        for (name, t) in plain.params.iter() {
            *crossed.params.get_mut(name).unwrap() = t.clone();
        }
        // a-row 1 plus b-row 0 sums to ones.
        crossed.params.get_mut("context_embedding.a").unwrap().data_mut().fill(0.25);
        crossed.params.get_mut("context_embedding.b").unwrap().data_mut().fill(0.75);
        assert_eq!(logits(&plain, &[3, 7], &[1, 0]), logits(&crossed, &[3, 7], &[1, 0]));

        crossed.params.get_mut("context_embedding.a").unwrap().data_mut().fill(0.5);
        crossed.params.get_mut("context_embedding.b").unwrap().data_mut().fill(-0.5);
        crossed.params.get_mut("output.b").unwrap().data_mut()[4] = 2.0;
        let mut bias = vec![0.0; 9];
        bias[4] = 2.0;
        assert_eq!(logits(&crossed, &[3, 7], &[1, 0]), bias);
    }

    #[test]
    fn single_step_from_zero_state() {
        let m: GruModel<f64> = GruModel::init(cfg(false), 4).unwrap();
        let p = |n: &str| m.params.get(n).unwrap();
        let x = p("item_embedding").row(6).to_vec();
        let lin = |w: &str, b: &str, j: usize| -> f64 {
            (0..4).map(|i| x[i] * p(w).get2(i, j)).sum::<f64>() + p(b).data()[j]
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        // h0 = 0, so r has no effect and h1 = z ⊙ tanh(x·W_h + b_h).
        let h: Vec<f64> = (0..4)
            .map(|j| sig(lin("gru.w_z", "gru.b_z", j)) * lin("gru.w_h", "gru.b_h", j).tanh())
            .collect();
        let expect: Vec<f64> = (0..9)
            .map(|k| (0..4).map(|j| h[j] * p("output.w").get2(j, k)).sum::<f64>() + p("output.b").data()[k])
            .collect();
        for (a, b) in logits(&m, &[6], &[0, 0]).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
