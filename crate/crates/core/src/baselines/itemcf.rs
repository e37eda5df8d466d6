//! Contextual item-to-item collaborative filtering.
//!
//! `sim(a, b) = C[a][b] / sqrt(C[a][a] · C[b][b])`, where `C[a][b]` counts
//! orders containing both items. A candidate's score is its summed
//! similarity to the basket times a smoothed per-field popularity factor
//! `Π_f (n_f[c_f][i] + 1) / (N_f[c_f] + V)`. An empty basket ranks by the
//! popularity factor alone. Reserved ids never score.

use crate::data::{OrderExample, SeqBatch, Vocabulary};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::model::Scorer;
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ItemCfConfig {
    pub seq_len: usize,
    pub item_vocab_size: usize,
    pub context_fields: Vec<(String, usize)>,
}

impl ItemCfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be positive".into()));
        }
        if self.item_vocab_size < 3 {
            return Err(Error::Config("item vocabulary needs at least one non-reserved item".into()));
        }
        Ok(())
    }

    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let v = self.item_vocab_size;
        let mut out = vec![("itemcf.cooccurrence".to_string(), vec![v, v])];
        for (name, card) in &self.context_fields {
            out.push((format!("itemcf.context.{name}"), vec![*card, v]));
        }
        out
    }

    pub fn to_kv(&self, kv: &mut KvMap) {
        kv.set("itemcf.seq_len", self.seq_len);
        kv.set("model.item_vocab_size", self.item_vocab_size);
        kv.set("model.context_fields", crate::model::format_fields(&self.context_fields));
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let cfg = ItemCfConfig {
            seq_len: kv.parse_value("itemcf.seq_len")?,
            item_vocab_size: kv.parse_value("model.item_vocab_size")?,
            context_fields: crate::model::parse_fields(kv.require("model.context_fields")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Count tables stored as parameters so they travel in a bundle like any
/// other model.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCfModel<F> {
    pub config: ItemCfConfig,
    pub params: ParamStore<F>,
}

impl<F: Real> ItemCfModel<F> {
    /// Fits from whole orders, each given as its item ids and context ids.
    /// Repeated items within an order count once.
    pub fn fit<'a, I>(config: ItemCfConfig, orders: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [usize], &'a [usize])>,
    {
        config.validate()?;
        let v = config.item_vocab_size;
        let m = config.context_fields.len();
        let mut co = vec![0.0f64; v * v];
        let mut ctx: Vec<Vec<f64>> = config.context_fields.iter().map(|(_, c)| vec![0.0; c * v]).collect();
        let mut seen = 0usize;
        for (items, context) in orders {
            seen += 1;
            if context.len() != m {
                return Err(Error::Dimension {
                    op: "itemcf_fit",
                    left: vec![m],
                    right: vec![context.len()],
                });
            }
            let mut set: Vec<usize> = items.iter().copied().filter(|&i| !Vocabulary::is_reserved(i)).collect();
            set.sort_unstable();
            set.dedup();
            if let Some(&bad) = set.iter().find(|&&i| i >= v) {
                return Err(Error::Vocabulary { what: "item".into(), id: bad, size: v });
            }
            for &a in &set {
                for &b in &set {
                    co[a * v + b] += 1.0;
                }
            }
            for (f, &c) in context.iter().enumerate() {
                let card = config.context_fields[f].1;
                if c >= card {
                    return Err(Error::Vocabulary { what: "context".into(), id: c, size: card });
                }
                for &i in &set {
                    ctx[f][c * v + i] += 1.0;
                }
            }
        }
        if seen == 0 {
            return Err(Error::contract("cannot fit item similarity on an empty corpus"));
        }
        let mut params = ParamStore::new();
        params.insert("itemcf.cooccurrence", Tensor::from_f64(vec![v, v], &co)?)?;
        for ((name, card), table) in config.context_fields.iter().zip(&ctx) {
            params.insert(format!("itemcf.context.{name}"), Tensor::from_f64(vec![*card, v], table)?)?;
        }
        Ok(ItemCfModel { config, params })
    }

    /// Fits from training examples, treating prefix plus label as the order.
    pub fn fit_examples(config: ItemCfConfig, examples: &[OrderExample]) -> Result<Self> {
        let orders: Vec<(Vec<usize>, &[usize])> = examples
            .iter()
            .map(|e| {
                let mut items = e.real_items().to_vec();
                items.push(e.label);
                (items, e.context.ids())
            })
            .collect();
        Self::fit(config, orders.iter().map(|(i, c)| (i.as_slice(), *c)))
    }

    pub fn from_params(config: ItemCfConfig, params: ParamStore<F>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config.param_layout())?;
        Ok(ItemCfModel { config, params })
    }

    fn count(&self, a: usize, b: usize) -> f64 {
        let v = self.config.item_vocab_size;
        let t = self.params.get("itemcf.cooccurrence").expect("checked layout");
        t.data()[a * v + b].to_f64().unwrap_or(0.0)
    }

    /// Cosine similarity of two items' order sets; 0 if either never occurs.
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        let denom = (self.count(a, a) * self.count(b, b)).sqrt();
        if denom > 0.0 {
            self.count(a, b) / denom
        } else {
            0.0
        }
    }

    /// Smoothed context popularity factor for `item`.
    pub fn context_factor(&self, context: &[usize], item: usize) -> f64 {
        let v = self.config.item_vocab_size;
        let mut factor = 1.0;
        for ((name, _), &c) in self.config.context_fields.iter().zip(context) {
            let t = self.params.get(&format!("itemcf.context.{name}")).expect("checked layout");
            let row = &t.data()[c * v..(c + 1) * v];
            let total: f64 = row.iter().map(|x| x.to_f64().unwrap_or(0.0)).sum();
            factor *= (row[item].to_f64().unwrap_or(0.0) + 1.0) / (total + v as f64);
        }
        factor
    }

    /// Scores for every id; reserved ids score 0.
    pub fn score_vector(&self, basket: &[usize], context: &[usize]) -> Result<Vec<f64>> {
        let v = self.config.item_vocab_size;
        let m = self.config.context_fields.len();
        if context.len() != m {
            return Err(Error::Dimension {
                op: "itemcf_score",
                left: vec![m],
                right: vec![context.len()],
            });
        }
        for (f, &c) in context.iter().enumerate() {
            let card = self.config.context_fields[f].1;
            if c >= card {
                return Err(Error::Vocabulary { what: "context".into(), id: c, size: card });
            }
        }
        let basket: Vec<usize> = basket
            .iter()
            .copied()
            .filter(|&i| !Vocabulary::is_reserved(i) && i < v)
            .collect();
        let mut out = vec![0.0; v];
        for (i, s) in out.iter_mut().enumerate().skip(2) {
            let affinity = if basket.is_empty() {
                1.0
            } else {
                basket.iter().map(|&b| self.similarity(b, i)).sum()
            };
            *s = affinity * self.context_factor(context, i);
        }
        Ok(out)
    }

    /// Top-`k` `(item, score)` pairs; ties go to the smaller id.
    pub fn recommend(&self, basket: &[usize], context: &[usize], k: usize) -> Result<Vec<(usize, f64)>> {
        let scores = self.score_vector(basket, context)?;
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().skip(2).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        Ok(ranked)
    }
}

impl<F: Real> Scorer<F> for ItemCfModel<F> {
    fn item_vocab_size(&self) -> usize {
        self.config.item_vocab_size
    }

    fn scores(&self, batch: &SeqBatch) -> Result<Vec<F>> {
        let mut out = Vec::with_capacity(batch.len() * self.config.item_vocab_size);
        for b in 0..batch.len() {
            let basket: Vec<usize> = batch.real_items(b).collect();
            for s in self.score_vector(&basket, batch.context_of(b))? {
                out.push(F::from_f64(s).unwrap_or_else(F::zero));
            }
        }
        Ok(out)
    }

    /// Scores normalised to sum to one over non-reserved items, uniform when
    /// every score is zero.
    fn probabilities(&self, batch: &SeqBatch) -> Result<Vec<F>> {
        let v = self.config.item_vocab_size;
        let mut s = self.scores(batch)?;
        for row in s.chunks_mut(v) {
            let total: F = row.iter().copied().sum();
            let fill = F::one() / F::from_usize(v - 2).expect("small");
            for (i, x) in row.iter_mut().enumerate() {
                *x = if i < 2 {
                    F::zero()
                } else if total > F::zero() {
                    *x / total
                } else {
                    fill
                };
            }
        }
        Ok(s)
    }
}
