//! Model definitions and the interfaces the trainer, evaluator and server
//! program against.

pub mod txt;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::baselines::{GruModel, ItemCfModel};
use crate::data::SeqBatch;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{kernels, Real, Tape, Tensor, Var};

pub use txt::{cross_entropy_loss, format_attention_dump, latent_cross_combine, TxTConfig, TxTModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Txt,
    Rnn,
    RnnLatentCross,
    ItemCf,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Txt => "txt",
            ModelKind::Rnn => "rnn",
            ModelKind::RnnLatentCross => "rnn-latent-cross",
            ModelKind::ItemCf => "itemcf",
        }
    }

    pub fn is_neural(self) -> bool {
        self != ModelKind::ItemCf
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "txt" => Ok(ModelKind::Txt),
            "rnn" => Ok(ModelKind::Rnn),
            "rnn-latent-cross" => Ok(ModelKind::RnnLatentCross),
            "itemcf" => Ok(ModelKind::ItemCf),
            other => Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Anything that ranks the item vocabulary for a batch of baskets.
pub trait Scorer<F: Real>: Send + Sync {
    fn item_vocab_size(&self) -> usize;

    /// Row-major `[batch × V_item]` scores; higher is better.
    fn scores(&self, batch: &SeqBatch) -> Result<Vec<F>>;

    /// Row-major `[batch × V_item]` probabilities. Defaults to a softmax of
    /// the scores.
    fn probabilities(&self, batch: &SeqBatch) -> Result<Vec<F>> {
        let mut s = self.scores(batch)?;
        kernels::softmax_rows(&mut s, self.item_vocab_size());
        Ok(s)
    }
}

/// A model trained by gradient descent on the cross-entropy of its logits.
pub trait Trainable<F: Real>: Scorer<F> {
    fn params(&self) -> &ParamStore<F>;

    fn params_mut(&mut self) -> &mut ParamStore<F>;

    /// Records the forward pass for `batch` and returns logits `[B × V]`.
    fn logits<'p>(&'p self, tape: &mut Tape<'p, F>, batch: &SeqBatch) -> Result<Var>;
}

/// Scores of a trainable model without keeping the tape.
pub fn neural_scores<F: Real, M: Trainable<F> + ?Sized>(model: &M, batch: &SeqBatch) -> Result<Vec<F>> {
    let mut tape = Tape::new();
    let logits = model.logits(&mut tape, batch)?;
    Ok(tape.value(logits).to_vec())
}

/// Mean batch cross-entropy and its gradient for every parameter.
pub fn loss_and_grads<F: Real, M: Trainable<F> + ?Sized>(
    model: &M,
    batch: &SeqBatch,
) -> Result<(F, BTreeMap<String, Tensor<F>>)> {
    let mut tape = Tape::new();
    let logits = model.logits(&mut tape, batch)?;
    let loss = cross_entropy_loss(&mut tape, logits, &batch.labels)?;
    let value = tape.value(loss)[0];
    let grads = tape.backward(loss)?;
    Ok((value, grads.into_named()))
}

pub(crate) fn format_fields(fields: &[(String, usize)]) -> String {
    fields
        .iter()
        .map(|(n, c)| format!("{n}:{c}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn parse_fields(s: &str) -> Result<Vec<(String, usize)>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            let (n, c) = part
                .split_once(':')
                .ok_or_else(|| Error::format(format!("bad context field '{part}'")))?;
            let c = c
                .parse()
                .map_err(|_| Error::format(format!("bad cardinality in '{part}'")))?;
            Ok((n.to_string(), c))
        })
        .collect()
}

/// Any supported model, as stored in a bundle.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel<F> {
    Txt(TxTModel<F>),
    Gru(GruModel<F>),
    ItemCf(ItemCfModel<F>),
}

impl<F: Real> AnyModel<F> {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Txt(_) => ModelKind::Txt,
            AnyModel::Gru(g) if g.config.latent_cross => ModelKind::RnnLatentCross,
            AnyModel::Gru(_) => ModelKind::Rnn,
            AnyModel::ItemCf(_) => ModelKind::ItemCf,
        }
    }

    pub fn params(&self) -> &ParamStore<F> {
        match self {
            AnyModel::Txt(m) => &m.params,
            AnyModel::Gru(m) => &m.params,
            AnyModel::ItemCf(m) => &m.params,
        }
    }

    /// Longest basket prefix the model accepts.
    pub fn seq_len(&self) -> usize {
        match self {
            AnyModel::Txt(m) => m.config.seq_len,
            AnyModel::Gru(m) => m.config.seq_len,
            AnyModel::ItemCf(m) => m.config.seq_len,
        }
    }
}

impl<F: Real> Scorer<F> for AnyModel<F> {
    fn item_vocab_size(&self) -> usize {
        match self {
            AnyModel::Txt(m) => m.item_vocab_size(),
            AnyModel::Gru(m) => m.item_vocab_size(),
            AnyModel::ItemCf(m) => m.item_vocab_size(),
        }
    }

    fn scores(&self, batch: &SeqBatch) -> Result<Vec<F>> {
        match self {
            AnyModel::Txt(m) => m.scores(batch),
            AnyModel::Gru(m) => m.scores(batch),
            AnyModel::ItemCf(m) => m.scores(batch),
        }
    }

    fn probabilities(&self, batch: &SeqBatch) -> Result<Vec<F>> {
        match self {
            AnyModel::Txt(m) => m.probabilities(batch),
            AnyModel::Gru(m) => m.probabilities(batch),
            AnyModel::ItemCf(m) => m.probabilities(batch),
        }
    }
}
