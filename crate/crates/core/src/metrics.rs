//! Top-k accuracy with deterministic tie-breaking.
//!
//! A candidate outranks the label if it scores higher, or scores the same
//! and has a smaller id. The label is a hit at `k` when fewer than `k`
//! candidates outrank it.

use std::fmt;

use crate::data::{OrderExample, SeqBatch, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::model::Scorer;
use crate::tensor::Real;

/// Ids never ranked during evaluation.
pub const RESERVED_IDS: [usize; 2] = [PAD_ID, UNK_ID];

/// Zero-based rank of `label` in `row`, skipping `exclude`.
pub fn rank_of<F: Real>(row: &[F], label: usize, exclude: &[usize]) -> usize {
    let s = row[label];
    row.iter()
        .enumerate()
        .filter(|&(i, &x)| i != label && !exclude.contains(&i) && (x > s || (x == s && i < label)))
        .count()
}

/// Fraction of rows of `scores` (`[n × v]`, row-major) whose label ranks
/// within the top `k`.
pub fn top_k_accuracy<F: Real>(scores: &[F], v: usize, labels: &[usize], k: usize, exclude: &[usize]) -> Result<f64> {
    let hits = top_k_hits(scores, v, labels, &[k], exclude)?;
    Ok(hits[0] as f64 / labels.len() as f64)
}

fn top_k_hits<F: Real>(scores: &[F], v: usize, labels: &[usize], ks: &[usize], exclude: &[usize]) -> Result<Vec<usize>> {
    if labels.is_empty() {
        return Err(Error::contract("top-k accuracy of an empty set"));
    }
    if ks.contains(&0) {
        return Err(Error::contract("k must be at least 1"));
    }
    if v == 0 || scores.len() != labels.len() * v {
        return Err(Error::Dimension {
            op: "top_k_accuracy",
            left: vec![scores.len()],
            right: vec![labels.len(), v],
        });
    }
    let mut hits = vec![0; ks.len()];
    for (row, &label) in scores.chunks(v).zip(labels) {
        if label >= v || exclude.contains(&label) {
            return Err(Error::Vocabulary {
                what: "evaluation label".into(),
                id: label,
                size: v,
            });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("scores".into()));
        }
        let r = rank_of(row, label, exclude);
        for (h, &k) in hits.iter_mut().zip(ks) {
            if r < k {
                *h += 1;
            }
        }
    }
    Ok(hits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub n_examples: usize,
    /// `(k, accuracy)` in the order requested.
    pub accuracy: Vec<(usize, f64)>,
}

impl EvalReport {
    pub fn top(&self, k: usize) -> Option<f64> {
        self.accuracy.iter().find(|(kk, _)| *kk == k).map(|(_, a)| *a)
    }
}

impl fmt::Display for EvalReport {
    /// One tab-separated `model k accuracy n` line per k, under a header.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model\tk\taccuracy\tn")?;
        for (k, a) in &self.accuracy {
            writeln!(f, "{}\t{k}\t{a:.6}\t{}", self.model, self.n_examples)?;
        }
        Ok(())
    }
}

/// Top-k accuracy of `model` on `examples` for each k in `ks`, ranking
/// every id except PAD and UNK.
pub fn evaluate<F: Real, S: Scorer<F> + ?Sized>(
    model: &S,
    name: &str,
    examples: &[OrderExample],
    ks: &[usize],
    batch_size: usize,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    let v = model.item_vocab_size();
    let mut hits = vec![0usize; ks.len()];
    for chunk in examples.chunks(batch_size) {
        let batch = SeqBatch::from_examples(chunk)?;
        let scores = model.scores(&batch)?;
        for (h, c) in hits.iter_mut().zip(top_k_hits(&scores, v, &batch.labels, ks, &RESERVED_IDS)?) {
            *h += c;
        }
    }
    let n = examples.len();
    Ok(EvalReport {
        model: name.to_string(),
        n_examples: n,
        accuracy: ks.iter().zip(hits).map(|(&k, h)| (k, h as f64 / n as f64)).collect(),
    })
}
