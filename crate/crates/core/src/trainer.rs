//! Adam, the training loop and synchronous data-parallel steps.
//!
//! A parallel step hands each worker an equal shard of the batch, computes
//! the shard gradients concurrently against the same parameter snapshot,
//! sums them pairwise in ascending worker order (`((g0+g1)+(g2+g3))+…`),
//! divides by the worker count and applies one Adam update. Because the
//! batch loss is a mean, this equals the gradient of the combined batch.

use std::collections::BTreeMap;
use std::io::Write;

use crate::data::{OrderExample, SeqBatch};
use crate::error::{Error, Result};
use crate::model::{loss_and_grads, Trainable};
use crate::params::ParamStore;
use crate::rng;
use crate::tensor::{Precision, Real, Tensor};

pub type Grads<F> = BTreeMap<String, Tensor<F>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: BTreeMap<String, Tensor<F>>,
    pub v: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(config: AdamConfig, params: &ParamStore<F>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
                .collect()
        };
        AdamState {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One Adam update of every parameter. Nothing changes if any gradient is
/// missing, misshapen or non-finite.
pub fn adam_step<F: Real>(params: &mut ParamStore<F>, grads: &Grads<F>, state: &mut AdamState<F>) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::contract(format!("no gradient for parameter '{name}'")))?;
        if g.shape() != p.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::Training(format!("non-finite gradient for parameter '{name}'")));
        }
        if state.m.get(name).map(|m| m.shape()) != Some(p.shape()) {
            return Err(Error::contract(format!("optimizer state does not match parameter '{name}'")));
        }
    }
    state.t += 1;
    let c = state.config;
    let lit = F::lit;
    let (b1, b2) = (lit(c.beta1), lit(c.beta2));
    let bc1 = lit(1.0 - c.beta1.powi(state.t as i32));
    let bc2 = lit(1.0 - c.beta2.powi(state.t as i32));
    let (lr, eps) = (lit(c.lr), lit(c.eps));
    let one = F::one();
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).expect("checked").data_mut();
        let v = state.v.get_mut(name).expect("checked").data_mut();
        for (i, theta) in p.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm<F: Real>(grads: &mut Grads<F>, max_norm: f64) {
    let sq: f64 = grads
        .values()
        .flat_map(|t| t.data())
        .map(|x| {
            let x = x.to_f64().unwrap_or(0.0);
            x * x
        })
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = F::lit(max_norm / norm);
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }
}

/// One optimizer step on a single batch; returns the batch loss.
pub fn step<F: Real, M: Trainable<F>>(
    model: &mut M,
    batch: &SeqBatch,
    state: &mut AdamState<F>,
    clip: Option<f64>,
) -> Result<F> {
    let (loss, mut grads) = loss_and_grads(&*model, batch)?;
    if let Some(c) = clip {
        clip_global_norm(&mut grads, c);
    }
    adam_step(model.params_mut(), &grads, state)?;
    Ok(loss)
}

fn add_into<F: Real>(acc: &mut Grads<F>, other: &Grads<F>) {
    for (name, t) in acc.iter_mut() {
        for (a, b) in t.data_mut().iter_mut().zip(other[name].data()) {
            *a = *a + *b;
        }
    }
}

/// Sums per-worker gradients pairwise in ascending worker order.
pub fn tree_reduce<F: Real>(mut parts: Vec<Grads<F>>) -> Result<Grads<F>> {
    if parts.is_empty() {
        return Err(Error::contract("nothing to reduce"));
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                add_into(&mut a, &b);
            }
            next.push(a);
        }
        parts = next;
    }
    Ok(parts.pop().expect("one left"))
}

/// One synchronous data-parallel step over `shards`, one per worker.
/// Returns the mean of the shard losses.
pub fn parallel_step<F: Real, M: Trainable<F>>(
    model: &mut M,
    shards: &[SeqBatch],
    state: &mut AdamState<F>,
    clip: Option<f64>,
) -> Result<F> {
    let w = shards.len();
    if w == 0 {
        return Err(Error::contract("parallel step needs at least one worker"));
    }
    if shards.iter().any(|s| s.len() != shards[0].len()) {
        let sizes: Vec<usize> = shards.iter().map(SeqBatch::len).collect();
        return Err(Error::contract(format!("worker batches differ in size: {sizes:?}")));
    }
    let snapshot: &M = model;
    let results: Vec<Result<(F, Grads<F>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = shards
            .iter()
            .map(|shard| s.spawn(move || loss_and_grads(snapshot, shard)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Training("worker panicked".into()))))
            .collect()
    });
    let mut losses = Vec::with_capacity(w);
    let mut parts = Vec::with_capacity(w);
    for (id, r) in results.into_iter().enumerate() {
        let (loss, grads) = r?;
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Training(format!("worker {id}: non-finite gradient for parameter '{name}'")));
        }
        losses.push(loss);
        parts.push(grads);
    }
    let mut grads = tree_reduce(parts)?;
    let mut loss = losses[0];
    for l in &losses[1..] {
        loss = loss + *l;
    }
    if w > 1 {
        let inv = F::from_usize(w).expect("small");
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = *x / inv);
        }
        loss = loss / inv;
    }
    if let Some(c) = clip {
        clip_global_norm(&mut grads, c);
    }
    adam_step(model.params_mut(), &grads, state)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub workers: usize,
    pub precision: Precision,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    /// One epoch, batches of 512, learning rate 0.001, a single worker.
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 512,
            seed: 0,
            workers: 1,
            precision: Precision::Standard,
            adam: AdamConfig::default(),
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.workers == 0 {
            return Err(Error::Config("epochs, batch_size and workers must be positive".into()));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// `(step, mean batch loss)`, steps counted from 1.
    pub loss_trace: Vec<(usize, f64)>,
    pub steps: usize,
}

/// Trains for `config.epochs` passes over `examples`, reshuffling each
/// epoch from the seed. With several workers each batch is split into equal
/// shards; a final batch that does not divide evenly runs as a plain step.
pub fn train<F: Real, M: Trainable<F>>(
    model: &mut M,
    examples: &[OrderExample],
    config: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Training("no training examples".into()));
    }
    let mut state = AdamState::new(config.adam, model.params());
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        rng::shuffle(&mut rng::derived(config.seed, epoch as u64), &mut order);
        for chunk in order.chunks(config.batch_size) {
            let w = config.workers;
            let loss = if w > 1 && chunk.len() % w == 0 {
                let per = chunk.len() / w;
                let shards = chunk
                    .chunks(per)
                    .map(|c| SeqBatch::from_examples(c.iter().map(|&i| &examples[i])))
                    .collect::<Result<Vec<_>>>()?;
                parallel_step(model, &shards, &mut state, config.clip_norm)?
            } else {
                let batch = SeqBatch::from_examples(chunk.iter().map(|&i| &examples[i]))?;
                step(model, &batch, &mut state, config.clip_norm)?
            };
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss became non-finite at step {}", trace.len() + 1)));
            }
            trace.push((trace.len() + 1, loss));
            on_step(trace.len(), loss);
        }
    }
    Ok(TrainReport {
        steps: trace.len(),
        loss_trace: trace,
    })
}

/// Two tab-separated columns: step and loss.
pub fn write_loss_trace<W: Write>(mut out: W, trace: &[(usize, f64)]) -> std::io::Result<()> {
    writeln!(out, "step\tloss")?;
    for (s, l) in trace {
        writeln!(out, "{s}\t{l}")?;
    }
    Ok(())
}
