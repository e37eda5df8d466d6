use std::borrow::Cow;
use std::collections::BTreeMap;

use super::kernels::{self, SeqLayout};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    /// `x` for `x ≥ 0`, `slope·x` otherwise.
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Scale(f64),
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Binary {
        kind: BinaryOp,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Unary {
        kind: UnaryOp,
        x: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    AddRowBias {
        x: Var,
        bias: Var,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    AddPositional {
        x: Var,
        table: Var,
        seq_len: usize,
    },
    InterleaveRows {
        parts: Vec<Var>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: SeqLayout,
        heads: usize,
        key_mask: Option<Vec<bool>>,
        probs: Vec<F>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    MeanMaxPool {
        z: Var,
        layout: SeqLayout,
        mask: Vec<bool>,
        argmax: Vec<usize>,
        counts: Vec<usize>,
    },
    Softmax {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
    Sum {
        x: Var,
    },
}

struct Node<'p, F: Real> {
    value: Cow<'p, [F]>,
    shape: Vec<usize>,
    op: Op<F>,
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Operations are appended in execution order, so the node list is already
/// topologically sorted. Parameters are borrowed rather than copied, which
/// ties a tape's lifetime to the parameter store it reads from.
pub struct Tape<'p, F: Real> {
    nodes: Vec<Node<'p, F>>,
    params: BTreeMap<String, Var>,
}

impl<F: Real> Default for Tape<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, [F]>, shape: Vec<usize>, op: Op<F>, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Vec<F>, shape: Vec<usize>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), shape, op, needs_grad)
    }

    /// A value that is not differentiated.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        let (shape, data) = (t.shape().to_vec(), t.into_data());
        self.push(Cow::Owned(data), shape, Op::Leaf, false)
    }

    /// An anonymous leaf; its gradient is available through [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> Var {
        let (shape, data) = (t.shape().to_vec(), t.into_data());
        self.push(Cow::Owned(data), shape, Op::Leaf, requires_grad)
    }

    /// Registers a named trainable parameter by reference.
    pub fn param(&mut self, name: &str, t: &'p Tensor<F>) -> Result<Var> {
        if self.params.contains_key(name) {
            return Err(Error::contract(format!("parameter '{name}' registered twice")));
        }
        let var = self.push(Cow::Borrowed(t.data()), t.shape().to_vec(), Op::Leaf, true);
        self.params.insert(name.to_string(), var);
        Ok(var)
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("tape values are well-shaped")
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension {
                op,
                left: other.to_vec(),
                right: vec![0, 0],
            }),
        }
    }

    /// Elementwise `a ∘ b`. Shapes must match, except that `b` may have a
    /// trailing dimension of 1 where `a` has any size, in which case each
    /// `b` value is repeated along `a`'s last dimension.
    pub fn binary(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b);
        let broadcast = if sa == sb {
            false
        } else if sa.len() == sb.len() && sb.last() == Some(&1) && sa[..sa.len() - 1] == sb[..sb.len() - 1] {
            true
        } else {
            return Err(Error::Dimension {
                op: "elementwise",
                left: sa,
                right: sb.to_vec(),
            });
        };
        let cols = *sa.last().expect("non-empty shape");
        let (av, bv) = (self.value(a), self.value(b));
        let f = |x: F, y: F| match kind {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
        };
        let out: Vec<F> = if broadcast {
            av.iter().enumerate().map(|(i, &x)| f(x, bv[i / cols])).collect()
        } else {
            av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect()
        };
        Ok(self.derived(out, sa, Op::Binary { kind, a, b, broadcast }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn unary(&mut self, kind: UnaryOp, x: Var) -> Var {
        let xv = self.value(x);
        let out: Vec<F> = match kind {
            UnaryOp::LeakyRelu(slope) => {
                let s = F::lit(slope);
                xv.iter().map(|&v| if v >= F::zero() { v } else { s * v }).collect()
            }
            UnaryOp::Sigmoid => xv.iter().map(|&v| sigmoid(v)).collect(),
            UnaryOp::Tanh => xv.iter().map(|&v| v.tanh()).collect(),
            UnaryOp::Scale(c) => {
                let c = F::lit(c);
                xv.iter().map(|&v| v * c).collect()
            }
        };
        let shape = self.shape(x).to_vec();
        self.derived(out, shape, Op::Unary { kind, x }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(UnaryOp::LeakyRelu(slope), x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Tanh, x)
    }

    /// `a [m×k] · b [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        Ok(self.derived(out, vec![m, n], Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// Adds `bias [d]` to every row of `x [N×d]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, d) = self.matrix_dims(x, "add_row_bias")?;
        if self.shape(bias) != [d] {
            return Err(Error::Dimension {
                op: "add_row_bias",
                left: vec![rows, d],
                right: self.shape(bias).to_vec(),
            });
        }
        let bv = self.value(bias);
        let out: Vec<F> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % d])
            .collect();
        Ok(self.derived(out, vec![rows, d], Op::AddRowBias { x, bias }, &[x, bias]))
    }

    /// Row gather from `table [V×d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.matrix_dims(table, "embedding_lookup")?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Vocabulary {
                what: "embedding lookup".into(),
                id: bad,
                size: v,
            });
        }
        if ids.is_empty() {
            return Err(Error::contract("embedding lookup with no ids"));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        Ok(self.derived(out, vec![ids.len(), d], op, &[table]))
    }

    /// Adds `table[i]` to row `i` of every length-`seq_len` block of `x`.
    pub fn add_positional(&mut self, x: Var, table: Var, seq_len: usize) -> Result<Var> {
        let (rows, d) = self.matrix_dims(x, "add_positional")?;
        let (max_len, d2) = self.matrix_dims(table, "add_positional")?;
        if seq_len > max_len {
            return Err(Error::SequenceLength {
                len: seq_len,
                max: max_len,
            });
        }
        if d != d2 || seq_len == 0 || rows % seq_len != 0 {
            return Err(Error::Dimension {
                op: "add_positional",
                left: vec![rows, d],
                right: vec![max_len, d2],
            });
        }
        let tv = self.value(table);
        let out: Vec<F> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (r, c) = (i / d, i % d);
                v + tv[(r % seq_len) * d + c]
            })
            .collect();
        Ok(self.derived(out, vec![rows, d], Op::AddPositional { x, table, seq_len }, &[x, table]))
    }

    /// Interleaves `m` matrices of shape `[B×d]` into `[B·m × d]` with row
    /// `b·m + f` taken from `parts[f]` row `b`.
    pub fn interleave_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("interleave of zero parts"))?;
        let (b, d) = self.matrix_dims(first, "interleave_rows")?;
        for &p in parts {
            if self.shape(p) != [b, d] {
                return Err(Error::Dimension {
                    op: "interleave_rows",
                    left: vec![b, d],
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let m = parts.len();
        let mut out = vec![F::zero(); b * m * d];
        for (f, &p) in parts.iter().enumerate() {
            let pv = self.value(p);
            for r in 0..b {
                out[(r * m + f) * d..(r * m + f + 1) * d].copy_from_slice(&pv[r * d..(r + 1) * d]);
            }
        }
        let op = Op::InterleaveRows {
            parts: parts.to_vec(),
        };
        Ok(self.derived(out, vec![b * m, d], op, parts))
    }

    /// Multi-head scaled dot-product attention on already-projected inputs.
    /// See [`kernels::attention_forward`] for the layout.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: SeqLayout,
        heads: usize,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (rows, d) = self.matrix_dims(q, "attention")?;
        for other in [k, v] {
            if self.shape(other) != [rows, d] {
                return Err(Error::Dimension {
                    op: "attention",
                    left: vec![rows, d],
                    right: self.shape(other).to_vec(),
                });
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::contract(format!("width {d} not divisible by {heads} heads")));
        }
        if rows != layout.rows() {
            return Err(Error::Dimension {
                op: "attention",
                left: vec![rows, d],
                right: vec![layout.batch, layout.seq_len],
            });
        }
        if let Some(mask) = key_mask {
            if mask.len() != rows {
                return Err(Error::contract(format!(
                    "padding mask has length {} but the input has {rows} positions",
                    mask.len()
                )));
            }
        }
        let (out, probs) =
            kernels::attention_forward(self.value(q), self.value(k), self.value(v), layout, d, heads, key_mask);
        let op = Op::Attention {
            q,
            k,
            v,
            layout,
            heads,
            key_mask: key_mask.map(<[bool]>::to_vec),
            probs,
        };
        Ok(self.derived(out, vec![rows, d], op, &[q, k, v]))
    }

    /// Post-softmax weights saved by an attention node, `[batch][head][query][key]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[F]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (rows, d) = self.matrix_dims(x, "layer_norm")?;
        if d < 2 {
            return Err(Error::contract("layer_norm needs a width of at least 2"));
        }
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    left: vec![rows, d],
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let (y, xhat, rstd) = kernels::layer_norm_forward(self.value(x), d, self.value(gain), self.value(bias));
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        };
        Ok(self.derived(y, vec![rows, d], op, &[x, gain, bias]))
    }

    /// Concatenated mean and max over the real rows of each example.
    pub fn mean_max_pool(&mut self, z: Var, layout: SeqLayout, mask: &[bool]) -> Result<Var> {
        let (rows, d) = self.matrix_dims(z, "mean_max_pool")?;
        if rows != layout.rows() || mask.len() != rows {
            return Err(Error::Dimension {
                op: "mean_max_pool",
                left: vec![rows, d],
                right: vec![layout.batch, layout.seq_len, mask.len()],
            });
        }
        for b in 0..layout.batch {
            if !mask[b * layout.seq_len..(b + 1) * layout.seq_len].iter().any(|&m| m) {
                return Err(Error::contract(format!("example {b} has no real positions to pool")));
            }
        }
        let (out, argmax, counts) = kernels::mean_max_pool_forward(self.value(z), layout, d, mask);
        let op = Op::MeanMaxPool {
            z,
            layout,
            mask: mask.to_vec(),
            argmax,
            counts,
        };
        Ok(self.derived(out, vec![layout.batch, 2 * d], op, &[z]))
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().expect("non-empty shape");
        let mut out = self.value(x).to_vec();
        kernels::softmax_rows(&mut out, cols);
        self.derived(out, shape, Op::Softmax { x }, &[x])
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, v) = self.matrix_dims(logits, "cross_entropy")?;
        if labels.len() != rows {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: vec![rows, v],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= v) {
            return Err(Error::Vocabulary {
                what: "label".into(),
                id: bad,
                size: v,
            });
        }
        let lv = self.value(logits);
        let mut probs = lv.to_vec();
        kernels::softmax_rows(&mut probs, v);
        let mut total = F::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &lv[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<F>().ln() + max;
            total = total + (lse - row[label]);
        }
        let loss = total / F::lit(rows as f64);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.derived(vec![loss], vec![1], op, &[logits]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum::<F>();
        self.derived(vec![s], vec![1], Op::Sum { x }, &[x])
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every named parameter on the tape gets an entry in the result; those
    /// not on any path to the loss get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, idx, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        let named = self
            .params
            .iter()
            .map(|(name, &var)| {
                let shape = self.nodes[var.0].shape.clone();
                let data = grads[var.0]
                    .clone()
                    .unwrap_or_else(|| vec![F::zero(); self.nodes[var.0].value.len()]);
                (name.clone(), Tensor::new(shape, data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { per_var: grads, named })
    }

    fn propagate(&self, op: &Op<F>, idx: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let out = &self.nodes[idx].value;
        match op {
            Op::Leaf => {}
            Op::Binary { kind, a, b, broadcast } => {
                let cols = *self.nodes[idx].shape.last().expect("shape");
                let (av, bv) = (self.value(*a), self.value(*b));
                let bidx = |i: usize| if *broadcast { i / cols } else { i };
                if let Some(ga) = self.slot(grads, *a) {
                    for (i, gi) in g.iter().enumerate() {
                        ga[i] = ga[i]
                            + match kind {
                                BinaryOp::Add | BinaryOp::Sub => *gi,
                                BinaryOp::Mul => *gi * bv[bidx(i)],
                            };
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (i, gi) in g.iter().enumerate() {
                        let j = bidx(i);
                        gb[j] = gb[j]
                            + match kind {
                                BinaryOp::Add => *gi,
                                BinaryOp::Sub => -*gi,
                                BinaryOp::Mul => *gi * av[i],
                            };
                    }
                }
            }
            Op::Unary { kind, x } => {
                let xv = self.value(*x);
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..g.len() {
                        let local = match kind {
                            UnaryOp::LeakyRelu(slope) => {
                                if xv[i] >= F::zero() {
                                    F::one()
                                } else {
                                    F::lit(*slope)
                                }
                            }
                            UnaryOp::Sigmoid => out[i] * (F::one() - out[i]),
                            UnaryOp::Tanh => F::one() - out[i] * out[i],
                            UnaryOp::Scale(c) => F::lit(*c),
                        };
                        gx[i] = gx[i] + g[i] * local;
                    }
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                if self.nodes[a.0].needs_grad {
                    let da = kernels::matmul_a_bt(g, self.value(*b), *m, *k, *n);
                    add_into(self.slot(grads, *a), &da);
                }
                if self.nodes[b.0].needs_grad {
                    let db = kernels::matmul_at_b(self.value(*a), g, *m, *k, *n);
                    add_into(self.slot(grads, *b), &db);
                }
            }
            Op::AddRowBias { x, bias } => {
                add_into(self.slot(grads, *x), g);
                let d = self.nodes[bias.0].value.len();
                if let Some(gb) = self.slot(grads, *bias) {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % d] = gb[i % d] + *gi;
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = self.nodes[table.0].shape[1];
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            gt[id * d + c] = gt[id * d + c] + g[r * d + c];
                        }
                    }
                }
            }
            Op::AddPositional { x, table, seq_len } => {
                add_into(self.slot(grads, *x), g);
                let d = self.nodes[table.0].shape[1];
                if let Some(gt) = self.slot(grads, *table) {
                    for (i, gi) in g.iter().enumerate() {
                        let (r, c) = (i / d, i % d);
                        let t = (r % seq_len) * d + c;
                        gt[t] = gt[t] + *gi;
                    }
                }
            }
            Op::InterleaveRows { parts } => {
                let m = parts.len();
                let d = self.nodes[idx].shape[1];
                for (f, &p) in parts.iter().enumerate() {
                    if let Some(gp) = self.slot(grads, p) {
                        let b = gp.len() / d;
                        for r in 0..b {
                            for c in 0..d {
                                gp[r * d + c] = gp[r * d + c] + g[(r * m + f) * d + c];
                            }
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                heads,
                key_mask,
                probs,
            } => {
                let d = self.nodes[q.0].shape[1];
                let (gq, gk, gv) = kernels::attention_backward(
                    g,
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    probs,
                    *layout,
                    d,
                    *heads,
                    key_mask.as_deref(),
                );
                add_into(self.slot(grads, *q), &gq);
                add_into(self.slot(grads, *k), &gk);
                add_into(self.slot(grads, *v), &gv);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.nodes[gain.0].value.len();
                let gv = self.value(*gain);
                if let Some(gg) = self.slot(grads, *gain) {
                    for (i, gi) in g.iter().enumerate() {
                        gg[i % d] = gg[i % d] + *gi * xhat[i];
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % d] = gb[i % d] + *gi;
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let dn = F::lit(d as f64);
                    for (r, &rs) in rstd.iter().enumerate() {
                        let base = r * d;
                        let mut mean_dxh = F::zero();
                        let mut mean_dxh_xh = F::zero();
                        for c in 0..d {
                            let dxh = g[base + c] * gv[c];
                            mean_dxh = mean_dxh + dxh;
                            mean_dxh_xh = mean_dxh_xh + dxh * xhat[base + c];
                        }
                        mean_dxh = mean_dxh / dn;
                        mean_dxh_xh = mean_dxh_xh / dn;
                        for c in 0..d {
                            let dxh = g[base + c] * gv[c];
                            gx[base + c] =
                                gx[base + c] + rs * (dxh - mean_dxh - xhat[base + c] * mean_dxh_xh);
                        }
                    }
                }
            }
            Op::MeanMaxPool {
                z,
                layout,
                mask,
                argmax,
                counts,
            } => {
                let d = self.nodes[z.0].shape[1];
                let l = layout.seq_len;
                if let Some(gz) = self.slot(grads, *z) {
                    for b in 0..layout.batch {
                        let inv = F::one() / F::lit(counts[b] as f64);
                        for i in 0..l {
                            if !mask[b * l + i] {
                                continue;
                            }
                            for c in 0..d {
                                let gi = (b * l + i) * d + c;
                                gz[gi] = gz[gi] + g[b * 2 * d + c] * inv;
                            }
                        }
                        for c in 0..d {
                            let row = argmax[b * d + c];
                            gz[row * d + c] = gz[row * d + c] + g[b * 2 * d + d + c];
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                let cols = *self.nodes[idx].shape.last().expect("shape");
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, (yrow, grow)) in out.chunks(cols).zip(g.chunks(cols)).enumerate() {
                        let inner: F = yrow.iter().zip(grow).map(|(&y, &gy)| y * gy).sum();
                        for c in 0..cols {
                            gx[r * cols + c] = gx[r * cols + c] + yrow[c] * (grow[c] - inner);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let v = self.nodes[logits.0].shape[1];
                let scale = g[0] / F::lit(labels.len() as f64);
                if let Some(gl) = self.slot(grads, *logits) {
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..v {
                            let onehot = if c == label { F::one() } else { F::zero() };
                            gl[r * v + c] = gl[r * v + c] + (probs[r * v + c] - onehot) * scale;
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|v| *v = *v + g[0]);
                }
            }
        }
    }

    /// Gradient accumulator for `v`, or `None` when `v` is not differentiated.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut [F]> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); node.value.len()]))
    }
}

fn add_into<F: Real>(dst: Option<&mut [F]>, src: &[F]) {
    if let Some(dst) = dst {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = *d + s;
        }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<F: Real> {
    per_var: Vec<Option<Vec<F>>>,
    named: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.named.get(name)
    }

    /// Gradient of a leaf; zeros are reported as `None`.
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        self.per_var.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn named(&self) -> &BTreeMap<String, Tensor<F>> {
        &self.named
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor<F>> {
        self.named
    }
}
