use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::context::{ContextSchema, CONTEXT_FIELDS};
use super::transactions::TransactionRecord;
use super::vocab::{Vocabulary, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::layers::PaddingMask;
use crate::rng;
use crate::tensor::kernels::SeqLayout;

/// Context ids `c_1..c_m`, one per configured field.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContextVector(pub Vec<usize>);

impl ContextVector {
    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The item vocabulary plus one vocabulary per context field.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabs {
    pub items: Vocabulary,
    pub context: Vec<(String, Vocabulary)>,
    pub schema: ContextSchema,
}

impl Vocabs {
    pub fn context_cardinalities(&self) -> Vec<(String, usize)> {
        self.context.iter().map(|(n, v)| (n.clone(), v.len())).collect()
    }

    pub fn context_vector(&self, record: &TransactionRecord) -> ContextVector {
        self.context_from_tokens(&self.schema.tokens(&record.context))
    }

    pub fn context_from_tokens(&self, tokens: &[String]) -> ContextVector {
        ContextVector(
            self.context
                .iter()
                .zip(tokens)
                .map(|((_, v), t)| v.id(t))
                .collect(),
        )
    }

    /// Text form: a `[schema]` section then one section per vocabulary,
    /// each line `id<TAB>token<TAB>count`.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::format(format!("write failed: {e}"));
        writeln!(out, "[schema]").map_err(io)?;
        writeln!(out, "temperature_min={}", self.schema.temperature_min).map_err(io)?;
        writeln!(out, "temperature_max={}", self.schema.temperature_max).map_err(io)?;
        writeln!(out, "temperature_buckets={}", self.schema.temperature_buckets).map_err(io)?;
        let mut section = |name: &str, v: &Vocabulary| -> Result<()> {
            writeln!(out, "[{name}]").map_err(io)?;
            for (id, token, count) in v.entries() {
                writeln!(out, "{id}\t{token}\t{count}").map_err(io)?;
            }
            Ok(())
        };
        section("items", &self.items)?;
        for (name, v) in &self.context {
            section(&format!("context.{name}"), v)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut sections: Vec<(String, Vec<String>)> = Vec::new();
        for line in input.lines() {
            let line = line.map_err(|e| Error::format(format!("read failed: {e}")))?;
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push((name.to_string(), Vec::new()));
            } else if let Some((_, lines)) = sections.last_mut() {
                lines.push(line);
            } else {
                return Err(Error::format("vocabulary data before first section"));
            }
        }
        let mut schema = ContextSchema::default();
        let mut items = None;
        let mut context = Vec::new();
        for (name, lines) in sections {
            if name == "schema" {
                for l in lines {
                    let (k, v) = l
                        .split_once('=')
                        .ok_or_else(|| Error::format(format!("bad schema line '{l}'")))?;
                    let num = |v: &str| v.parse::<f64>().map_err(|_| Error::format(format!("bad number '{v}'")));
                    match k {
                        "temperature_min" => schema.temperature_min = num(v)?,
                        "temperature_max" => schema.temperature_max = num(v)?,
                        "temperature_buckets" => schema.temperature_buckets = num(v)? as usize,
                        _ => return Err(Error::format(format!("unknown schema key '{k}'"))),
                    }
                }
                continue;
            }
            let mut entries = Vec::new();
            for (expected, l) in lines.iter().enumerate() {
                let mut parts = l.split('\t');
                let (Some(id), Some(token), Some(count), None) = (parts.next(), parts.next(), parts.next(), parts.next())
                else {
                    return Err(Error::format(format!("bad vocabulary line '{l}'")));
                };
                if id.parse::<usize>().ok() != Some(expected) {
                    return Err(Error::format(format!("vocabulary ids must be dense, got '{id}'")));
                }
                let count = count
                    .parse()
                    .map_err(|_| Error::format(format!("bad count '{count}'")))?;
                entries.push((token.to_string(), count));
            }
            let vocab = Vocabulary::from_entries(entries)?;
            if name == "items" {
                items = Some(vocab);
            } else if let Some(field) = name.strip_prefix("context.") {
                context.push((field.to_string(), vocab));
            } else {
                return Err(Error::format(format!("unknown vocabulary section '{name}'")));
            }
        }
        schema.validate()?;
        let items = items.ok_or_else(|| Error::format("missing [items] vocabulary"))?;
        Ok(Vocabs { items, context, schema })
    }
}

/// Builds the item vocabulary and one vocabulary per context field.
pub fn build_vocabs(records: &[TransactionRecord], min_count: u64, schema: ContextSchema) -> Result<Vocabs> {
    if records.is_empty() {
        return Err(Error::contract("cannot build vocabularies from zero records"));
    }
    schema.validate()?;
    let mut item_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut ctx_counts: Vec<BTreeMap<String, u64>> = vec![BTreeMap::new(); CONTEXT_FIELDS.len()];
    for r in records {
        for item in &r.items {
            *item_counts.entry(item.clone()).or_default() += 1;
        }
        for (counts, token) in ctx_counts.iter_mut().zip(schema.tokens(&r.context)) {
            *counts.entry(token).or_default() += 1;
        }
    }
    Ok(Vocabs {
        items: Vocabulary::from_counts(&item_counts, min_count),
        context: CONTEXT_FIELDS
            .iter()
            .zip(&ctx_counts)
            .map(|(name, counts)| (name.to_string(), Vocabulary::from_counts(counts, min_count)))
            .collect(),
        schema,
    })
}

/// One training instance: the padded basket prefix, its context, and the
/// next item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderExample {
    /// Length `L_max`, real ids first then `PAD`.
    pub input_ids: Vec<usize>,
    pub mask: PaddingMask,
    pub context: ContextVector,
    pub label: usize,
}

impl OrderExample {
    /// Pads `prefix` (already truncated) to `max_len`.
    pub fn new(prefix: &[usize], max_len: usize, context: ContextVector, label: usize) -> Result<Self> {
        if prefix.is_empty() {
            return Err(Error::contract("example needs at least one input item"));
        }
        if prefix.len() > max_len {
            return Err(Error::SequenceLength {
                len: prefix.len(),
                max: max_len,
            });
        }
        if Vocabulary::is_reserved(label) {
            return Err(Error::contract("label must not be PAD or UNK"));
        }
        let mut input_ids = prefix.to_vec();
        input_ids.resize(max_len, PAD_ID);
        Ok(OrderExample {
            input_ids,
            mask: PaddingMask::prefix(prefix.len(), max_len)?,
            context,
            label,
        })
    }

    pub fn real_items(&self) -> &[usize] {
        &self.input_ids[..self.mask.real_count()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleOptions {
    pub max_len: usize,
    /// Emit one example per prefix of each order instead of only the full one.
    pub all_prefixes: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExampleSet {
    pub examples: Vec<OrderExample>,
    pub dropped_single_item: usize,
    pub dropped_unknown_label: usize,
}

/// The last item of each order is the label; the preceding items (the most
/// recent `max_len` of them) are the input.
pub fn make_examples(records: &[TransactionRecord], vocabs: &Vocabs, opts: ExampleOptions) -> Result<ExampleSet> {
    if opts.max_len == 0 {
        return Err(Error::contract("max_len must be positive"));
    }
    let mut set = ExampleSet::default();
    for r in records {
        if r.items.len() < 2 {
            set.dropped_single_item += 1;
            continue;
        }
        let ids: Vec<usize> = r.items.iter().map(|t| vocabs.items.id(t)).collect();
        let context = vocabs.context_vector(r);
        let ends: Vec<usize> = if opts.all_prefixes {
            (1..ids.len()).collect()
        } else {
            vec![ids.len() - 1]
        };
        for end in ends {
            let label = ids[end];
            if label == UNK_ID {
                set.dropped_unknown_label += 1;
                continue;
            }
            let start = end.saturating_sub(opts.max_len);
            set.examples
                .push(OrderExample::new(&ids[start..end], opts.max_len, context.clone(), label)?);
        }
    }
    Ok(set)
}

/// Seeded shuffle, then consecutive chunks of `batch_size`; the final short
/// chunk is kept.
pub fn batch<T: Clone>(examples: &[T], batch_size: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    rng::shuffle(&mut rng::seeded(seed), &mut order);
    Ok(order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| examples[i].clone()).collect())
        .collect())
}

/// Flattened model input for a batch of examples of equal padded length.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub layout: SeqLayout,
    /// `[batch·L]`
    pub item_ids: Vec<usize>,
    pub mask: Vec<bool>,
    /// `[batch·m]`
    pub context_ids: Vec<usize>,
    pub fields: usize,
    pub labels: Vec<usize>,
}

impl SeqBatch {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a OrderExample>) -> Result<Self> {
        let mut b = SeqBatch {
            layout: SeqLayout { batch: 0, seq_len: 0 },
            item_ids: Vec::new(),
            mask: Vec::new(),
            context_ids: Vec::new(),
            fields: 0,
            labels: Vec::new(),
        };
        for (i, ex) in examples.into_iter().enumerate() {
            if i == 0 {
                b.layout.seq_len = ex.input_ids.len();
                b.fields = ex.context.len();
            } else if ex.input_ids.len() != b.layout.seq_len || ex.context.len() != b.fields {
                return Err(Error::Dimension {
                    op: "batch",
                    left: vec![b.layout.seq_len, b.fields],
                    right: vec![ex.input_ids.len(), ex.context.len()],
                });
            }
            b.item_ids.extend_from_slice(&ex.input_ids);
            b.mask.extend_from_slice(ex.mask.flags());
            b.context_ids.extend_from_slice(ex.context.ids());
            b.labels.push(ex.label);
            b.layout.batch += 1;
        }
        if b.layout.batch == 0 {
            return Err(Error::contract("empty batch"));
        }
        Ok(b)
    }

    /// A batch of one unlabelled sequence of arbitrary length.
    pub fn single(item_ids: &[usize], mask: &PaddingMask, context: &ContextVector) -> Result<Self> {
        if item_ids.len() != mask.len() {
            return Err(Error::contract(format!(
                "{} item ids but a mask of length {}",
                item_ids.len(),
                mask.len()
            )));
        }
        Ok(SeqBatch {
            layout: SeqLayout {
                batch: 1,
                seq_len: item_ids.len(),
            },
            item_ids: item_ids.to_vec(),
            mask: mask.flags().to_vec(),
            context_ids: context.ids().to_vec(),
            fields: context.len(),
            labels: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.layout.batch
    }

    pub fn is_empty(&self) -> bool {
        self.layout.batch == 0
    }

    /// Ids of the real items of example `b`.
    pub fn real_items(&self, b: usize) -> impl Iterator<Item = usize> + '_ {
        let l = self.layout.seq_len;
        (b * l..(b + 1) * l).filter(|&i| self.mask[i]).map(|i| self.item_ids[i])
    }

    pub fn context_of(&self, b: usize) -> &[usize] {
        &self.context_ids[b * self.fields..(b + 1) * self.fields]
    }
}

/// Example cache: a header line, then `label<TAB>ctx,ids<TAB>input,ids`
/// per example (real inputs only; padding is implied by `max_len`).
pub fn write_examples<W: Write>(mut out: W, examples: &[OrderExample], max_len: usize) -> Result<()> {
    let io = |e: std::io::Error| Error::format(format!("write failed: {e}"));
    writeln!(out, "# txtrec examples v1 max_len={max_len}").map_err(io)?;
    let join = |ids: &[usize]| ids.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    for ex in examples {
        writeln!(out, "{}\t{}\t{}", ex.label, join(ex.context.ids()), join(ex.real_items())).map_err(io)?;
    }
    Ok(())
}

pub fn read_examples<R: BufRead>(input: R) -> Result<(Vec<OrderExample>, usize)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("empty example cache"))?
        .map_err(|e| Error::format(e.to_string()))?;
    let max_len: usize = header
        .strip_prefix("# txtrec examples v1 max_len=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format(format!("bad example cache header '{header}'")))?;
    let ids = |s: &str| -> Result<Vec<usize>> {
        s.split(',')
            .filter(|p| !p.is_empty())
            .map(|p| p.parse().map_err(|_| Error::format(format!("bad id '{p}'"))))
            .collect()
    };
    let mut examples = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::format(e.to_string()))?;
        let mut parts = line.split('\t');
        let (Some(label), Some(ctx), Some(input), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::format(format!("bad example line '{line}'")));
        };
        let label = label.parse().map_err(|_| Error::format(format!("bad label '{label}'")))?;
        examples.push(OrderExample::new(&ids(input)?, max_len, ContextVector(ids(ctx)?), label)?);
    }
    Ok((examples, max_len))
}
