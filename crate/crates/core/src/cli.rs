//! Command-line front end.
//!
//! Configuration precedence for `train`: built-in defaults, then the
//! `--config` file, then flags. The merged result is written to
//! `effective.conf` in the output directory and can be fed back with
//! `--config` to reproduce the run.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use clap::{Args, Parser, Subcommand};

use crate::data::transactions::{format_timestamp, parse_timestamp};
use crate::data::{
    build_vocabs, generate_synthetic, make_examples, parse_transactions, read_examples, split_by_time,
    write_examples, write_transactions, ContextSchema, ExampleOptions, OrderExample, RawContext, SyntheticSpec,
    TransactionRecord, Vocabs,
};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::metrics::{evaluate, EvalReport};
use crate::model::{format_attention_dump, AnyModel, ModelKind};
use crate::pipeline::{parse_k_list, train_bundle, RunConfig};
use crate::serve::{encode_response, Server};
use crate::store::{bundle_checksum, AnyBundle, ModelBundle, RecommendRequest};
use crate::tensor::{Precision, Real};
use crate::trainer::write_loss_trace;

pub const BUNDLE_FILE: &str = "model.txb";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective.conf";
pub const LOSS_FILE: &str = "loss.tsv";
pub const EVAL_FILE: &str = "eval.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const TRAIN_EXAMPLES_FILE: &str = "train.examples";
pub const VALID_EXAMPLES_FILE: &str = "valid.examples";
pub const DATASET_FILE: &str = "dataset.conf";

#[derive(Parser, Debug)]
#[command(name = "txtrec", version, about = "Context-aware next-item recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

// Parsed once per process, so the size spread between variants is harmless.
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a transaction file into vocabularies and example caches.
    Preprocess(PreprocessArgs),
    /// Train a model and write a bundle.
    Train(TrainArgs),
    /// Top-k accuracy of a bundle on held-out examples.
    Eval(EvalArgs),
    /// Answer one recommendation request.
    Predict(PredictArgs),
    /// Serve recommendations over TCP.
    Serve(ServeArgs),
    /// Generate a synthetic transaction file.
    Synth(SynthArgs),
    /// Write the context attention weights for one context.
    DumpAttention(DumpAttentionArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Transaction CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Orders at or after this timestamp go to validation.
    #[arg(long, conflicts_with = "valid_fraction")]
    split_at: Option<String>,
    /// Most recent fraction of orders used for validation.
    #[arg(long, default_value_t = 0.2)]
    valid_fraction: f64,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long, default_value_t = 5)]
    seq_len: usize,
    /// One example per prefix instead of one per order.
    #[arg(long)]
    all_prefixes: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Preprocessed directory or transaction CSV file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// txt, rnn, rnn-latent-cross or itemcf.
    #[arg(long)]
    model: Option<String>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Data-parallel workers per step.
    #[arg(long)]
    workers: Option<usize>,
    /// Global gradient-norm clip; "none" disables.
    #[arg(long)]
    clip_norm: Option<String>,
    #[arg(long)]
    d_embed: Option<usize>,
    #[arg(long)]
    seq_heads: Option<usize>,
    #[arg(long)]
    ctx_heads: Option<usize>,
    #[arg(long)]
    seq_layers: Option<usize>,
    #[arg(long)]
    ctx_layers: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    leaky_slope: Option<f64>,
    #[arg(long)]
    ffn_multiplier: Option<usize>,
    #[arg(long)]
    version_tag: Option<String>,
    /// Creation timestamp recorded in the bundle; defaults to the latest
    /// training order's timestamp.
    #[arg(long)]
    created_at: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Preprocessed directory (uses its validation examples), an examples
    /// file, or a transaction CSV file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "1,3")]
    k: String,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ContextArgs {
    #[arg(long)]
    timestamp: String,
    /// Degrees Celsius.
    #[arg(long, allow_negative_numbers = true)]
    temperature: f64,
    #[arg(long)]
    weather: String,
    #[arg(long)]
    store: String,
    #[arg(long)]
    region: String,
}

impl ContextArgs {
    fn raw(&self) -> Result<RawContext> {
        if !self.temperature.is_finite() {
            return Err(Error::Config("temperature must be finite".into()));
        }
        Ok(RawContext {
            timestamp: parse_timestamp(&self.timestamp)?,
            temperature_c: self.temperature,
            weather: self.weather.clone(),
            store: self.store.clone(),
            region: self.region.clone(),
        })
    }
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Basket item, oldest first; repeat for more.
    #[arg(long = "item")]
    items: Vec<String>,
    #[command(flatten)]
    context: ContextArgs,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Allow items already in the basket in the answer.
    #[arg(long)]
    keep_basket: bool,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    /// Key-value spec file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Spec override `key=value`; repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DumpAttentionArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[command(flatten)]
    context: ContextArgs,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the tool and returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            1
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(a),
        Command::DumpAttention(a) => dump_attention(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_records(path: &Path) -> Result<Vec<TransactionRecord>> {
    let outcome = parse_transactions(open(path)?)?;
    for s in outcome.skipped.iter().take(10) {
        eprintln!("skipped line {}: {}", s.line, s.reason);
    }
    if outcome.skipped.len() > 10 {
        eprintln!("... {} more skipped lines", outcome.skipped.len() - 10);
    }
    eprintln!("read {} orders, skipped {} rows", outcome.records.len(), outcome.skipped.len());
    if outcome.records.is_empty() {
        return Err(Error::format(format!("{} holds no usable orders", path.display())));
    }
    Ok(outcome.records)
}

fn latest_timestamp(records: &[TransactionRecord]) -> Option<NaiveDateTime> {
    records.iter().map(|r| r.context.timestamp).max()
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    if !(0.0..1.0).contains(&a.valid_fraction) {
        return Err(Error::Config("valid-fraction must lie in [0, 1)".into()));
    }
    let records = read_records(&a.data)?;
    let cutoff = match &a.split_at {
        Some(s) => parse_timestamp(s)?,
        None => {
            let mut ts: Vec<NaiveDateTime> = records.iter().map(|r| r.context.timestamp).collect();
            ts.sort();
            let idx = ((ts.len() as f64) * (1.0 - a.valid_fraction)).floor() as usize;
            match ts.get(idx) {
                Some(t) => *t,
                None => *ts.last().expect("non-empty") + chrono::Duration::seconds(1),
            }
        }
    };
    let n_records = records.len();
    let (train, valid) = split_by_time(records, &cutoff);
    if train.is_empty() {
        return Err(Error::Config("no orders fall before the split point".into()));
    }
    let vocabs = build_vocabs(&train, a.min_count, ContextSchema::default())?;
    let opts = ExampleOptions {
        max_len: a.seq_len,
        all_prefixes: a.all_prefixes,
    };
    let tr = make_examples(&train, &vocabs, opts)?;
    let va = make_examples(&valid, &vocabs, opts)?;
    make_dir(&a.out)?;
    vocabs.write(create(&a.out.join(VOCAB_FILE))?)?;
    write_examples(create(&a.out.join(TRAIN_EXAMPLES_FILE))?, &tr.examples, a.seq_len)?;
    write_examples(create(&a.out.join(VALID_EXAMPLES_FILE))?, &va.examples, a.seq_len)?;
    let mut kv = KvMap::new();
    kv.set("orders", n_records);
    kv.set("split_at", format_timestamp(&cutoff));
    kv.set("train_orders", train.len());
    kv.set("valid_orders", valid.len());
    kv.set("train_examples", tr.examples.len());
    kv.set("valid_examples", va.examples.len());
    kv.set("dropped_single_item", tr.dropped_single_item + va.dropped_single_item);
    kv.set("dropped_unknown_label", tr.dropped_unknown_label + va.dropped_unknown_label);
    kv.set("item_vocab_size", vocabs.items.len());
    kv.set("min_count", a.min_count);
    kv.set("seq_len", a.seq_len);
    kv.set("all_prefixes", a.all_prefixes);
    if let Some(t) = latest_timestamp(&train) {
        kv.set("latest_train_timestamp", format_timestamp(&t));
    }
    write_text(&a.out.join(DATASET_FILE), &kv.to_text())?;
    println!(
        "wrote {} training and {} validation examples to {}",
        tr.examples.len(),
        va.examples.len(),
        a.out.display()
    );
    Ok(())
}

/// Training data resolved from either a preprocessed directory or a CSV.
struct TrainData {
    vocabs: Vocabs,
    seq_len: usize,
    train: Vec<OrderExample>,
    valid: Vec<OrderExample>,
    latest: Option<String>,
}

fn load_train_data(path: &Path, cfg: &mut RunConfig) -> Result<TrainData> {
    if path.is_dir() {
        let vocabs = Vocabs::read(open(&path.join(VOCAB_FILE))?)?;
        let (train, len) = read_examples(open(&path.join(TRAIN_EXAMPLES_FILE))?)?;
        let valid_path = path.join(VALID_EXAMPLES_FILE);
        let valid = if valid_path.exists() {
            let (v, vlen) = read_examples(open(&valid_path)?)?;
            if vlen != len {
                return Err(Error::format("training and validation examples differ in length"));
            }
            v
        } else {
            Vec::new()
        };
        let dataset = path.join(DATASET_FILE);
        let latest = if dataset.exists() {
            let text = fs::read_to_string(&dataset).map_err(|e| Error::io(&dataset, e))?;
            KvMap::parse(&text)?.get("latest_train_timestamp").map(str::to_string)
        } else {
            None
        };
        let seq_len = cfg.resolve_seq_len(len)?;
        Ok(TrainData { vocabs, seq_len, train, valid, latest })
    } else {
        let records = read_records(path)?;
        let vocabs = build_vocabs(&records, 1, ContextSchema::default())?;
        let seq_len = cfg.resolve_seq_len(cfg.seq_len.unwrap_or(5))?;
        let set = make_examples(&records, &vocabs, ExampleOptions { max_len: seq_len, all_prefixes: false })?;
        Ok(TrainData {
            vocabs,
            seq_len,
            train: set.examples,
            valid: Vec::new(),
            latest: latest_timestamp(&records).map(|t| format_timestamp(&t)),
        })
    }
}

fn train_flags(a: &TrainArgs) -> KvMap {
    let mut kv = KvMap::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            kv.set(k, v);
        }
    };
    put("model", a.model.clone());
    put("precision", a.precision.clone());
    put("seed", a.seed.map(|x| x.to_string()));
    put("epochs", a.epochs.map(|x| x.to_string()));
    put("batch_size", a.batch_size.map(|x| x.to_string()));
    put("lr", a.lr.map(|x| x.to_string()));
    put("workers", a.workers.map(|x| x.to_string()));
    put("clip_norm", a.clip_norm.clone());
    put("d_embed", a.d_embed.map(|x| x.to_string()));
    put("seq_heads", a.seq_heads.map(|x| x.to_string()));
    put("ctx_heads", a.ctx_heads.map(|x| x.to_string()));
    put("seq_layers", a.seq_layers.map(|x| x.to_string()));
    put("ctx_layers", a.ctx_layers.map(|x| x.to_string()));
    put("seq_len", a.seq_len.map(|x| x.to_string()));
    put("leaky_slope", a.leaky_slope.map(|x| x.to_string()));
    put("ffn_multiplier", a.ffn_multiplier.map(|x| x.to_string()));
    put("version_tag", a.version_tag.clone());
    put("created_at", a.created_at.clone());
    kv
}

fn train(a: TrainArgs) -> Result<()> {
    let mut kv = match &a.config {
        Some(p) => KvMap::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => KvMap::new(),
    };
    kv.merge(&train_flags(&a));
    let mut cfg = RunConfig::from_kv(&kv)?;
    let data = load_train_data(&a.data, &mut cfg)?;
    let created_at = cfg
        .created_at
        .clone()
        .or_else(|| data.latest.clone())
        .unwrap_or_else(|| "1970-01-01T00:00:00".to_string());
    cfg.created_at = Some(created_at.clone());
    make_dir(&a.out)?;
    write_text(&a.out.join(EFFECTIVE_CONFIG_FILE), &cfg.to_kv().to_text())?;
    eprintln!(
        "training {} on {} examples ({} precision, {} worker(s))",
        cfg.model,
        data.train.len(),
        cfg.train.precision,
        cfg.train.workers
    );
    match cfg.train.precision {
        Precision::Standard => train_with::<f32>(&cfg, &data, &created_at, &a.out),
        Precision::Wide => train_with::<f64>(&cfg, &data, &created_at, &a.out),
    }
}

fn train_with<F: Real>(cfg: &RunConfig, data: &TrainData, created_at: &str, out: &Path) -> Result<()>
where
    AnyBundle: From<ModelBundle<F>>,
{
    let every = (data.train.len() / cfg.train.batch_size.max(1)).max(1);
    let (bundle, report) = train_bundle::<F>(cfg, &data.vocabs, data.seq_len, &data.train, created_at, |s, l| {
        if s % every == 0 {
            eprintln!("step {s}: loss {l:.6}");
        }
    })?;
    let mut loss = create(&out.join(LOSS_FILE))?;
    write_loss_trace(&mut loss, &report.loss_trace).map_err(|e| Error::io(out.join(LOSS_FILE), e))?;
    loss.flush().map_err(|e| Error::io(out.join(LOSS_FILE), e))?;
    let bytes = bundle.to_bytes();
    let path = out.join(BUNDLE_FILE);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    println!("bundle {} sha256 {}", path.display(), bundle_checksum(&bytes)?);
    if !data.valid.is_empty() {
        let report = evaluate(&bundle.model, cfg.model.as_str(), &data.valid, &[1, 3], 512)?;
        write_text(&out.join(EVAL_FILE), &report.to_string())?;
        print!("{report}");
    }
    Ok(())
}

fn eval_examples(bundle: &AnyBundle, path: &Path) -> Result<Vec<OrderExample>> {
    let seq_len = match bundle {
        AnyBundle::Standard(b) => b.model.seq_len(),
        AnyBundle::Wide(b) => b.model.seq_len(),
    };
    let (examples, len) = if path.is_dir() {
        let vocabs = Vocabs::read(open(&path.join(VOCAB_FILE))?)?;
        if &vocabs != bundle.vocabs() {
            return Err(Error::contract("the directory's vocabularies differ from the bundle's"));
        }
        read_examples(open(&path.join(VALID_EXAMPLES_FILE))?)?
    } else if path.extension().is_some_and(|e| e == "examples") {
        read_examples(open(path)?)?
    } else {
        let records = read_records(path)?;
        let opts = ExampleOptions { max_len: seq_len, all_prefixes: false };
        (make_examples(&records, bundle.vocabs(), opts)?.examples, seq_len)
    };
    if len > seq_len {
        return Err(Error::SequenceLength { len, max: seq_len });
    }
    Ok(examples)
}

fn eval(a: EvalArgs) -> Result<()> {
    let bundle = AnyBundle::load(&a.bundle)?;
    let ks = parse_k_list(&a.k)?;
    let examples = eval_examples(&bundle, &a.data)?;
    let report: EvalReport = match &bundle {
        AnyBundle::Standard(b) => evaluate(&b.model, b.model.kind().as_str(), &examples, &ks, a.batch_size)?,
        AnyBundle::Wide(b) => evaluate(&b.model, b.model.kind().as_str(), &examples, &ks, a.batch_size)?,
    };
    print!("{report}");
    if let Some(out) = &a.out {
        write_text(out, &report.to_string())?;
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let bundle = AnyBundle::load(&a.bundle)?;
    let req = RecommendRequest {
        items: a.items.clone(),
        context: a.context.raw()?,
        k: a.k,
        exclude_basket: !a.keep_basket,
    };
    print!("{}", encode_response(&bundle.predict_top_k(&req)?));
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let bundle = AnyBundle::load(&a.bundle)?;
    let version = bundle.version_tag().to_string();
    let server = Server::bind(a.addr.as_str(), bundle)?;
    println!("serving {} on {}", version, server.local_addr()?);
    std::io::stdout().flush().ok();
    server.run()
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut text = match &a.spec {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    for o in &a.overrides {
        if !o.contains('=') {
            return Err(Error::Config(format!("--set expects key=value, got '{o}'")));
        }
        text.push('\n');
        text.push_str(o);
    }
    let spec = SyntheticSpec::parse(&text)?;
    let records = generate_synthetic(&spec, a.seed)?;
    let mut out = create(&a.out)?;
    write_transactions(&mut out, &records, &spec.metadata(a.seed))?;
    out.flush().map_err(|e| Error::io(&a.out, e))?;
    println!("wrote {} orders to {}", records.len(), a.out.display());
    Ok(())
}

fn dump_attention(a: DumpAttentionArgs) -> Result<()> {
    let bundle = AnyBundle::load(&a.bundle)?;
    let raw = a.context.raw()?;
    let text = match &bundle {
        AnyBundle::Standard(b) => attention_text(b, &raw)?,
        AnyBundle::Wide(b) => attention_text(b, &raw)?,
    };
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn attention_text<F: Real>(b: &ModelBundle<F>, raw: &RawContext) -> Result<String> {
    let AnyModel::Txt(m) = &b.model else {
        return Err(Error::contract(format!(
            "attention weights exist only for {} bundles, this one is {}",
            ModelKind::Txt,
            b.model.kind()
        )));
    };
    let ctx = b.vocabs.context_from_tokens(&b.vocabs.schema.tokens(raw));
    let weights = m.attention_weight_dump(&ctx)?;
    let names: Vec<String> = m.config.context_fields.iter().map(|(n, _)| n.clone()).collect();
    Ok(format_attention_dump(&names, &weights))
}
