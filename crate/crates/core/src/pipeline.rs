//! Run configuration and the glue from examples to a trained bundle.

use crate::baselines::{GruConfig, GruModel, ItemCfConfig, ItemCfModel};
use crate::data::{OrderExample, Vocabs};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::model::{AnyModel, ModelKind, TxTConfig, TxTModel};
use crate::store::ModelBundle;
use crate::tensor::Real;
use crate::trainer::{self, AdamConfig, TrainConfig, TrainReport};

/// Everything that determines a training run apart from the data paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub train: TrainConfig,
    pub d_embed: usize,
    pub seq_heads: usize,
    pub ctx_heads: usize,
    pub seq_layers: usize,
    pub ctx_layers: usize,
    /// `None` means "take it from the data".
    pub seq_len: Option<usize>,
    pub leaky_slope: f64,
    pub ffn_multiplier: usize,
    pub version_tag: String,
    /// `None` means the latest training timestamp.
    pub created_at: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TxTConfig::new(3, Vec::new());
        RunConfig {
            model: ModelKind::Txt,
            train: TrainConfig::default(),
            d_embed: t.d_embed,
            seq_heads: t.seq_heads,
            ctx_heads: t.ctx_heads,
            seq_layers: t.seq_layers,
            ctx_layers: t.ctx_layers,
            seq_len: None,
            leaky_slope: t.leaky_slope,
            ffn_multiplier: t.ffn_multiplier,
            version_tag: "v1".to_string(),
            created_at: None,
        }
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "model",
        "precision",
        "seed",
        "epochs",
        "batch_size",
        "lr",
        "workers",
        "clip_norm",
        "d_embed",
        "seq_heads",
        "ctx_heads",
        "seq_layers",
        "ctx_layers",
        "seq_len",
        "leaky_slope",
        "ffn_multiplier",
        "version_tag",
        "created_at",
    ];

    /// Overlays `kv` on the defaults; unknown keys are rejected.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.reject_unknown(Self::KEYS)?;
        let d = RunConfig::default();
        let cfg_err = |e: Error| match e {
            Error::Format(m) => Error::Config(m),
            other => other,
        };
        let clip = match kv.get("clip_norm") {
            None | Some("none") => None,
            Some(v) => Some(v.parse().map_err(|_| Error::Config(format!("bad clip_norm '{v}'")))?),
        };
        let cfg = RunConfig {
            model: kv.get("model").map(str::parse).transpose()?.unwrap_or(d.model),
            train: TrainConfig {
                epochs: kv.parse_or("epochs", d.train.epochs).map_err(cfg_err)?,
                batch_size: kv.parse_or("batch_size", d.train.batch_size).map_err(cfg_err)?,
                seed: kv.parse_or("seed", d.train.seed).map_err(cfg_err)?,
                workers: kv.parse_or("workers", d.train.workers).map_err(cfg_err)?,
                precision: kv.get("precision").map(str::parse).transpose()?.unwrap_or(d.train.precision),
                adam: AdamConfig {
                    lr: kv.parse_or("lr", d.train.adam.lr).map_err(cfg_err)?,
                    ..AdamConfig::default()
                },
                clip_norm: clip,
            },
            d_embed: kv.parse_or("d_embed", d.d_embed).map_err(cfg_err)?,
            seq_heads: kv.parse_or("seq_heads", d.seq_heads).map_err(cfg_err)?,
            ctx_heads: kv.parse_or("ctx_heads", d.ctx_heads).map_err(cfg_err)?,
            seq_layers: kv.parse_or("seq_layers", d.seq_layers).map_err(cfg_err)?,
            ctx_layers: kv.parse_or("ctx_layers", d.ctx_layers).map_err(cfg_err)?,
            seq_len: kv.get("seq_len").map(|_| kv.parse_value("seq_len")).transpose().map_err(cfg_err)?,
            leaky_slope: kv.parse_or("leaky_slope", d.leaky_slope).map_err(cfg_err)?,
            ffn_multiplier: kv.parse_or("ffn_multiplier", d.ffn_multiplier).map_err(cfg_err)?,
            version_tag: kv.get("version_tag").unwrap_or(&d.version_tag).to_string(),
            created_at: kv.get("created_at").map(str::to_string),
        };
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("model", self.model);
        kv.set("precision", self.train.precision);
        kv.set("seed", self.train.seed);
        kv.set("epochs", self.train.epochs);
        kv.set("batch_size", self.train.batch_size);
        kv.set("lr", self.train.adam.lr);
        kv.set("workers", self.train.workers);
        match self.train.clip_norm {
            Some(c) => kv.set("clip_norm", c),
            None => kv.set("clip_norm", "none"),
        }
        kv.set("d_embed", self.d_embed);
        kv.set("seq_heads", self.seq_heads);
        kv.set("ctx_heads", self.ctx_heads);
        kv.set("seq_layers", self.seq_layers);
        kv.set("ctx_layers", self.ctx_layers);
        if let Some(l) = self.seq_len {
            kv.set("seq_len", l);
        }
        kv.set("leaky_slope", self.leaky_slope);
        kv.set("ffn_multiplier", self.ffn_multiplier);
        kv.set("version_tag", &self.version_tag);
        if let Some(c) = &self.created_at {
            kv.set("created_at", c);
        }
        kv
    }

    /// Fills in `seq_len` from the data, rejecting a conflicting value.
    pub fn resolve_seq_len(&mut self, data_len: usize) -> Result<usize> {
        match self.seq_len {
            Some(l) if l != data_len => Err(Error::Config(format!(
                "seq_len {l} does not match the examples' length {data_len}"
            ))),
            _ => {
                self.seq_len = Some(data_len);
                Ok(data_len)
            }
        }
    }

    /// Freshly initialised model for the configured kind, sized to `vocabs`.
    pub fn init_model<F: Real>(&self, vocabs: &Vocabs, seq_len: usize) -> Result<AnyModel<F>> {
        let v = vocabs.items.len();
        let fields = vocabs.context_cardinalities();
        let seed = self.train.seed;
        Ok(match self.model {
            ModelKind::Txt => AnyModel::Txt(TxTModel::init(
                TxTConfig {
                    d_embed: self.d_embed,
                    seq_heads: self.seq_heads,
                    ctx_heads: self.ctx_heads,
                    seq_layers: self.seq_layers,
                    ctx_layers: self.ctx_layers,
                    seq_len,
                    leaky_slope: self.leaky_slope,
                    ffn_multiplier: self.ffn_multiplier,
                    ..TxTConfig::new(v, fields)
                },
                seed,
            )?),
            ModelKind::Rnn | ModelKind::RnnLatentCross => AnyModel::Gru(GruModel::init(
                GruConfig {
                    d_hidden: self.d_embed,
                    seq_len,
                    item_vocab_size: v,
                    context_fields: fields,
                    latent_cross: self.model == ModelKind::RnnLatentCross,
                },
                seed,
            )?),
            ModelKind::ItemCf => {
                return Err(Error::contract("item similarity models are fitted, not initialised"));
            }
        })
    }
}

/// Trains (or, for item similarity, fits) a model on `examples`.
pub fn fit_model<F: Real>(
    cfg: &RunConfig,
    vocabs: &Vocabs,
    seq_len: usize,
    examples: &[OrderExample],
    on_step: impl FnMut(usize, f64),
) -> Result<(AnyModel<F>, TrainReport)> {
    if examples.is_empty() {
        return Err(Error::Training("no training examples".into()));
    }
    if cfg.model == ModelKind::ItemCf {
        let icfg = ItemCfConfig {
            seq_len,
            item_vocab_size: vocabs.items.len(),
            context_fields: vocabs.context_cardinalities(),
        };
        let report = TrainReport { loss_trace: Vec::new(), steps: 0 };
        return Ok((AnyModel::ItemCf(ItemCfModel::fit_examples(icfg, examples)?), report));
    }
    let mut model = cfg.init_model::<F>(vocabs, seq_len)?;
    let report = match &mut model {
        AnyModel::Txt(m) => trainer::train(m, examples, &cfg.train, on_step)?,
        AnyModel::Gru(m) => trainer::train(m, examples, &cfg.train, on_step)?,
        AnyModel::ItemCf(_) => unreachable!("handled above"),
    };
    Ok((model, report))
}

/// Trains and wraps the result in a bundle.
pub fn train_bundle<F: Real>(
    cfg: &RunConfig,
    vocabs: &Vocabs,
    seq_len: usize,
    examples: &[OrderExample],
    created_at: &str,
    on_step: impl FnMut(usize, f64),
) -> Result<(ModelBundle<F>, TrainReport)> {
    if cfg.train.precision != F::PRECISION {
        return Err(Error::contract(format!(
            "run configured for {} but invoked with {}",
            cfg.train.precision,
            F::PRECISION
        )));
    }
    let (model, report) = fit_model::<F>(cfg, vocabs, seq_len, examples, on_step)?;
    let bundle = ModelBundle::new(model, vocabs.clone(), &cfg.version_tag, created_at)?;
    Ok((bundle, report))
}

/// Parses a comma-separated list of `k` values such as `1,3`.
pub fn parse_k_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| match p.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k),
            _ => Err(Error::Config(format!("bad k '{p}'"))),
        })
        .collect()
}
