//! Model bundles and single-request inference.
//!
//! Bundle layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "TXTBNDL\0"
//! version  u32      1
//! count    u32      number of sections
//! section  tag[4] u64-length payload, repeated `count` times:
//!            META  key = value text
//!            VOCB  vocabulary text
//!            PARM  u32 n, then n × (u32 name_len, name, u8 dtype_bytes,
//!                  u32 ndim, ndim × u64 dim, raw reals)
//! sha256   32 bytes over everything before it
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::baselines::{GruConfig, GruModel, ItemCfConfig, ItemCfModel};
use crate::data::{ContextVector, RawContext, SeqBatch, Vocabs, Vocabulary, UNK_ID};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::layers::PaddingMask;
use crate::model::{AnyModel, ModelKind, Scorer, TxTConfig, TxTModel};
use crate::params::ParamStore;
use crate::tensor::{Precision, Real, Tensor};

pub const BUNDLE_MAGIC: &[u8; 8] = b"TXTBNDL\0";
pub const BUNDLE_FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<F> {
    pub version_tag: String,
    /// ISO-8601 timestamp recorded by the producer.
    pub created_at: String,
    pub model: AnyModel<F>,
    pub vocabs: Vocabs,
}

fn check_meta_value(what: &str, v: &str) -> Result<()> {
    if v.is_empty() || v.trim() != v || v.contains(['\n', '\r']) {
        return Err(Error::contract(format!("{what} must be a non-empty single line without surrounding spaces")));
    }
    Ok(())
}

impl<F: Real> ModelBundle<F> {
    pub fn new(model: AnyModel<F>, vocabs: Vocabs, version_tag: &str, created_at: &str) -> Result<Self> {
        check_meta_value("version tag", version_tag)?;
        check_meta_value("creation timestamp", created_at)?;
        let (v, fields) = match &model {
            AnyModel::Txt(m) => (m.config.item_vocab_size, &m.config.context_fields),
            AnyModel::Gru(m) => (m.config.item_vocab_size, &m.config.context_fields),
            AnyModel::ItemCf(m) => (m.config.item_vocab_size, &m.config.context_fields),
        };
        if v != vocabs.items.len() {
            return Err(Error::Dimension {
                op: "bundle item vocabulary",
                left: vec![v],
                right: vec![vocabs.items.len()],
            });
        }
        if *fields != vocabs.context_cardinalities() {
            return Err(Error::contract("model context fields do not match the vocabularies"));
        }
        model.params().check_finite()?;
        Ok(ModelBundle {
            version_tag: version_tag.to_string(),
            created_at: created_at.to_string(),
            model,
            vocabs,
        })
    }

    pub fn metadata(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("bundle.version_tag", &self.version_tag);
        kv.set("bundle.created_at", &self.created_at);
        kv.set("bundle.kind", self.model.kind());
        kv.set("bundle.precision", F::PRECISION);
        match &self.model {
            AnyModel::Txt(m) => m.config.to_kv(&mut kv),
            AnyModel::Gru(m) => m.config.to_kv(&mut kv),
            AnyModel::ItemCf(m) => m.config.to_kv(&mut kv),
        }
        kv
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut vocab = Vec::new();
        self.vocabs.write(&mut vocab).expect("writing to memory");
        let mut parm = Vec::new();
        let params = self.model.params();
        parm.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params.iter() {
            parm.extend_from_slice(&(name.len() as u32).to_le_bytes());
            parm.extend_from_slice(name.as_bytes());
            parm.push(F::PRECISION.byte_width() as u8);
            parm.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                parm.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                x.write_le(&mut parm);
            }
        }
        let meta = self.metadata().to_text();
        let sections: [(&[u8; 4], &[u8]); 3] = [
            (b"META", meta.as_bytes()),
            (b"VOCB", &vocab),
            (b"PARM", &parm),
        ];
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&BUNDLE_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (tag, payload) in sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::parse(bytes)?;
        let meta = c.meta()?;
        let precision: Precision = meta.parse_value("bundle.precision")?;
        if precision != F::PRECISION {
            return Err(Error::format(format!(
                "bundle holds {precision} parameters, expected {}",
                F::PRECISION
            )));
        }
        let vocabs = Vocabs::read(c.section(b"VOCB")?)?;
        let params = decode_params::<F>(c.section(b"PARM")?)?;
        let kind: ModelKind = meta
            .require("bundle.kind")?
            .parse()
            .map_err(|e: Error| Error::format(e.to_string()))?;
        let model = match kind {
            ModelKind::Txt => AnyModel::Txt(TxTModel::from_params(TxTConfig::from_kv(&meta)?, params)?),
            ModelKind::Rnn | ModelKind::RnnLatentCross => {
                let cfg = GruConfig::from_kv(&meta)?;
                if cfg.latent_cross != (kind == ModelKind::RnnLatentCross) {
                    return Err(Error::format("model kind disagrees with its configuration"));
                }
                AnyModel::Gru(GruModel::from_params(cfg, params)?)
            }
            ModelKind::ItemCf => AnyModel::ItemCf(ItemCfModel::from_params(ItemCfConfig::from_kv(&meta)?, params)?),
        };
        ModelBundle::new(
            model,
            vocabs,
            meta.require("bundle.version_tag")?,
            meta.require("bundle.created_at")?,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Top-`k` next items for a basket and raw context.
    pub fn predict_top_k(&self, req: &RecommendRequest) -> Result<RecommendResponse> {
        if req.k < 1 {
            return Err(Error::contract("k must be at least 1"));
        }
        let seq_len = self.model.seq_len();
        let mut ids: Vec<usize> = req.items.iter().map(|t| self.vocabs.items.id(t)).collect();
        let cold_start = ids.is_empty();
        if cold_start {
            ids.push(UNK_ID);
        }
        let recent = &ids[ids.len().saturating_sub(seq_len)..];
        let ctx: ContextVector = self.vocabs.context_from_tokens(&self.vocabs.schema.tokens(&req.context));
        let batch = SeqBatch::single(recent, &PaddingMask::all_real(recent.len()), &ctx)?;
        let probs = self.model.probabilities(&batch)?;
        let mut ranked: Vec<(usize, F)> = probs
            .into_iter()
            .enumerate()
            .filter(|&(i, _)| !Vocabulary::is_reserved(i) && !(req.exclude_basket && ids.contains(&i)))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        ranked.truncate(req.k);
        Ok(RecommendResponse {
            version_tag: self.version_tag.clone(),
            cold_start,
            recommendations: ranked
                .into_iter()
                .map(|(id, p)| Recommendation {
                    item: self.vocabs.items.token(id).unwrap_or_default().to_string(),
                    id,
                    probability: p.to_f64().unwrap_or(f64::NAN),
                })
                .collect(),
        })
    }
}

/// A bundle of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyBundle {
    Standard(ModelBundle<f32>),
    Wide(ModelBundle<f64>),
}

macro_rules! with_bundle {
    ($self:expr, $b:ident => $e:expr) => {
        match $self {
            AnyBundle::Standard($b) => $e,
            AnyBundle::Wide($b) => $e,
        }
    };
}

impl AnyBundle {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::parse(bytes)?;
        match c.meta()?.parse_value::<Precision>("bundle.precision")? {
            Precision::Standard => Ok(AnyBundle::Standard(ModelBundle::from_bytes(bytes)?)),
            Precision::Wide => Ok(AnyBundle::Wide(ModelBundle::from_bytes(bytes)?)),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        with_bundle!(self, b => b.to_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        with_bundle!(self, b => b.save(path))
    }

    pub fn version_tag(&self) -> &str {
        with_bundle!(self, b => &b.version_tag)
    }

    pub fn kind(&self) -> ModelKind {
        with_bundle!(self, b => b.model.kind())
    }

    pub fn precision(&self) -> Precision {
        match self {
            AnyBundle::Standard(_) => Precision::Standard,
            AnyBundle::Wide(_) => Precision::Wide,
        }
    }

    pub fn vocabs(&self) -> &Vocabs {
        with_bundle!(self, b => &b.vocabs)
    }

    pub fn metadata(&self) -> KvMap {
        with_bundle!(self, b => b.metadata())
    }

    pub fn predict_top_k(&self, req: &RecommendRequest) -> Result<RecommendResponse> {
        with_bundle!(self, b => b.predict_top_k(req))
    }
}

impl From<ModelBundle<f32>> for AnyBundle {
    fn from(b: ModelBundle<f32>) -> Self {
        AnyBundle::Standard(b)
    }
}

impl From<ModelBundle<f64>> for AnyBundle {
    fn from(b: ModelBundle<f64>) -> Self {
        AnyBundle::Wide(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendRequest {
    /// Basket so far, oldest first, as item names.
    pub items: Vec<String>,
    pub context: RawContext,
    pub k: usize,
    /// Leave items already in the basket out of the answer.
    pub exclude_basket: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub item: String,
    pub id: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendResponse {
    pub version_tag: String,
    /// The basket was empty and was served as a single unknown item.
    pub cold_start: bool,
    /// Descending probability; ties by smaller id.
    pub recommendations: Vec<Recommendation>,
}

/// SHA-256 of a bundle file's payload, as stored in its last 32 bytes.
pub fn bundle_checksum(bytes: &[u8]) -> Result<String> {
    let c = Container::parse(bytes)?;
    Ok(c.checksum.iter().map(|b| format!("{b:02x}")).collect())
}

struct Container<'a> {
    sections: Vec<([u8; 4], &'a [u8])>,
    checksum: &'a [u8],
}

impl<'a> Container<'a> {
    fn parse(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < BUNDLE_MAGIC.len() || &bytes[..BUNDLE_MAGIC.len()] != BUNDLE_MAGIC {
            return Err(Error::format("not a model bundle (bad magic)"));
        }
        if bytes.len() < BUNDLE_MAGIC.len() + 8 + CHECKSUM_LEN {
            return Err(Error::Checksum("bundle is truncated".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(Error::Checksum("bundle content does not match its checksum".into()));
        }
        let mut r = Reader { buf: body, pos: BUNDLE_MAGIC.len() };
        let version = r.u32()?;
        if version != BUNDLE_FORMAT_VERSION {
            return Err(Error::format(format!("unsupported bundle format version {version}")));
        }
        let count = r.u32()?;
        let mut sections = Vec::new();
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.u64()? as usize;
            sections.push((tag, r.take(len)?));
        }
        if r.pos != body.len() {
            return Err(Error::format("trailing bytes after the last section"));
        }
        Ok(Container { sections, checksum })
    }

    fn section(&self, tag: &[u8; 4]) -> Result<&'a [u8]> {
        let mut found = self.sections.iter().filter(|(t, _)| t == tag);
        match (found.next(), found.next()) {
            (Some((_, p)), None) => Ok(p),
            (None, _) => Err(Error::format(format!("missing section {}", String::from_utf8_lossy(tag)))),
            _ => Err(Error::format(format!("repeated section {}", String::from_utf8_lossy(tag)))),
        }
    }

    fn meta(&self) -> Result<KvMap> {
        let text = std::str::from_utf8(self.section(b"META")?).map_err(|_| Error::format("metadata is not UTF-8"))?;
        KvMap::parse(text).map_err(|e| Error::format(e.to_string()))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("section runs past the end of the bundle"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_params<F: Real>(payload: &[u8]) -> Result<ParamStore<F>> {
    let mut r = Reader { buf: payload, pos: 0 };
    let n = r.u32()?;
    let width = F::PRECISION.byte_width();
    let mut params = ParamStore::new();
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format("parameter name is not UTF-8"))?
            .to_string();
        let dtype = r.u8()? as usize;
        if dtype != width {
            return Err(Error::format(format!("parameter '{name}' has {dtype}-byte reals, expected {width}")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(format!("parameter '{name}' is too large")))?;
        let raw = r.take(count.checked_mul(width).ok_or_else(|| Error::format("parameter too large"))?)?;
        let data = raw.chunks_exact(width).map(F::read_le).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(format!("parameter '{name}': {e}")))?;
        params.insert(name, t).map_err(|e| Error::format(e.to_string()))?;
    }
    if r.pos != payload.len() {
        return Err(Error::format("trailing bytes in parameter section"));
    }
    Ok(params)
}
