//! Subword-embedding multi-head classifier mapping super cells to target
//! positions.

mod net;

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::LabeledSample;
use crate::model::{render_feature, FeatureSentence, LabelCodec, ModelError, SuperCell, TargetPosition, TargetSchema};
use crate::perturb::rng_for;

pub use net::{softmax, Dims, EncoderKind, Layout};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("no trainable samples")]
    NoSamples,
    #[error("empty evaluation set")]
    EmptyEvalSet,
    #[error("parameters became non-finite at epoch {0}")]
    NonFinite(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Character n-grams of `<token>` plus one whole-token entry, hashed into
/// a fixed number of buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordVocab {
    pub buckets: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
}

impl SubwordVocab {
    pub fn new(buckets: usize) -> Self {
        SubwordVocab {
            buckets,
            ngram_min: 3,
            ngram_max: 5,
        }
    }

    pub fn ngrams(&self, token: &str) -> Vec<String> {
        let chars: Vec<char> = format!("<{token}>").chars().collect();
        let mut out = Vec::new();
        for n in self.ngram_min..=self.ngram_max {
            out.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
        }
        out
    }

    /// Bucket ids of the token's n-grams followed by its whole-token bucket.
    pub fn token_buckets(&self, token: &str) -> Vec<usize> {
        let b = self.buckets as u64;
        let mut out: Vec<usize> = self
            .ngrams(token)
            .iter()
            .map(|g| (fnv1a64(g.as_bytes()) % b) as usize)
            .collect();
        // 0xff never occurs in UTF-8, so the whole-token key cannot collide
        // with an n-gram key.
        let mut whole = vec![0xffu8];
        whole.extend_from_slice(token.as_bytes());
        out.push((fnv1a64(&whole) % b) as usize);
        out
    }

    pub fn encode(&self, s: &FeatureSentence) -> Vec<Vec<usize>> {
        s.tokens.iter().map(|t| self.token_buckets(t)).collect()
    }
}

fn default_buckets() -> usize {
    1 << 15
}
fn default_dim() -> usize {
    64
}
fn default_hidden() -> usize {
    128
}
fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    50
}
fn default_encoder() -> EncoderKind {
    EncoderKind::Pooled
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_encoder")]
    pub encoder: EncoderKind,
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Attribute heads; defaults to the widest training cell.
    #[serde(default)]
    pub width_slots: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder: default_encoder(),
            buckets: default_buckets(),
            dim: default_dim(),
            hidden: default_hidden(),
            lr: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            width_slots: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.to_string()));
        if self.buckets == 0 || self.dim == 0 || self.hidden == 0 {
            return bad("buckets, dim and hidden must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be a positive number");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Row 0 is the untrained model.
    pub curve: Vec<EpochStats>,
    /// Samples whose label could not be encoded (e.g. a literal key outside
    /// a closed domain or a cell wider than the attribute heads).
    pub skipped_samples: usize,
    /// Heads that saw a single class and were fixed to it.
    pub constant_heads: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Position with COPY markers resolved against the cell.
    pub position: TargetPosition,
    /// Position as predicted, before COPY resolution.
    pub raw: TargetPosition,
    pub probabilities: Vec<Vec<f64>>,
    pub confidence: f64,
    pub degraded_copies: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub codec: LabelCodec,
    pub vocab: SubwordVocab,
    pub constant_heads: Vec<Option<usize>>,
    layout: Layout,
    params: Vec<f64>,
}

/// An encoded training example: bucket ids per token and a label vector.
pub type Encoded = (Vec<Vec<usize>>, Vec<usize>);

/// Mean loss over `batch` and its gradient with respect to every parameter.
pub fn loss_and_grads(
    layout: &Layout,
    params: &[f64],
    batch: &[Encoded],
    constant: &[Option<usize>],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; layout.total];
    let loss = accumulate(layout, params, batch, constant, &mut grad);
    (loss, grad)
}

fn accumulate(layout: &Layout, params: &[f64], batch: &[Encoded], constant: &[Option<usize>], grad: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for (tokens, label) in batch {
        let cache = net::forward(layout, params, tokens);
        let (l, dl) = net::head_loss(&cache.logits, label, constant);
        loss += l;
        net::backward(layout, params, tokens, &cache, &dl, grad);
    }
    let inv = 1.0 / batch.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    loss * inv
}

fn normalized(mut pos: TargetPosition, q: usize) -> TargetPosition {
    if pos.is_discard() {
        pos = TargetPosition::discard(q, pos.attributes.len());
    }
    pos
}

impl TrainedModel {
    fn with_params(
        config: TrainConfig,
        codec: LabelCodec,
        constant_heads: Vec<Option<usize>>,
        params: Option<Vec<f64>>,
    ) -> Self {
        let layout = Layout::new(Dims {
            buckets: config.buckets,
            dim: config.dim,
            hidden: config.hidden,
            encoder: config.encoder,
            head_sizes: codec.head_sizes(),
        });
        let params = params.unwrap_or_else(|| layout.init(&mut rng_for(config.seed)));
        TrainedModel {
            vocab: SubwordVocab::new(config.buckets),
            config,
            codec,
            constant_heads,
            layout,
            params,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn encode(&self, s: &LabeledSample) -> Result<Encoded, ModelError> {
        Ok((self.vocab.encode(&s.feature), self.codec.render_label(&s.label)?))
    }

    /// Per-head logits for a feature sentence.
    pub fn logits(&self, s: &FeatureSentence) -> Vec<Vec<f64>> {
        net::forward(&self.layout, &self.params, &self.vocab.encode(s)).logits
    }

    pub fn predict(&self, cell: &SuperCell) -> Prediction {
        let logits = self.logits(&render_feature(cell));
        let probabilities: Vec<Vec<f64>> = logits
            .iter()
            .enumerate()
            .map(|(k, l)| match self.constant_heads[k] {
                Some(c) => (0..l.len()).map(|i| if i == c { 1.0 } else { 0.0 }).collect(),
                None => softmax(l),
            })
            .collect();
        let label: Vec<usize> = probabilities
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect();
        let confidence = label.iter().zip(&probabilities).map(|(&i, p)| p[i]).product();
        let width = cell.width().min(self.codec.width_slots);
        let mut raw = self.codec.decode(&label, width).expect("argmax labels are in range");
        raw.attributes.resize(cell.width(), None);
        let raw = normalized(raw, self.codec.schema.key_arity());
        let (position, degraded_copies) = raw.resolve(cell);
        Prediction {
            position,
            raw,
            probabilities,
            confidence,
            degraded_copies,
        }
    }

    /// A sample is correct when its predicted position equals its label
    /// (both with COPY resolved and discards normalized).
    pub fn is_correct(&self, s: &LabeledSample) -> bool {
        let expected = normalized(s.label.resolve(&s.cell).0, self.codec.schema.key_arity());
        self.predict(&s.cell).position == expected
    }

    pub fn loss_and_grads(&self, samples: &[LabeledSample]) -> Result<(f64, Vec<f64>), ModelError> {
        let batch = samples.iter().map(|s| self.encode(s)).collect::<Result<Vec<_>, _>>()?;
        Ok(loss_and_grads(&self.layout, &self.params, &batch, &self.constant_heads))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = FileHeader {
            config: self.config.clone(),
            codec: self.codec.clone(),
            constant_heads: self.constant_heads.clone(),
            param_count: self.params.len(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let d = self.config.dim;
        let emb = &self.params[..self.layout.embedding_len()];
        let rows: Vec<usize> = (0..self.config.buckets)
            .filter(|&r| emb[r * d..(r + 1) * d].iter().any(|v| v.to_bits() != 0))
            .collect();
        out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
        for r in rows {
            out.extend_from_slice(&(r as u32).to_le_bytes());
            for v in &emb[r * d..(r + 1) * d] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in &self.params[self.layout.embedding_len()..] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LearnError> {
        let mut r = bytes;
        let fmt = |m: &str| LearnError::Format(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated"))?;
        if &magic != MAGIC {
            return Err(fmt("not a model file"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(LearnError::Format(format!("unsupported version {version}")));
        }
        let hlen = read_u64(&mut r)? as usize;
        if r.len() < hlen {
            return Err(fmt("truncated header"));
        }
        let header: FileHeader = serde_json::from_slice(&r[..hlen]).map_err(|e| LearnError::Format(e.to_string()))?;
        r = &r[hlen..];
        let mut model = TrainedModel::with_params(header.config, header.codec, header.constant_heads, Some(Vec::new()));
        if model.layout.total != header.param_count {
            return Err(fmt("parameter count does not match the configuration"));
        }
        let d = model.config.dim;
        let mut params = vec![0.0; header.param_count];
        let rows = read_u64(&mut r)? as usize;
        for _ in 0..rows {
            let row = read_u32(&mut r)? as usize;
            if row >= model.config.buckets {
                return Err(fmt("embedding row out of range"));
            }
            for v in &mut params[row * d..(row + 1) * d] {
                *v = read_f64(&mut r)?;
            }
        }
        for v in &mut params[model.layout.embedding_len()..] {
            *v = read_f64(&mut r)?;
        }
        if !r.is_empty() {
            return Err(fmt("trailing bytes"));
        }
        model.params = params;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

const MAGIC: &[u8; 8] = b"SCMODEL\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FileHeader {
    config: TrainConfig,
    codec: LabelCodec,
    constant_heads: Vec<Option<usize>>,
    param_count: usize,
}

fn read_u32(r: &mut &[u8]) -> Result<u32, LearnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| LearnError::Format("truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64, LearnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| LearnError::Format("truncated".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut &[u8]) -> Result<f64, LearnError> {
    Ok(f64::from_bits(read_u64(r)?))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            if g == 0.0 && self.m[i] == 0.0 && self.v[i] == 0.0 {
                continue;
            }
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fraction of samples whose predicted position matches the label.
pub fn accuracy(samples: &[LabeledSample], model: &TrainedModel) -> Result<f64, LearnError> {
    if samples.is_empty() {
        return Err(LearnError::EmptyEvalSet);
    }
    let correct = samples.iter().filter(|s| model.is_correct(s)).count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Train with Adam on summed per-head cross-entropy.
///
/// Samples whose label cannot be encoded are skipped and counted. Heads that
/// see a single class in training become constant predictors.
pub fn train(
    samples: &[LabeledSample],
    schema: &TargetSchema,
    copy_slots: usize,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainReport), LearnError> {
    config.validate()?;
    let width = config
        .width_slots
        .unwrap_or_else(|| samples.iter().map(|s| s.cell.width()).max().unwrap_or(1));
    let codec = LabelCodec::new(schema.clone(), copy_slots, width);
    let mut model = TrainedModel::with_params(config.clone(), codec, Vec::new(), None);

    let mut data: Vec<Encoded> = Vec::new();
    let mut kept: Vec<&LabeledSample> = Vec::new();
    for s in samples {
        if let Ok(e) = model.encode(s) {
            data.push(e);
            kept.push(s);
        }
    }
    if data.is_empty() {
        return Err(LearnError::NoSamples);
    }
    let heads = model.codec.head_count();
    model.constant_heads = (0..heads)
        .map(|k| {
            let first = data[0].1[k];
            data.iter().all(|(_, l)| l[k] == first).then_some(first)
        })
        .collect();
    let mut report = TrainReport {
        curve: Vec::new(),
        skipped_samples: samples.len() - data.len(),
        constant_heads: (0..heads).filter(|&k| model.constant_heads[k].is_some()).collect(),
    };

    let train_acc = |m: &TrainedModel| kept.iter().filter(|s| m.is_correct(s)).count() as f64 / kept.len() as f64;
    let mut scratch = vec![0.0; model.layout.total];
    let initial = accumulate(&model.layout, &model.params, &data, &model.constant_heads, &mut scratch);
    report.curve.push(EpochStats {
        epoch: 0,
        loss: initial,
        train_acc: train_acc(&model),
    });

    let mut rng = rng_for(config.seed ^ 0x5eed_5eed);
    let mut adam = Adam::new(model.layout.total);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch: Vec<Encoded> = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            scratch.iter_mut().for_each(|g| *g = 0.0);
            let loss = accumulate(&model.layout, &model.params, &batch, &model.constant_heads, &mut scratch);
            total += loss * chunk.len() as f64;
            adam.step(&mut model.params, &scratch, config.lr);
        }
        if !model.params.iter().all(|v| v.is_finite()) {
            return Err(LearnError::NonFinite(epoch));
        }
        let stats = EpochStats {
            epoch,
            loss: total / data.len() as f64,
            train_acc: train_acc(&model),
        };
        log::debug!("epoch {epoch}: loss {:.5} train_acc {:.4}", stats.loss, stats.train_acc);
        report.curve.push(stats);
    }
    Ok((model, report))
}

pub fn write_loss_curve<W: Write>(curve: &[EpochStats], w: W) -> Result<(), LearnError> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| LearnError::Format(e.to_string());
    wr.write_record(["epoch", "loss", "train_acc"]).map_err(err)?;
    for s in curve {
        wr.write_record([s.epoch.to_string(), format!("{:.6}", s.loss), format!("{:.6}", s.train_acc)])
            .map_err(err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Compare analytic gradients with central finite differences (ε = 1e-4) on
/// a random tiny model and batch. Differences below 1e-6 in absolute terms
/// count as exact; otherwise the error is relative to the larger magnitude.
pub fn gradient_check(encoder: EncoderKind, seed: u64) -> f64 {
    let mut rng = rng_for(seed);
    let heads = rng.gen_range(2..=3);
    let mut head_sizes: Vec<usize> = (0..heads).map(|_| rng.gen_range(2..=5)).collect();
    head_sizes.push(8);
    let layout = Layout::new(Dims {
        buckets: rng.gen_range(8..=24),
        dim: rng.gen_range(2..=4),
        hidden: rng.gen_range(2..=4),
        encoder,
        head_sizes: head_sizes.clone(),
    });
    let params: Vec<f64> = (0..layout.total).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let batch: Vec<Encoded> = (0..3)
        .map(|_| {
            let tokens = (0..rng.gen_range(1..=4))
                .map(|_| (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(0..layout.dims.buckets)).collect())
                .collect();
            let label = head_sizes.iter().map(|&k| rng.gen_range(0..k)).collect();
            (tokens, label)
        })
        .collect();
    max_gradient_error(&layout, &params, &batch)
}

pub fn max_gradient_error(layout: &Layout, params: &[f64], batch: &[Encoded]) -> f64 {
    let constant = vec![None; layout.dims.head_sizes.len()];
    let (_, grad) = loss_and_grads(layout, params, batch, &constant);
    let eps = 1e-4;
    let mut p = params.to_vec();
    let mut scratch = vec![0.0; layout.total];
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let plus = accumulate(layout, &p, batch, &constant, &mut scratch);
        p[i] = orig - eps;
        let minus = accumulate(layout, &p, batch, &constant, &mut scratch);
        p[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let diff = (grad[i] - numeric).abs();
        if diff > 1e-6 {
            worst = worst.max(diff / grad[i].abs().max(numeric.abs()));
        }
    }
    worst
}
