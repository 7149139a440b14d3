//! Contrastive span alignment.
//!
//! A linear layer projects token vectors to 64 dimensions. A span is
//! represented by the mean of its projected tokens. Given a sentence with
//! marked argument spans and a second sentence of the same relation, the
//! model is trained so that each marked span lies closer to its counterpart
//! in the second sentence than to the hardest (closest) wrong span, by at
//! least a margin:
//!
//! ```text
//! loss = max(0, ‖a − p‖ − ‖a − n‖ + margin)   summed over arguments
//! ```
//!
//! At inference time every argument of the reference sentence is aligned
//! independently to the nearest candidate span of the target sentence.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::embed::{EmbedError, EmbeddingProvider, TokenVectors};
use crate::matcher::{match_pattern, Span};
use crate::querylang::SyntacticPattern;

pub const PROJECTION_DIM: usize = 64;
pub const MODEL_MAGIC: &[u8; 5] = b"NESA1";

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("EmptySpan: {0:?}")]
    EmptySpan(Span),
    #[error("NoCandidates")]
    NoCandidates,
    #[error("DegenerateDistance")]
    DegenerateDistance,
    #[error("EmptyTrainingSet")]
    EmptyTrainingSet,
    #[error("ModelMissing")]
    ModelMissing,
    #[error("RelationTooSparse: {0}")]
    RelationTooSparse(String),
    #[error("DimensionMismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("FormatError: {0}")]
    Format(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("UnknownId: {0}")]
    UnknownId(u64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl AlignError {
    pub fn code(&self) -> &'static str {
        match self {
            AlignError::EmptySpan(_) => "EmptySpan",
            AlignError::NoCandidates => "NoCandidates",
            AlignError::DegenerateDistance => "DegenerateDistance",
            AlignError::EmptyTrainingSet => "EmptyTrainingSet",
            AlignError::ModelMissing => "ModelMissing",
            AlignError::RelationTooSparse(_) => "RelationTooSparse",
            AlignError::DimensionMismatch { .. } => "DimensionMismatch",
            AlignError::InvalidConfig(_) => "InvalidConfig",
            AlignError::Format(_) => "FormatError",
            AlignError::Embed(e) => e.code(),
            AlignError::UnknownId(_) => "UnknownId",
            AlignError::Io(_) => "IoError",
        }
    }
}

pub type Result<T, E = AlignError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_span_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 1.0,
            epochs: 50,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_span_len: 9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(AlignError::InvalidConfig("margin must be positive".into()));
        }
        if self.max_span_len == 0 {
            return Err(AlignError::InvalidConfig("max_span_len must be at least 1".into()));
        }
        Ok(())
    }

    fn to_text(&self) -> String {
        format!(
            "margin={}\nepochs={}\nlearning_rate={}\nbeta1={}\nbeta2={}\nepsilon={}\nmax_span_len={}\nseed={}\n",
            self.margin,
            self.epochs,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.epsilon,
            self.max_span_len,
            self.seed
        )
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let bad = |k: &str| AlignError::Format(format!("bad config value for {k}"));
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| AlignError::Format(format!("bad config line {line:?}")))?;
            match k {
                "margin" => cfg.margin = v.parse().map_err(|_| bad(k))?,
                "epochs" => cfg.epochs = v.parse().map_err(|_| bad(k))?,
                "learning_rate" => cfg.learning_rate = v.parse().map_err(|_| bad(k))?,
                "beta1" => cfg.beta1 = v.parse().map_err(|_| bad(k))?,
                "beta2" => cfg.beta2 = v.parse().map_err(|_| bad(k))?,
                "epsilon" => cfg.epsilon = v.parse().map_err(|_| bad(k))?,
                "max_span_len" => cfg.max_span_len = v.parse().map_err(|_| bad(k))?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad(k))?,
                _ => return Err(AlignError::Format(format!("unknown config key {k}"))),
            }
        }
        Ok(cfg)
    }
}

/// Linear projection `output_dim × input_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignModel {
    pub input_dim: usize,
    pub output_dim: usize,
    pub projection: Vec<f64>,
    pub config: TrainConfig,
}

impl AlignModel {
    pub fn zeros(input_dim: usize, config: TrainConfig) -> Self {
        AlignModel { input_dim, output_dim: PROJECTION_DIM, projection: vec![0.0; PROJECTION_DIM * input_dim], config }
    }

    /// Uniform(−1/√d, 1/√d) initialization from a seeded stream.
    pub fn init(input_dim: usize, config: TrainConfig, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let projection = (0..PROJECTION_DIM * input_dim).map(|_| rng.random_range(-bound..bound)).collect();
        AlignModel { input_dim, output_dim: PROJECTION_DIM, projection, config }
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.projection
            .chunks_exact(self.input_dim)
            .map(|row| row.iter().zip(v).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// Project every token row; returns `n × output_dim` row-major.
    fn project_rows(&self, tv: &TokenVectors) -> Vec<f64> {
        let mut out = Vec::with_capacity(tv.rows() * self.output_dim);
        for i in 0..tv.rows() {
            out.extend(self.project(tv.row(i)));
        }
        out
    }

    fn check_input(&self, tv: &TokenVectors) -> Result<()> {
        if tv.dim != self.input_dim {
            return Err(AlignError::DimensionMismatch { expected: self.input_dim, found: tv.dim });
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&(self.input_dim as u32).to_le_bytes())?;
        w.write_all(&(self.output_dim as u32).to_le_bytes())?;
        for x in &self.projection {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(self.config.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let short = |_| AlignError::Format("truncated model file".into());
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(short)?;
        if &magic != MODEL_MAGIC {
            return Err(AlignError::Format("bad model magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(short)?;
        let input_dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(short)?;
        let output_dim = u32::from_le_bytes(b4) as usize;
        if output_dim != PROJECTION_DIM {
            return Err(AlignError::Format(format!("expected {PROJECTION_DIM} output rows, found {output_dim}")));
        }
        let mut buf = vec![0u8; input_dim * output_dim * 8];
        r.read_exact(&mut buf).map_err(short)?;
        let projection: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if projection.iter().any(|x| !x.is_finite()) {
            return Err(AlignError::Format("non-finite projection entry".into()));
        }
        let mut tail = String::new();
        r.read_to_string(&mut tail).map_err(|e| AlignError::Format(e.to_string()))?;
        let config = TrainConfig::from_text(&tail)?;
        Ok(AlignModel { input_dim, output_dim, projection, config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        AlignModel::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanRep {
    pub span: Span,
    pub vector: Vec<f64>,
}

/// Every span `(i, j)` with `0 ≤ i < j ≤ n` and `j − i ≤ max_len`, in
/// lexicographic order.
pub fn enumerate_spans(n: usize, max_len: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..=n.min(i + max_len) {
            out.push((i, j));
        }
    }
    out
}

fn check_span(span: Span, n: usize) -> Result<()> {
    if span.0 >= span.1 || span.1 > n {
        return Err(AlignError::EmptySpan(span));
    }
    Ok(())
}

/// Mean of the raw token rows in `span`.
pub fn raw_span_mean(tv: &TokenVectors, span: Span) -> Result<Vec<f64>> {
    check_span(span, tv.rows())?;
    let mut mean = vec![0.0; tv.dim];
    for i in span.0..span.1 {
        for (m, x) in mean.iter_mut().zip(tv.row(i)) {
            *m += x;
        }
    }
    let len = (span.1 - span.0) as f64;
    mean.iter_mut().for_each(|m| *m /= len);
    Ok(mean)
}

/// Projection of the mean token vector of `span`.
pub fn span_rep(model: &AlignModel, tv: &TokenVectors, span: Span) -> Result<SpanRep> {
    model.check_input(tv)?;
    let mean = raw_span_mean(tv, span)?;
    Ok(SpanRep { span, vector: model.project(&mean) })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Projected reps of every candidate span of a sentence, computed through
/// prefix sums over projected token rows.
struct SpanTable {
    spans: Vec<Span>,
    reps: Vec<f64>,
    dim: usize,
}

impl SpanTable {
    fn new(model: &AlignModel, tv: &TokenVectors, max_len: usize) -> Self {
        let dim = model.output_dim;
        let n = tv.rows();
        let projected = model.project_rows(tv);
        let mut prefix = vec![0.0; (n + 1) * dim];
        for i in 0..n {
            for k in 0..dim {
                prefix[(i + 1) * dim + k] = prefix[i * dim + k] + projected[i * dim + k];
            }
        }
        let spans = enumerate_spans(n, max_len);
        let mut reps = Vec::with_capacity(spans.len() * dim);
        for &(i, j) in &spans {
            let len = (j - i) as f64;
            for k in 0..dim {
                reps.push((prefix[j * dim + k] - prefix[i * dim + k]) / len);
            }
        }
        SpanTable { spans, reps, dim }
    }

    fn rep(&self, idx: usize) -> &[f64] {
        &self.reps[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Index of the span nearest to `anchor`, skipping `exclude`; ties go
    /// to the lexicographically first span.
    fn nearest(&self, anchor: &[f64], exclude: Option<Span>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (idx, &span) in self.spans.iter().enumerate() {
            if Some(span) == exclude {
                continue;
            }
            let d = euclidean(anchor, self.rep(idx));
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((idx, d));
            }
        }
        best
    }
}

/// Among all candidate spans of the second sentence except the gold one,
/// the span whose rep lies closest to `anchor`.
pub fn hardest_negative(
    model: &AlignModel,
    s2: &TokenVectors,
    gold: Span,
    anchor: &SpanRep,
    max_len: usize,
) -> Result<SpanRep> {
    model.check_input(s2)?;
    let table = SpanTable::new(model, s2, max_len);
    let (idx, _) = table.nearest(&anchor.vector, Some(gold)).ok_or(AlignError::NoCandidates)?;
    Ok(SpanRep { span: table.spans[idx], vector: table.rep(idx).to_vec() })
}

/// `max(0, ‖a − p‖ − ‖a − n‖ + margin)`
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    (euclidean(anchor, positive) - euclidean(anchor, negative) + margin).max(0.0)
}

/// A training pair with token vectors resolved.
#[derive(Debug, Clone)]
pub struct EncodedPair {
    pub s1: TokenVectors,
    pub args1: Vec<Span>,
    pub s2: TokenVectors,
    pub args2: Vec<Span>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Degenerate {
    Fail,
    Skip,
}

struct PairTerms {
    loss: f64,
    active: usize,
}

/// Accumulate the gradient of the summed argument losses into `grad` with
/// negatives fixed at the current hardest spans.
fn accumulate(
    model: &AlignModel,
    pair: &EncodedPair,
    margin: f64,
    max_len: usize,
    on_degenerate: Degenerate,
    grad: Option<&mut [f64]>,
) -> Result<PairTerms> {
    model.check_input(&pair.s1)?;
    model.check_input(&pair.s2)?;
    if pair.args1.len() != pair.args2.len() {
        return Err(AlignError::InvalidConfig("argument count differs between sentences".into()));
    }
    let table = SpanTable::new(model, &pair.s2, max_len);
    let d = model.input_dim;
    let mut grad = grad;
    let mut terms = PairTerms { loss: 0.0, active: 0 };
    for (&a1, &a2) in pair.args1.iter().zip(&pair.args2) {
        let anchor_raw = raw_span_mean(&pair.s1, a1)?;
        let pos_raw = raw_span_mean(&pair.s2, a2)?;
        let anchor = model.project(&anchor_raw);
        let (neg_idx, _) = table.nearest(&anchor, Some(a2)).ok_or(AlignError::NoCandidates)?;
        let neg_raw = raw_span_mean(&pair.s2, table.spans[neg_idx])?;

        let u_pos: Vec<f64> = anchor_raw.iter().zip(&pos_raw).map(|(a, p)| a - p).collect();
        let u_neg: Vec<f64> = anchor_raw.iter().zip(&neg_raw).map(|(a, n)| a - n).collect();
        let w_pos = model.project(&u_pos);
        let w_neg = model.project(&u_neg);
        let d_pos = w_pos.iter().map(|x| x * x).sum::<f64>().sqrt();
        let d_neg = w_neg.iter().map(|x| x * x).sum::<f64>().sqrt();
        let loss = d_pos - d_neg + margin;
        if loss <= 0.0 {
            continue;
        }
        terms.loss += loss;
        terms.active += 1;
        let Some(g) = grad.as_deref_mut() else { continue };
        // ∂‖W u‖/∂W = (W u) uᵀ / ‖W u‖
        for (w, u, norm, sign) in [(&w_pos, &u_pos, d_pos, 1.0), (&w_neg, &u_neg, d_neg, -1.0)] {
            if norm < 1e-12 {
                match on_degenerate {
                    Degenerate::Fail => return Err(AlignError::DegenerateDistance),
                    Degenerate::Skip => continue,
                }
            }
            for (r, wr) in w.iter().enumerate() {
                let scale = sign * wr / norm;
                let row = &mut g[r * d..(r + 1) * d];
                for (gx, ux) in row.iter_mut().zip(u.iter()) {
                    *gx += scale * ux;
                }
            }
        }
    }
    Ok(terms)
}

/// Analytic gradient of the pair loss with respect to the projection.
pub fn loss_gradient(model: &AlignModel, pair: &EncodedPair, config: &TrainConfig) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; model.projection.len()];
    accumulate(model, pair, config.margin, config.max_span_len, Degenerate::Fail, Some(&mut grad))?;
    Ok(grad)
}

/// Summed hinge loss of one pair at the current model state.
pub fn pair_loss(model: &AlignModel, pair: &EncodedPair, config: &TrainConfig) -> Result<f64> {
    Ok(accumulate(model, pair, config.margin, config.max_span_len, Degenerate::Skip, None)?.loss)
}

/// Number of argument hinges with positive loss.
pub fn active_hinges(model: &AlignModel, pair: &EncodedPair, config: &TrainConfig) -> Result<usize> {
    Ok(accumulate(model, pair, config.margin, config.max_span_len, Degenerate::Skip, None)?.active)
}

/// Sentence pair of one relation: arguments marked on `s1` (reference) and
/// gold arguments on `s2`, in the same slot order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub relation: String,
    pub slots: Vec<String>,
    pub s1: u64,
    pub args1: Vec<Span>,
    pub s2: u64,
    pub args2: Vec<Span>,
}

pub fn encode_pair(pair: &TrainingPair, corpus: &Corpus, provider: &dyn EmbeddingProvider) -> Result<EncodedPair> {
    let s1 = corpus.get_sentence(pair.s1).map_err(|_| AlignError::UnknownId(pair.s1))?;
    let s2 = corpus.get_sentence(pair.s2).map_err(|_| AlignError::UnknownId(pair.s2))?;
    Ok(EncodedPair {
        s1: provider.embed_tokens(s1)?,
        args1: pair.args1.clone(),
        s2: provider.embed_tokens(s2)?,
        args2: pair.args2.clone(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean pair loss per epoch, measured at each step before its update.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Train from already encoded pairs. One Adam step per pair; pair order is
/// reshuffled every epoch from the seeded stream that also drew the
/// initial weights.
pub fn train_encoded(pairs: &[EncodedPair], config: &TrainConfig) -> Result<(AlignModel, TrainLog)> {
    config.validate()?;
    let first = pairs.first().ok_or(AlignError::EmptyTrainingSet)?;
    let input_dim = first.s1.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = AlignModel::init(input_dim, config.clone(), &mut rng);
    let mut adam = Adam::new(model.projection.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut grad = vec![0.0; model.projection.len()];
    let mut log = TrainLog::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let terms = accumulate(&model, &pairs[i], config.margin, config.max_span_len, Degenerate::Skip, Some(&mut grad))?;
            total += terms.loss;
            adam.step(&mut model.projection, &grad, config);
        }
        log.epoch_losses.push(total / pairs.len() as f64);
    }
    Ok((model, log))
}

pub fn train(
    pairs: &[TrainingPair],
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    config: &TrainConfig,
) -> Result<(AlignModel, TrainLog)> {
    if pairs.is_empty() {
        return Err(AlignError::EmptyTrainingSet);
    }
    let encoded = pairs.iter().map(|p| encode_pair(p, corpus, provider)).collect::<Result<Vec<_>>>()?;
    train_encoded(&encoded, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotAlignment {
    pub span: Span,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignPrediction {
    /// One entry per reference argument, in order.
    pub slots: Vec<SlotAlignment>,
    /// Two arguments were aligned to the same span.
    pub collision: bool,
}

/// Align each reference span of `s1` to its nearest candidate span in `s2`.
pub fn align(
    model: &AlignModel,
    s1: &TokenVectors,
    args1: &[Span],
    s2: &TokenVectors,
    max_len: usize,
) -> Result<AlignPrediction> {
    model.check_input(s1)?;
    model.check_input(s2)?;
    let table = SpanTable::new(model, s2, max_len);
    let mut slots = Vec::with_capacity(args1.len());
    for &a in args1 {
        let anchor = span_rep(model, s1, a)?;
        let (idx, distance) = table.nearest(&anchor.vector, None).ok_or(AlignError::NoCandidates)?;
        slots.push(SlotAlignment { span: table.spans[idx], distance });
    }
    let collision = slots.iter().enumerate().any(|(i, a)| slots[i + 1..].iter().any(|b| b.span == a.span));
    Ok(AlignPrediction { slots, collision })
}

/// Sample sentence pairs per relation from the matches of its patterns.
/// Relations named in `dev_relations` contribute only to the second list.
pub fn build_pairs(
    relations: &BTreeMap<String, Vec<SyntacticPattern>>,
    corpus: &Corpus,
    per_relation: usize,
    dev_relations: &HashSet<String>,
    seed: u64,
) -> Result<(Vec<TrainingPair>, Vec<TrainingPair>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (relation, patterns) in relations {
        let distinct: HashSet<&SyntacticPattern> = patterns.iter().collect();
        if distinct.len() < 2 {
            return Err(AlignError::RelationTooSparse(format!("{relation}: needs 2 distinct patterns")));
        }
        // first match per sentence, in pattern order
        let mut by_sentence: BTreeMap<u64, (Vec<String>, Vec<Span>)> = BTreeMap::new();
        for p in patterns {
            for m in match_pattern(p, corpus, None) {
                by_sentence.entry(m.sentence_id).or_insert_with(|| {
                    let slots = m.captures.keys().cloned().collect();
                    let spans = m.captures.values().copied().collect();
                    (slots, spans)
                });
            }
        }
        let matched: Vec<(u64, Vec<String>, Vec<Span>)> =
            by_sentence.into_iter().map(|(id, (slots, spans))| (id, slots, spans)).collect();
        if matched.len() < 2 {
            return Err(AlignError::RelationTooSparse(format!("{relation}: {} matching sentences", matched.len())));
        }
        let slots = matched[0].1.clone();
        if matched.iter().any(|m| m.1 != slots) {
            return Err(AlignError::RelationTooSparse(format!("{relation}: patterns disagree on capture names")));
        }
        let m = matched.len();
        let total = m * (m - 1) / 2;
        let chosen: Vec<(usize, usize)> = if per_relation >= total || total <= 4 * per_relation {
            let mut all: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
            all.shuffle(&mut rng);
            all.truncate(per_relation);
            all
        } else {
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(per_relation);
            while out.len() < per_relation {
                let i = rng.random_range(0..m);
                let j = rng.random_range(0..m);
                if i == j {
                    continue;
                }
                let key = (i.min(j), i.max(j));
                if seen.insert(key) {
                    out.push(key);
                }
            }
            out
        };
        let target = if dev_relations.contains(relation) { &mut dev } else { &mut train };
        for (i, j) in chosen {
            let (a, b) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
            target.push(TrainingPair {
                relation: relation.clone(),
                slots: slots.clone(),
                s1: matched[a].0,
                args1: matched[a].2.clone(),
                s2: matched[b].0,
                args2: matched[b].2.clone(),
            });
        }
    }
    Ok((train, dev))
}
