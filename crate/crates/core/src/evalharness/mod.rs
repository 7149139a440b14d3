//! Evaluation protocols: relevancy by rank bucket, span-alignment accuracy
//! under the containment criterion, and symbolic-versus-neural comparison.
//! Also home to the synthetic gold-labeled corpus generator.

mod fuzz;
mod synth;

pub use fuzz::{gaussian_mixture, planted_spectrum, sample_pattern};

pub use synth::{
    relation_names, synth_corpus, GoldRecord, RelationQuery, SynthOutput, SynthSpec, MAX_RELATIONS, MAX_TEMPLATES,
    TEMPLATE_NAMES,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align, encode_pair, AlignError, AlignModel, TrainingPair};
use crate::corpus::Corpus;
use crate::embed::EmbeddingProvider;
use crate::matcher::Span;
use crate::retrieval::{ExtractionResult, ResultSource, RetrievalError, SearchEngine, SessionConfig, StreamRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("MissingLabel: sentence {sid}, relation {relation}")]
    MissingLabel { sid: u64, relation: String },
    #[error("SpanOutOfBounds: sentence {sid}: {span:?} in {len} tokens")]
    SpanOutOfBounds { sid: u64, span: Span, len: usize },
    #[error("MissingPrediction: sentence {0}")]
    MissingPrediction(u64),
    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),
    #[error("FormatError: {0}")]
    Format(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::MissingLabel { .. } => "MissingLabel",
            EvalError::SpanOutOfBounds { .. } => "SpanOutOfBounds",
            EvalError::MissingPrediction(_) => "MissingPrediction",
            EvalError::InvalidSpec(_) => "InvalidSpec",
            EvalError::Format(_) => "FormatError",
            EvalError::Retrieval(e) => e.code(),
            EvalError::Align(e) => e.code(),
            EvalError::Io(_) => "IoError",
        }
    }
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceLabel {
    pub sid: u64,
    pub relation: String,
    pub relevant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a2: Option<Span>,
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Format(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

pub fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| EvalError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Labels keyed by (sentence, relation).
#[derive(Debug, Clone, Default)]
pub struct LabelSet {
    map: HashMap<(u64, String), RelevanceLabel>,
}

impl LabelSet {
    pub fn new(labels: impl IntoIterator<Item = RelevanceLabel>) -> Result<Self> {
        let mut map = HashMap::new();
        for l in labels {
            if !l.relevant && (l.a1.is_some() || l.a2.is_some()) {
                return Err(EvalError::Format(format!("sentence {}: spans on an irrelevant label", l.sid)));
            }
            map.insert((l.sid, l.relation.clone()), l);
        }
        Ok(LabelSet { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        LabelSet::new(read_ndjson::<RelevanceLabel>(path)?)
    }

    pub fn get(&self, sid: u64, relation: &str) -> Result<&RelevanceLabel> {
        self.map
            .get(&(sid, relation.to_string()))
            .ok_or_else(|| EvalError::MissingLabel { sid, relation: relation.to_string() })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Per-mille, rounded half up, from integer counts.
fn per_mille(num: usize, den: usize) -> Option<u64> {
    (den > 0).then(|| ((num as u64) * 2000 + den as u64) / (2 * den as u64))
}

/// `"72.2"` style percentage with one decimal; `"n/a"` for an empty bucket.
pub fn format_percent(num: usize, den: usize) -> String {
    match per_mille(num, den) {
        Some(pm) => format!("{}.{}", pm / 10, pm % 10),
        None => "n/a".into(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub relevant: usize,
    pub total: usize,
}

impl Bucket {
    pub fn percent(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.relevant as f64 / self.total as f64)
    }

    pub fn display(&self) -> String {
        format_percent(self.relevant, self.total)
    }

    fn add(&mut self, relevant: bool) {
        self.total += 1;
        self.relevant += relevant as usize;
    }
}

/// One scored retrieval: `rank` is 1-based within its relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedResult {
    pub relation: String,
    pub rank: usize,
    pub sid: u64,
}

/// Inclusive 1-based rank ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankBuckets {
    pub top: (usize, usize),
    pub tail: (usize, usize),
}

impl Default for RankBuckets {
    fn default() -> Self {
        RankBuckets { top: (1, 10), tail: (91, 100) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevancyRow {
    pub all: Bucket,
    pub top: Bucket,
    pub tail: Bucket,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevancyReport {
    pub buckets: RankBuckets,
    pub relations: BTreeMap<String, RelevancyRow>,
    pub overall: RelevancyRow,
}

impl RelevancyReport {
    pub fn render(&self) -> String {
        let b = &self.buckets;
        let mut out = format!(
            "relation\tn\trelevant\ttop {}-{}\tranks {}-{}\n",
            b.top.0, b.top.1, b.tail.0, b.tail.1
        );
        let rows = self.relations.iter().map(|(k, v)| (k.as_str(), v)).chain([("overall", &self.overall)]);
        for (name, r) in rows {
            let _ = writeln!(out, "{name}\t{}\t{}\t{}\t{}", r.all.total, r.all.display(), r.top.display(), r.tail.display());
        }
        out
    }
}

pub fn relevancy_eval(results: &[RankedResult], labels: &LabelSet, buckets: RankBuckets) -> Result<RelevancyReport> {
    let mut relations: BTreeMap<String, RelevancyRow> = BTreeMap::new();
    let mut overall = RelevancyRow::default();
    let within = |r: usize, (lo, hi): (usize, usize)| r >= lo && r <= hi;
    for res in results {
        let relevant = labels.get(res.sid, &res.relation)?.relevant;
        let row = relations.entry(res.relation.clone()).or_default();
        for row in [row, &mut overall] {
            row.all.add(relevant);
            if within(res.rank, buckets.top) {
                row.top.add(relevant);
            }
            if within(res.rank, buckets.tail) {
                row.tail.add(relevant);
            }
        }
    }
    Ok(RelevancyReport { buckets, relations, overall })
}

/// Gold and predicted argument spans for one aligned sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub sid: u64,
    pub len: usize,
    pub gold: Vec<Span>,
    pub pred: Vec<Span>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub pairs: usize,
    pub args: usize,
    pub correct_args: usize,
    pub both_correct: usize,
    pub per_arg_accuracy: f64,
    pub both_args_accuracy: f64,
}

impl AlignmentReport {
    pub fn render(&self) -> String {
        format!(
            "pairs\targs\tper_arg\tboth_args\n{}\t{}\t{}\t{}\n",
            self.pairs,
            self.args,
            format_percent(self.correct_args, self.args),
            format_percent(self.both_correct, self.pairs)
        )
    }
}

/// Containment in either direction.
pub fn span_correct(gold: Span, pred: Span) -> bool {
    (pred.0 <= gold.0 && gold.1 <= pred.1) || (gold.0 <= pred.0 && pred.1 <= gold.1)
}

/// Align each pair's reference arguments into its second sentence. Gold
/// spans are the pair's own `args2`.
pub fn predict_alignments(
    model: &AlignModel,
    pairs: &[TrainingPair],
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<AlignmentRecord>> {
    pairs
        .iter()
        .map(|p| {
            let e = encode_pair(p, corpus, provider)?;
            let pred = align(model, &e.s1, &e.args1, &e.s2, model.config.max_span_len)?;
            Ok(AlignmentRecord {
                sid: p.s2,
                len: e.s2.rows(),
                gold: p.args2.clone(),
                pred: pred.slots.iter().map(|s| s.span).collect(),
            })
        })
        .collect()
}

pub fn alignment_eval(records: &[AlignmentRecord]) -> Result<AlignmentReport> {
    let mut args = 0;
    let mut correct_args = 0;
    let mut both_correct = 0;
    for r in records {
        if r.pred.len() != r.gold.len() {
            return Err(EvalError::MissingPrediction(r.sid));
        }
        for &span in r.gold.iter().chain(&r.pred) {
            if span.0 >= span.1 || span.1 > r.len {
                return Err(EvalError::SpanOutOfBounds { sid: r.sid, span, len: r.len });
            }
        }
        let correct = r.gold.iter().zip(&r.pred).filter(|(g, p)| span_correct(**g, **p)).count();
        args += r.gold.len();
        correct_args += correct;
        both_correct += (correct == r.gold.len()) as usize;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(AlignmentReport {
        pairs: records.len(),
        args,
        correct_args,
        both_correct,
        per_arg_accuracy: ratio(correct_args, args),
        both_args_accuracy: ratio(both_correct, records.len()),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TierStats {
    pub count: usize,
    /// Distinct (slot, lowercased text) values.
    pub unique_captures: usize,
    pub relevant: usize,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub symbolic: TierStats,
    pub neural: TierStats,
}

impl CompareReport {
    pub fn render(&self) -> String {
        let mut out = String::from("tier\tresults\tunique_captures\tprecision\n");
        for (name, t) in [("symbolic", &self.symbolic), ("neural", &self.neural)] {
            let _ = writeln!(out, "{name}\t{}\t{}\t{}", t.count, t.unique_captures, format_percent(t.relevant, t.count));
        }
        out
    }
}

pub fn unique_captures<'a>(results: impl IntoIterator<Item = &'a ExtractionResult>) -> usize {
    results
        .into_iter()
        .flat_map(|r| r.captures.iter().map(|(k, c)| (k.clone(), c.text.to_lowercase())))
        .collect::<HashSet<_>>()
        .len()
}

/// Tier statistics for an already computed result stream.
pub fn tier_stats(results: &[ExtractionResult], relation: &str, labels: &LabelSet) -> Result<TierStats> {
    let mut relevant = 0;
    for r in results {
        relevant += labels.get(r.sentence_id, relation)?.relevant as usize;
    }
    let count = results.len();
    Ok(TierStats {
        count,
        unique_captures: unique_captures(results),
        relevant,
        precision: (count > 0).then(|| relevant as f64 / count as f64),
    })
}

/// Run `query` once and score both tiers against `relation`'s labels.
pub fn compare_symbolic_neural(
    engine: &SearchEngine,
    query: &str,
    relation: &str,
    config: &SessionConfig,
    labels: &LabelSet,
) -> Result<CompareReport> {
    let records = engine.run_to_end(query, config)?;
    let (mut symbolic, mut neural) = (Vec::new(), Vec::new());
    for r in records {
        if let StreamRecord::Result(r) = r {
            match r.source {
                ResultSource::Symbolic => symbolic.push(r),
                ResultSource::Neural => neural.push(r),
            }
        }
    }
    Ok(CompareReport {
        symbolic: tier_stats(&symbolic, relation, labels)?,
        neural: tier_stats(&neural, relation, labels)?,
    })
}
