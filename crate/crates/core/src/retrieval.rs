//! Neural extractive search: pool symbolic results into a dense query
//! vector, retrieve nearest sentences, project capture slots onto them with
//! the alignment model, and aggregate captured values.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align, AlignError, AlignModel};
use crate::corpus::{Corpus, Sentence};
use crate::embed::{apply_pca, fit_pca, EmbedError, EmbeddingProvider, PcaModel};
use crate::knn::{build_exact_with, build_ivf_from, KnnError, Neighbor, SearchIndex};
use crate::matcher::{expand_capture, match_boolean, match_pattern, ExpandMode, Match, Span};
use crate::querylang::{compile_by_example, parse_query, Query, QueryError, SyntacticPattern};

pub const DEFAULT_POOL_CAP: usize = 75;
pub const BATCH_SIZE: usize = 10;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("NoSymbolicResults")]
    NoSymbolicResults,
    #[error("ModelMissing")]
    ModelMissing,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Align(#[from] AlignError),
}

impl RetrievalError {
    pub fn code(&self) -> &'static str {
        match self {
            RetrievalError::NoSymbolicResults => "NoSymbolicResults",
            RetrievalError::ModelMissing => "ModelMissing",
            RetrievalError::InvalidConfig(_) => "InvalidConfig",
            RetrievalError::Query(e) => e.code(),
            RetrievalError::Embed(e) => e.code(),
            RetrievalError::Knn(e) => e.code(),
            RetrievalError::Align(e) => e.code(),
        }
    }
}

pub type Result<T, E = RetrievalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector {
    pub vector: Vec<f64>,
    pub pool_size: usize,
    /// Distinct sentence ids that were pooled, ascending.
    pub pool_ids: Vec<u64>,
}

/// PCA-reduced sentence vector, as stored in the index.
pub fn reduced_sentence_vector(sentence: &Sentence, provider: &dyn EmbeddingProvider, pca: &PcaModel) -> Result<Vec<f64>> {
    let v = provider.embed_sentence(sentence)?;
    Ok(apply_pca(pca, &v.vector)?)
}

/// Mean of the reduced sentence vectors of the first `pool_cap` matches
/// (sentence-id order), counting each sentence once.
pub fn encode_query(
    pattern: &SyntacticPattern,
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    pca: &PcaModel,
    pool_cap: usize,
) -> Result<QueryVector> {
    let matches = match_pattern(pattern, corpus, Some(pool_cap));
    encode_pool(&matches, corpus, provider, pca, pool_cap)
}

/// Pool from an already computed, sentence-ordered match list.
pub fn encode_pool(
    matches: &[Match],
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    pca: &PcaModel,
    pool_cap: usize,
) -> Result<QueryVector> {
    let ids: BTreeSet<u64> = matches.iter().take(pool_cap).map(|m| m.sentence_id).collect();
    if ids.is_empty() {
        return Err(RetrievalError::NoSymbolicResults);
    }
    let mut sum = vec![0.0; pca.output_dim()];
    for &id in &ids {
        let s = corpus.get_sentence(id).map_err(|_| RetrievalError::InvalidConfig(format!("unknown sentence {id}")))?;
        let v = reduced_sentence_vector(s, provider, pca)?;
        sum.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
    }
    let n = ids.len();
    sum.iter_mut().for_each(|x| *x /= n as f64);
    Ok(QueryVector { vector: sum, pool_size: n, pool_ids: ids.into_iter().collect() })
}

/// Up to `k` nearest indexed sentences not in `exclude`, ascending by
/// distance, in batches of [`BATCH_SIZE`].
pub fn neural_search(
    qvec: &QueryVector,
    index: &SearchIndex,
    k: usize,
    exclude: &HashSet<u64>,
    nprobe: Option<usize>,
) -> Result<Vec<Vec<Neighbor>>> {
    if k == 0 {
        return Err(RetrievalError::InvalidConfig("k must be at least 1".into()));
    }
    let q: Vec<f32> = qvec.vector.iter().map(|&x| x as f32).collect();
    let hits = index.search(&q, k.saturating_add(exclude.len()), nprobe)?;
    let kept: Vec<Neighbor> = hits.into_iter().filter(|n| !exclude.contains(&n.id)).take(k).collect();
    Ok(kept.chunks(BATCH_SIZE).map(|c| c.to_vec()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultSource {
    Symbolic,
    Neural,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub sentence_id: u64,
    pub source: ResultSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    pub captures: BTreeMap<String, CaptureSpan>,
    #[serde(default)]
    pub collision: bool,
}

fn capture(sentence: &Sentence, span: Span) -> CaptureSpan {
    CaptureSpan { start: span.0, end: span.1, text: sentence.span_text(span.0, span.1) }
}

/// Symbolic match rendered as a result; captures widened per `mode`.
pub fn symbolic_result(m: &Match, sentence: &Sentence, mode: ExpandMode) -> ExtractionResult {
    let captures = m
        .captures
        .keys()
        .map(|name| {
            let e = expand_capture(m, sentence, name, mode).expect("capture name from the match itself");
            (name.clone(), capture(sentence, e.span))
        })
        .collect();
    ExtractionResult { sentence_id: m.sentence_id, source: ResultSource::Symbolic, distance: None, captures, collision: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Neural result budget.
    pub k: usize,
    pub pool_cap: usize,
    /// Drop neural sentences without this word (case-insensitive).
    #[serde(default)]
    pub keyword_filter: Option<String>,
    #[serde(default)]
    pub capture_display_mode: ExpandMode,
    #[serde(default)]
    pub nprobe: Option<usize>,
    /// Cap on emitted symbolic results; all are emitted when absent.
    #[serde(default)]
    pub symbolic_cap: Option<usize>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            k: 100,
            pool_cap: DEFAULT_POOL_CAP,
            keyword_filter: None,
            capture_display_mode: ExpandMode::Token,
            nprobe: None,
            symbolic_cap: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(RetrievalError::InvalidConfig("k must be at least 1".into()));
        }
        if self.pool_cap == 0 {
            return Err(RetrievalError::InvalidConfig("pool_cap must be at least 1".into()));
        }
        if self.nprobe == Some(0) {
            return Err(RetrievalError::InvalidConfig("nprobe must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub symbolic: usize,
    pub neural: usize,
    pub pool_size: usize,
    /// Neural sentences dropped by the keyword filter.
    pub filtered: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum StreamRecord {
    Result(ExtractionResult),
    Summary(SearchSummary),
}

/// Symbolic tier alone, for boolean and by-example queries: up to `cap`
/// matches in matcher order. Returns the results and whether the cap cut
/// the list short.
pub fn symbolic_search(
    corpus: &Corpus,
    query_text: &str,
    mode: ExpandMode,
    cap: Option<usize>,
) -> Result<(Vec<ExtractionResult>, bool)> {
    let mut matches = match parse_query(query_text)? {
        Query::Boolean(b) => match_boolean(&b, corpus),
        Query::ByExample(_) => {
            let (_, pattern) = compile_by_example(query_text, corpus)?;
            match_pattern(&pattern, corpus, cap.map(|c| c + 1))
        }
    };
    let truncated = cap.is_some_and(|c| matches.len() > c);
    if let Some(c) = cap {
        matches.truncate(c);
    }
    let results = matches
        .iter()
        .map(|m| symbolic_result(m, corpus.get_sentence(m.sentence_id).expect("matched sentence exists"), mode))
        .collect();
    Ok((results, truncated))
}

fn has_keyword(sentence: &Sentence, keyword: &str) -> bool {
    let kw = keyword.to_lowercase();
    sentence.tokens.iter().any(|t| t.surface.to_lowercase() == kw)
}

/// Immutable state shared by every search session.
pub struct SearchEngine {
    pub corpus: Corpus,
    pub provider: Box<dyn EmbeddingProvider>,
    pub pca: PcaModel,
    pub index: SearchIndex,
    pub model: Option<AlignModel>,
}

impl SearchEngine {
    /// Run one session, handing each record to `sink` as soon as it is
    /// ready. Symbolic results come first (sentence order), then neural
    /// results in ascending distance, then the summary. A `false` from the
    /// sink stops the session early; the summary is then not produced.
    pub fn extractive_neural_search(
        &self,
        query_text: &str,
        config: &SessionConfig,
        sink: &mut dyn FnMut(StreamRecord) -> bool,
    ) -> Result<Option<SearchSummary>> {
        let started = Instant::now();
        config.validate()?;
        let (_, pattern) = compile_by_example(query_text, &self.corpus)?;
        let model = self.model.as_ref().ok_or(RetrievalError::ModelMissing)?;

        let mut matches = match_pattern(&pattern, &self.corpus, config.symbolic_cap);
        if matches.is_empty() {
            return Err(RetrievalError::NoSymbolicResults);
        }
        // one result per sentence: its first embedding
        let mut seen = HashSet::new();
        matches.retain(|m| seen.insert(m.sentence_id));

        let qvec = encode_pool(&matches, &self.corpus, self.provider.as_ref(), &self.pca, config.pool_cap)?;

        for m in &matches {
            let s = self.corpus.get_sentence(m.sentence_id).expect("matched sentence exists");
            if !sink(StreamRecord::Result(symbolic_result(m, s, config.capture_display_mode))) {
                return Ok(None);
            }
        }

        let reference = &matches[0];
        let ref_sentence = self.corpus.get_sentence(reference.sentence_id).expect("matched sentence exists");
        let ref_vectors = self.provider.embed_tokens(ref_sentence)?;
        let slots: Vec<String> = reference.captures.keys().cloned().collect();
        let ref_spans: Vec<Span> = reference.captures.values().copied().collect();

        let batches = neural_search(&qvec, &self.index, config.k, &seen, config.nprobe)?;
        let mut neural = 0;
        let mut filtered = 0;
        for batch in batches {
            for hit in batch {
                let s = self.corpus.get_sentence(hit.id).map_err(|_| {
                    RetrievalError::InvalidConfig(format!("index holds sentence {} missing from corpus", hit.id))
                })?;
                if let Some(kw) = &config.keyword_filter {
                    if !has_keyword(s, kw) {
                        filtered += 1;
                        continue;
                    }
                }
                let tv = self.provider.embed_tokens(s)?;
                let pred = align(model, &ref_vectors, &ref_spans, &tv, model.config.max_span_len)?;
                let captures = slots.iter().cloned().zip(pred.slots.iter().map(|a| capture(s, a.span))).collect();
                let result = ExtractionResult {
                    sentence_id: hit.id,
                    source: ResultSource::Neural,
                    distance: Some(hit.distance as f64),
                    captures,
                    collision: pred.collision,
                };
                neural += 1;
                if !sink(StreamRecord::Result(result)) {
                    return Ok(None);
                }
            }
        }
        let summary = SearchSummary {
            symbolic: matches.len(),
            neural,
            pool_size: qvec.pool_size,
            filtered,
            elapsed_ms: started.elapsed().as_millis() as u64,
        };
        sink(StreamRecord::Summary(summary.clone()));
        Ok(Some(summary))
    }

    /// Non-streamed run: every record in emission order.
    pub fn run_to_end(&self, query_text: &str, config: &SessionConfig) -> Result<Vec<StreamRecord>> {
        let mut out = Vec::new();
        self.extractive_neural_search(query_text, config, &mut |r| {
            out.push(r);
            true
        })?;
        Ok(out)
    }
}

/// Parameters for building the sentence index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub variance: f64,
    pub normalize: bool,
    /// IVF cells; exact index only when absent.
    pub ivf_cells: Option<usize>,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig { variance: 0.99, normalize: false, ivf_cells: None, kmeans_iters: 20, seed: 0 }
    }
}

/// Embed every non-empty sentence, fit PCA, and index the reduced vectors.
pub fn build_sentence_index(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    config: &IndexConfig,
) -> Result<(PcaModel, SearchIndex)> {
    let mut ids = Vec::with_capacity(corpus.len());
    let mut raw = Vec::with_capacity(corpus.len());
    for s in corpus.iter().filter(|s| !s.tokens.is_empty()) {
        ids.push(s.id);
        raw.push(provider.embed_sentence(s)?.vector);
    }
    let pca = fit_pca(&raw, config.variance)?;
    let reduced = raw
        .iter()
        .map(|v| apply_pca(&pca, v).map(|r| r.into_iter().map(|x| x as f32).collect::<Vec<f32>>()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    drop(raw);
    let exact = build_exact_with(&ids, &reduced, config.normalize)?;
    let index = match config.ivf_cells {
        Some(c) => SearchIndex::Ivf(build_ivf_from(exact, c, config.kmeans_iters, config.seed)?),
        None => SearchIndex::Exact(exact),
    };
    Ok((pca, index))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueCount {
    pub value: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCount {
    pub first: String,
    pub second: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTable {
    pub slots: (String, String),
    pub values: Vec<PairCount>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureTable {
    pub slots: BTreeMap<String, Vec<ValueCount>>,
    pub pairs: Vec<PairTable>,
}

/// Count-ranked captured values per slot and per slot pair (lowercased
/// text; count descending, then text ascending).
pub fn aggregate(results: &[ExtractionResult]) -> CaptureTable {
    let mut slots: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut pairs: BTreeMap<(String, String), BTreeMap<(String, String), usize>> = BTreeMap::new();
    for r in results {
        let caps: Vec<(&String, String)> = r.captures.iter().map(|(k, c)| (k, c.text.to_lowercase())).collect();
        for (slot, text) in &caps {
            *slots.entry((*slot).clone()).or_default().entry(text.clone()).or_default() += 1;
        }
        for (i, (s1, v1)) in caps.iter().enumerate() {
            for (s2, v2) in &caps[i + 1..] {
                *pairs
                    .entry(((*s1).clone(), (*s2).clone()))
                    .or_default()
                    .entry((v1.clone(), v2.clone()))
                    .or_default() += 1;
            }
        }
    }
    let slots = slots
        .into_iter()
        .map(|(slot, counts)| {
            let mut v: Vec<ValueCount> = counts.into_iter().map(|(value, count)| ValueCount { value, count }).collect();
            v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.value.cmp(&b.value)));
            (slot, v)
        })
        .collect();
    let pairs = pairs
        .into_iter()
        .map(|(slots, counts)| {
            let mut values: Vec<PairCount> =
                counts.into_iter().map(|((first, second), count)| PairCount { first, second, count }).collect();
            values.sort_by(|a, b| {
                b.count.cmp(&a.count).then_with(|| (&a.first, &a.second).cmp(&(&b.first, &b.second)))
            });
            PairTable { slots, values }
        })
        .collect();
    CaptureTable { slots, pairs }
}
