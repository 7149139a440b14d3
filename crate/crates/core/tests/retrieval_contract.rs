use std::collections::{BTreeMap, HashMap, HashSet};

use nes_core::align::{build_pairs, train, TrainConfig};
use nes_core::embed::{EmbeddingProvider, EmbeddingProviderConfig, HashEmbedder, PcaModel};
use nes_core::evalharness::{synth_corpus, SynthOutput, SynthSpec};
use nes_core::knn::{search_exact, SearchIndex};
use nes_core::matcher::match_pattern;
use nes_core::querylang::{compile_by_example, SyntacticPattern};
use nes_core::retrieval::{
    aggregate, build_sentence_index, encode_pool, encode_query, neural_search, IndexConfig, ResultSource,
    RetrievalError, SearchEngine, SessionConfig, StreamRecord, BATCH_SIZE,
};
use proptest::prelude::*;

struct Fixture {
    out: SynthOutput,
    engine: SearchEngine,
}

fn embedder() -> HashEmbedder {
    HashEmbedder::new(EmbeddingProviderConfig::default()).unwrap()
}

fn fixture(trained: bool) -> Fixture {
    let out = synth_corpus(&SynthSpec { relations: 4, sentences: 600, seed: 5, ..Default::default() }).unwrap();
    let (pca, index) = build_sentence_index(&out.corpus, &embedder(), &IndexConfig::default()).unwrap();
    let model = trained.then(|| {
        let mut rels: BTreeMap<String, Vec<SyntacticPattern>> = BTreeMap::new();
        for q in &out.queries {
            rels.entry(q.relation.clone()).or_default().push(compile_by_example(&q.query, &out.corpus).unwrap().1);
        }
        let (pairs, _) = build_pairs(&rels, &out.corpus, 20, &HashSet::new(), 0).unwrap();
        train(&pairs, &out.corpus, &embedder(), &TrainConfig { epochs: 3, ..Default::default() }).unwrap().0
    });
    let engine = SearchEngine { corpus: out.corpus.clone(), provider: Box::new(embedder()), pca, index, model };
    Fixture { out, engine }
}

/// Reference PCA application: components · (x − mean), written out here.
fn reduce(pca: &PcaModel, x: &[f64]) -> Vec<f64> {
    pca.components.iter().map(|c| (0..x.len()).map(|j| c[j] * (x[j] - pca.mean[j])).sum()).collect()
}

fn pattern(f: &Fixture, relation: &str, template: usize) -> (String, SyntacticPattern) {
    let q = f.out.queries.iter().find(|q| q.relation == relation && q.template == template).unwrap();
    (q.query.clone(), compile_by_example(&q.query, &f.out.corpus).unwrap().1)
}

#[test]
fn query_vector_is_pool_mean() {
    let f = fixture(false);
    let (_, p) = pattern(&f, "treat", 0);
    let matches = match_pattern(&p, &f.engine.corpus, None);
    assert!(matches.len() > 5);
    // cap 5: first five sentences in id order
    let q = encode_query(&p, &f.engine.corpus, &embedder(), &f.engine.pca, 5).unwrap();
    assert_eq!(q.pool_size, 5);
    let ids: Vec<u64> = matches.iter().take(5).map(|m| m.sentence_id).collect();
    assert_eq!(q.pool_ids, ids);
    let mut mean = vec![0.0; f.engine.pca.output_dim()];
    for id in &ids {
        let v = embedder().embed_sentence(f.engine.corpus.get_sentence(*id).unwrap()).unwrap().vector;
        for (m, x) in mean.iter_mut().zip(reduce(&f.engine.pca, &v)) {
            *m += x / 5.0;
        }
    }
    for (a, b) in q.vector.iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn pool_is_order_invariant_and_deduplicated() {
    let f = fixture(false);
    let (_, p) = pattern(&f, "cause", 1);
    let matches = match_pattern(&p, &f.engine.corpus, None);
    let a = encode_pool(&matches, &f.engine.corpus, &embedder(), &f.engine.pca, 1000).unwrap();
    let mut rev = matches.clone();
    rev.reverse();
    rev.extend(matches.iter().cloned());
    let b = encode_pool(&rev, &f.engine.corpus, &embedder(), &f.engine.pca, 10_000).unwrap();
    assert_eq!(a.pool_size, b.pool_size);
    for (x, y) in a.vector.iter().zip(&b.vector) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(matches!(
        encode_pool(&[], &f.engine.corpus, &embedder(), &f.engine.pca, 75),
        Err(RetrievalError::NoSymbolicResults)
    ));
}

#[test]
fn neural_batches_equal_exact_minus_excluded() {
    let f = fixture(false);
    let (_, p) = pattern(&f, "inhibit", 2);
    let q = encode_query(&p, &f.engine.corpus, &embedder(), &f.engine.pca, 75).unwrap();
    let qf: Vec<f32> = q.vector.iter().map(|&x| x as f32).collect();
    let exclude: HashSet<u64> = q.pool_ids.iter().copied().collect();
    for k in [1, 7, 10, 25, 10_000] {
        let batches = neural_search(&q, &f.engine.index, k, &exclude, None).unwrap();
        assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= BATCH_SIZE));
        let got: Vec<_> = batches.concat();
        let n = f.engine.index.exact().len();
        let expect: Vec<_> =
            search_exact(f.engine.index.exact(), &qf, n).unwrap().into_iter().filter(|x| !exclude.contains(&x.id)).take(k).collect();
        assert_eq!(got, expect);
    }
    let all: HashSet<u64> = f.engine.index.exact().ids().iter().copied().collect();
    assert!(neural_search(&q, &f.engine.index, 10, &all, None).unwrap().is_empty());
    let n = all.len();
    let full = neural_search(&q, &f.engine.index, n, &HashSet::new(), None).unwrap().concat();
    assert_eq!(full, search_exact(f.engine.index.exact(), &qf, n).unwrap());
}

fn results(records: &[StreamRecord]) -> Vec<nes_core::retrieval::ExtractionResult> {
    records.iter().filter_map(|r| match r {
        StreamRecord::Result(x) => Some(x.clone()),
        _ => None,
    }).collect()
}

#[test]
fn stream_contract_order_and_shape() {
    let f = fixture(true);
    let (query, p) = pattern(&f, "activate", 0);
    let symbolic_ids: Vec<u64> = {
        let mut v: Vec<u64> = match_pattern(&p, &f.engine.corpus, None).iter().map(|m| m.sentence_id).collect();
        v.dedup();
        v
    };
    let cfg = SessionConfig { k: 30, ..Default::default() };
    let records = f.engine.run_to_end(&query, &cfg).unwrap();
    let Some(StreamRecord::Summary(summary)) = records.last() else { panic!("no summary") };
    let rs = results(&records);
    assert_eq!(rs.len() + 1, records.len());
    let (sym, neu): (Vec<_>, Vec<_>) = rs.iter().partition(|r| r.source == ResultSource::Symbolic);
    assert_eq!(sym.iter().map(|r| r.sentence_id).collect::<Vec<_>>(), symbolic_ids);
    assert!(rs[..sym.len()].iter().all(|r| r.source == ResultSource::Symbolic));
    assert_eq!((summary.symbolic, summary.neural), (sym.len(), neu.len()));
    assert_eq!(neu.len(), 30);
    assert!(sym.iter().all(|r| r.distance.is_none()));
    assert!(neu.windows(2).all(|w| w[0].distance <= w[1].distance));
    let mut seen = HashSet::new();
    assert!(rs.iter().all(|r| seen.insert(r.sentence_id)));
    for r in &rs {
        let s = f.engine.corpus.get_sentence(r.sentence_id).unwrap();
        assert_eq!(r.captures.keys().map(String::as_str).collect::<Vec<_>>(), vec!["a1", "a2"]);
        for c in r.captures.values() {
            assert!(c.start < c.end && c.end <= s.tokens.len());
            assert_eq!(c.text, s.span_text(c.start, c.end));
        }
    }
    // deterministic replay, timing aside
    let again = f.engine.run_to_end(&query, &cfg).unwrap();
    assert_eq!(results(&again), rs);
}

#[test]
fn keyword_filter_drops_neural_sentences_without_the_word() {
    let f = fixture(true);
    let (query, _) = pattern(&f, "cause", 0);
    let base = SessionConfig { k: 40, ..Default::default() };
    let plain = results(&f.engine.run_to_end(&query, &base).unwrap());
    let neural_plain = plain.iter().filter(|r| r.source == ResultSource::Neural).count();

    let covid = SessionConfig { keyword_filter: Some("COVID-19".into()), ..base.clone() };
    let records = f.engine.run_to_end(&query, &covid).unwrap();
    let Some(StreamRecord::Summary(s)) = records.last() else { panic!() };
    assert_eq!((s.neural, s.filtered), (0, neural_plain));

    // a word some neural results carry
    let word = "recently";
    let with = SessionConfig { keyword_filter: Some(word.into()), ..base };
    let records = f.engine.run_to_end(&query, &with).unwrap();
    let kept: Vec<_> = results(&records).into_iter().filter(|r| r.source == ResultSource::Neural).collect();
    let expect: Vec<u64> = plain
        .iter()
        .filter(|r| r.source == ResultSource::Neural)
        .filter(|r| f.engine.corpus.get_sentence(r.sentence_id).unwrap().tokens.iter().any(|t| t.surface == word))
        .map(|r| r.sentence_id)
        .collect();
    assert!(!expect.is_empty());
    assert_eq!(kept.iter().map(|r| r.sentence_id).collect::<Vec<_>>(), expect);
}

#[test]
fn session_errors() {
    let f = fixture(false);
    let (query, _) = pattern(&f, "cause", 0);
    let err = f.engine.run_to_end(&query, &SessionConfig::default()).unwrap_err();
    assert_eq!(err.code(), "ModelMissing");
    let f = fixture(true);
    let err = f.engine.run_to_end("a1:zzz $nothing a2:qqq", &SessionConfig::default()).unwrap_err();
    assert_eq!(err.code(), "NoParseAvailable");
    let other = nes_core::querylang::Query::ByExample(
        match nes_core::querylang::parse_query(&query).unwrap() {
            nes_core::querylang::Query::ByExample(mut q) => {
                // anchor a word that never occurs in the corpus
                let parse = q.example_parse.as_mut().unwrap();
                let i = q.tokens.iter().position(|t| t.role == nes_core::querylang::TokenRole::Anchor).unwrap();
                q.tokens[i].surface = "zzzcauses".into();
                parse.tokens[i].surface = "zzzcauses".into();
                q
            }
            _ => unreachable!(),
        },
    );
    let err = f.engine.run_to_end(&other.render(), &SessionConfig::default()).unwrap_err();
    assert_eq!(err.code(), "NoSymbolicResults");
    assert_eq!(f.engine.run_to_end(&query, &SessionConfig { k: 0, ..Default::default() }).unwrap_err().code(), "InvalidConfig");
    assert_eq!(f.engine.run_to_end("a1:x a1:y $z", &SessionConfig::default()).unwrap_err().code(), "DuplicateCaptureName");
}

#[test]
fn sink_can_stop_the_session() {
    let f = fixture(true);
    let (query, _) = pattern(&f, "treat", 2);
    let mut got = 0;
    let out = f.engine.extractive_neural_search(&query, &SessionConfig { k: 50, ..Default::default() }, &mut |_| {
        got += 1;
        got < 3
    });
    assert!(out.unwrap().is_none());
    assert_eq!(got, 3);
}

#[test]
fn index_round_trip_through_engine_files() {
    let f = fixture(false);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.nesi");
    f.engine.index.save(&path).unwrap();
    assert_eq!(SearchIndex::load(&path).unwrap(), f.engine.index);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregate_equals_recount(values in proptest::collection::vec((0usize..3, "[a-cA-C]{1,2}"), 0..60)) {
        use nes_core::retrieval::{CaptureSpan, ExtractionResult};
        // group into results of up to three slots
        let mut rs: Vec<ExtractionResult> = Vec::new();
        for chunk in values.chunks(3) {
            let mut captures = BTreeMap::new();
            for (slot, text) in chunk {
                captures.insert(format!("s{slot}"), CaptureSpan { start: 0, end: 1, text: text.clone() });
            }
            rs.push(ExtractionResult { sentence_id: 0, source: ResultSource::Neural, distance: Some(0.0), captures, collision: false });
        }
        let table = aggregate(&rs);
        let mut recount: HashMap<(String, String), usize> = HashMap::new();
        let mut carriers: HashMap<String, usize> = HashMap::new();
        for r in &rs {
            for (k, c) in &r.captures {
                *recount.entry((k.clone(), c.text.to_lowercase())).or_default() += 1;
                *carriers.entry(k.clone()).or_default() += 1;
            }
        }
        let mut flat = HashMap::new();
        for (slot, rows) in &table.slots {
            prop_assert!(rows.windows(2).all(|w| (std::cmp::Reverse(w[0].count), &w[0].value) < (std::cmp::Reverse(w[1].count), &w[1].value)));
            prop_assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), carriers[slot]);
            for r in rows {
                prop_assert!(r.count >= 1);
                flat.insert((slot.clone(), r.value.clone()), r.count);
            }
        }
        prop_assert_eq!(flat, recount);
        for pt in &table.pairs {
            let both = rs.iter().filter(|r| r.captures.contains_key(&pt.slots.0) && r.captures.contains_key(&pt.slots.1)).count();
            prop_assert_eq!(pt.values.iter().map(|v| v.count).sum::<usize>(), both);
        }
    }
}
