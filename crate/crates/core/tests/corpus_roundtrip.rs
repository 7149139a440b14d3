use nes_core::corpus::{ingest_conllu, scan_ids, to_conllu, Corpus, IngestOptions, LexKey};
use nes_core::evalharness::{synth_corpus, SynthSpec};

fn synth_1000() -> Corpus {
    synth_corpus(&SynthSpec { sentences: 1000, seed: 42, ..Default::default() }).unwrap().corpus
}

#[test]
fn synthetic_file_reingests_identically() {
    let corpus = synth_1000();
    let text = to_conllu(&corpus);
    let back = ingest_conllu(text.as_bytes(), &IngestOptions::default()).unwrap();
    assert_eq!(back.len(), 1000);
    assert_eq!(back, corpus);
    // serialization is a fixed point
    assert_eq!(to_conllu(&back), text);
}

#[test]
fn snapshot_round_trip() {
    let corpus = synth_1000();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.nesc");
    corpus.save(&path).unwrap();
    let back = Corpus::load(&path).unwrap();
    assert_eq!(back, corpus);
    let a = std::fs::read(&path).unwrap();
    back.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), a);
}

#[test]
fn truncated_snapshot_is_rejected() {
    let corpus = synth_1000();
    let mut buf = Vec::new();
    corpus.write_snapshot(&mut buf).unwrap();
    for cut in [3, 10, buf.len() / 2, buf.len() - 1] {
        assert!(Corpus::read_snapshot(&buf[..cut]).is_err(), "cut at {cut}");
    }
}

#[test]
fn lexicon_lookup_equals_full_scan() {
    let corpus = synth_1000();
    let mut words: Vec<String> = corpus.sentences()[..50].iter().flat_map(|s| s.tokens.iter().map(|t| t.surface.clone())).collect();
    words.sort();
    words.dedup();
    words.push("absent-word".into());
    for w in &words {
        assert_eq!(corpus.candidate_ids(LexKey::Word(w)), scan_ids(&corpus, LexKey::Word(w)), "word {w}");
        assert_eq!(corpus.candidate_ids(LexKey::Lemma(w)), scan_ids(&corpus, LexKey::Lemma(w)), "lemma {w}");
        let upper = w.to_uppercase();
        assert_eq!(corpus.candidate_ids(LexKey::Word(&upper)), scan_ids(&corpus, LexKey::Word(&upper)));
    }
    for label in ["VIRUS", "DISEASE", "CHEMICAL", "NOPE"] {
        assert_eq!(corpus.candidate_ids(LexKey::Entity(label)), scan_ids(&corpus, LexKey::Entity(label)));
    }
}
