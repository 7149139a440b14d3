use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use nes_core::corpus::Corpus;
use nes_core::evalharness::{read_ndjson, RelationQuery};
use nes_core::matcher::ExpandMode;
use nes_core::retrieval::{symbolic_search, ExtractionResult, StreamRecord};

fn nes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nes")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = nes(args);
    assert!(out.status.success(), "nes {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Last stderr line: where the error code lands.
fn error_line(out: &Output) -> String {
    stderr(out).lines().last().unwrap_or_default().to_string()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn p(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_string()
    }
}

/// synth → ingest → build-index → train-align, once for the whole file.
fn workspace() -> &'static Workspace {
    static W: OnceLock<Workspace> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let w = Workspace { root: dir.path().to_path_buf(), _dir: dir };
        ok(&["synth", "--out", &w.p("s"), "--seed", "7", "--relations", "4", "--sentences", "600"]);
        ok(&["ingest", "--input", &w.p("s/corpus.conllu"), "--out", &w.p("c.nesc")]);
        ok(&["build-index", "--corpus", &w.p("c.nesc"), "--out", &w.p("idx")]);
        ok(&[
            "train-align", "--corpus", &w.p("c.nesc"), "--index", &w.p("idx"), "--queries", &w.p("s/queries.jsonl"),
            "--out", &w.p("m.nesa"), "--dev-relations", "activate", "--dev-pairs", &w.p("dev.jsonl"),
            "--per-relation", "20", "--epochs", "3",
        ]);
        w
    })
}

fn queries(w: &Workspace) -> Vec<RelationQuery> {
    read_ndjson(Path::new(&w.p("s/queries.jsonl"))).unwrap()
}

#[test]
fn every_run_prints_config_and_seed() {
    let w = workspace();
    let out = nes(&["synth", "--out", &w.p("s2"), "--seed", "11", "--sentences", "20", "--relations", "2"]);
    assert!(out.status.success());
    let first = stderr(&out).lines().find(|l| l.starts_with("config ")).unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(first.strip_prefix("config ").unwrap()).unwrap();
    assert_eq!(v["seed"], 11);
    assert_eq!(v["command"], "synth");
    assert_eq!(v["config"]["sentences"], 20);
    assert_eq!(v["config"]["templates"], 3);
}

#[test]
fn missing_corpus_exits_2() {
    let out = nes(&["search", "--corpus", "/nonexistent/c.nesc", "a1:x $y"]);
    assert_eq!(out.status.code(), Some(2));
    let line = error_line(&out);
    assert!(line.starts_with("UnknownCorpus: "), "{line}");
    let out = nes(&["ingest", "--input", "/nonexistent/c.conllu", "--out", "/tmp/x.nesc"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("UnknownCorpus"));
}

#[test]
fn search_prints_matches_in_id_order() {
    let w = workspace();
    let q = &queries(w)[0];
    let stdout = ok(&["search", "--corpus", &w.p("c.nesc"), &q.query]);
    let got: Vec<ExtractionResult> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let corpus = Corpus::load(Path::new(&w.p("c.nesc"))).unwrap();
    let (want, _) = symbolic_search(&corpus, &q.query, ExpandMode::Token, None).unwrap();
    assert_eq!(got, want);
    assert!(!got.is_empty());
    assert!(got.windows(2).all(|p| p[0].sentence_id < p[1].sentence_id));
    // raw CoNLL-U is accepted as the corpus too
    assert_eq!(ok(&["search", "--corpus", &w.p("s/corpus.conllu"), &q.query]), stdout);
    let limited = ok(&["search", "--corpus", &w.p("c.nesc"), "--limit", "2", &q.query]);
    assert_eq!(limited.lines().count(), 2);
}

#[test]
fn query_errors_are_single_coded_lines() {
    let w = workspace();
    let out = nes(&["search", "--corpus", &w.p("c.nesc"), "a1:x a1:y $z"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).starts_with("DuplicateCaptureName: "));
    let out = nes(&["search", "--corpus", &w.p("c.nesc"), "$nothere a1:zzz"]);
    assert!(error_line(&out).starts_with("NoParseAvailable"));
    let q = &queries(w)[0].query;
    let out = nes(&["neural-search", "--corpus", &w.p("c.nesc"), "--index", &w.p("idx"), q]);
    assert!(error_line(&out).starts_with("ModelMissing"), "{}", stderr(&out));
    let out = nes(&["neural-search", "--corpus", &w.p("c.nesc"), "--index", &w.p("idx"), "--model", &w.p("m.nesa"), "--k", "0", q]);
    assert!(error_line(&out).starts_with("InvalidConfig"));
}

#[test]
fn unknown_flags_rejected() {
    let w = workspace();
    let out = nes(&["search", "--corpus", &w.p("c.nesc"), "--frobnicate", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = w.root.join("bad.json");
    std::fs::write(&cfg, r#"{"frobnicate": 1}"#).unwrap();
    let out = nes(&["search", "--config", cfg.to_str().unwrap(), "--corpus", &w.p("c.nesc"), "x"]);
    assert!(!out.status.success());
}

fn neural_records(stdout: &str) -> Vec<StreamRecord> {
    stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn config_file_values_yield_to_flags() {
    let w = workspace();
    let q = &queries(w)[1].query;
    let cfg = w.root.join("session.json");
    std::fs::write(&cfg, r#"{"k": 4, "pool_cap": 10, "mode": "subtree"}"#).unwrap();
    let base = ["neural-search", "--corpus", &w.p("c.nesc"), "--index", &w.p("idx"), "--model", &w.p("m.nesa")];
    let count_neural = |recs: &[StreamRecord]| match recs.last() {
        Some(StreamRecord::Summary(s)) => (s.neural, s.pool_size),
        _ => panic!("no summary"),
    };
    let mut args: Vec<&str> = base.to_vec();
    args.extend(["--config", cfg.to_str().unwrap(), q]);
    let from_file = neural_records(&ok(&args));
    assert_eq!(count_neural(&from_file).0, 4);
    assert!(count_neural(&from_file).1 <= 10);
    let mut args: Vec<&str> = base.to_vec();
    args.extend(["--config", cfg.to_str().unwrap(), "--k", "7", q]);
    let overridden = neural_records(&ok(&args));
    assert_eq!(count_neural(&overridden).0, 7);
}

#[test]
fn neural_search_stream_is_ordered_and_reproducible() {
    let w = workspace();
    let q = &queries(w)[2].query;
    let args = ["neural-search", "--corpus", &w.p("c.nesc"), "--index", &w.p("idx"), "--model", &w.p("m.nesa"), "--k", "12", q];
    let recs = neural_records(&ok(&args));
    let results: Vec<_> = recs
        .iter()
        .filter_map(|r| match r {
            StreamRecord::Result(x) => Some(x),
            _ => None,
        })
        .collect();
    let split = results.iter().position(|r| r.distance.is_some()).unwrap();
    assert!(results[..split].windows(2).all(|p| p[0].sentence_id < p[1].sentence_id));
    assert!(results[split..].windows(2).all(|p| p[0].distance <= p[1].distance));
    assert_eq!(results.len() - split, 12);
    // byte-identical apart from the timing field
    let strip = |s: String| s.lines().filter(|l| !l.contains("\"summary\"")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(ok(&args)), strip(ok(&args)));
}

#[test]
fn eval_subcommands() {
    let w = workspace();
    let summary = w.root.join("align.json");
    let stdout = ok(&[
        "eval", "alignment", "--pairs", &w.p("dev.jsonl"), "--corpus", &w.p("c.nesc"), "--index", &w.p("idx"),
        "--model", &w.p("m.nesa"), "--records-out", &w.p("records.jsonl"), "--summary", summary.to_str().unwrap(),
    ]);
    assert!(stdout.starts_with("pairs\targs\tper_arg\tboth_args\n20\t40\t"), "{stdout}");
    let replay = ok(&["eval", "alignment", "--records", &w.p("records.jsonl")]);
    assert_eq!(replay, stdout);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(s["pairs"], 20);

    let q = queries(w).into_iter().find(|q| q.relation == "cause" && q.template == 0).unwrap();
    let stdout = ok(&[
        "eval", "compare", "--relation", "cause", "--labels", &w.p("s/labels.jsonl"), "--corpus", &w.p("c.nesc"),
        "--index", &w.p("idx"), "--model", &w.p("m.nesa"), "--k", "20", &q.query,
    ]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3, "{stdout}");
    assert!(lines[2].starts_with("neural\t20\t"));

    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let out = nes(&[
        "eval", "relevancy", "--results", fixtures.join("relevancy_results.jsonl").to_str().unwrap(), "--labels",
        fixtures.join("relevancy_labels.jsonl").to_str().unwrap(), "--top", "10-1",
    ]);
    assert!(error_line(&out).starts_with("InvalidConfig"));
}

#[test]
fn external_vectors_need_a_file() {
    let w = workspace();
    let out = nes(&["build-index", "--corpus", &w.p("c.nesc"), "--out", &w.p("ext"), "--provider", "external"]);
    assert!(!out.status.success());
    assert!(error_line(&out).starts_with("InvalidConfig"), "{}", stderr(&out));
}
