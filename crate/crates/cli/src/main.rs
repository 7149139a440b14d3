//! `nes`: batch entry points over the search engine.
//!
//! Artifacts on disk: a corpus snapshot (`.nesc`, or raw CoNLL-U), an index
//! directory holding `index.nesi`, `pca.nesp` and `embedder.json`, and an
//! alignment model (`.nesa`). Every run prints its resolved configuration as
//! one JSON line on stderr; results go to stdout or the named files.

mod config;
mod error;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nes_core::align::{build_pairs, train, AlignModel, TrainConfig, TrainingPair};
use nes_core::corpus::{ingest_conllu, to_conllu, Corpus, IngestOptions};
use nes_core::embed::{provider_from_config, EmbeddingProviderConfig, PcaModel, ProviderKind};
use nes_core::evalharness::{
    alignment_eval, compare_symbolic_neural, predict_alignments, read_ndjson, relevancy_eval, synth_corpus,
    write_ndjson, AlignmentRecord, LabelSet, RankBuckets, RankedResult, RelationQuery, SynthSpec,
};
use nes_core::knn::SearchIndex;
use nes_core::matcher::ExpandMode;
use nes_core::querylang::{compile_by_example, SyntacticPattern};
use nes_core::retrieval::{
    build_sentence_index, symbolic_search, IndexConfig, SearchEngine, SessionConfig, StreamRecord, DEFAULT_POOL_CAP,
};
use serde::Serialize;

use crate::error::CliError;

pub const INDEX_FILE: &str = "index.nesi";
pub const PCA_FILE: &str = "pca.nesp";
pub const EMBEDDER_FILE: &str = "embedder.json";

#[derive(Parser, Debug)]
#[command(name = "nes", version, about = "Neural extractive search", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic relation corpus.
    Synth(SynthArgs),
    /// Parse CoNLL-U into a corpus snapshot.
    Ingest(IngestArgs),
    /// Embed every sentence, fit PCA, write the vector index.
    BuildIndex(BuildIndexArgs),
    /// Train the span-alignment model from relation queries.
    TrainAlign(TrainAlignArgs),
    /// Symbolic search; one JSON result per line.
    Search(SearchArgs),
    /// Symbolic then neural results, streamed as NDJSON.
    NeuralSearch(NeuralSearchArgs),
    /// Score relevancy labels, alignment predictions, or both tiers of a query.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Per-relation precision over labeled results (all / top / tail ranks).
    Relevancy(RelevancyArgs),
    /// Per-argument and both-arguments alignment accuracy.
    Alignment(AlignmentArgs),
    /// Result counts, unique captures and precision, symbolic vs neural.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    relations: usize,
    #[arg(long, default_value_t = 3)]
    templates: usize,
    #[arg(long, default_value_t = 5000)]
    sentences: usize,
    #[arg(long, default_value_t = 200)]
    arg_vocab: usize,
    #[arg(long, default_value_t = 3)]
    topic_vocab: usize,
    #[arg(long, value_delimiter = ',')]
    template_weights: Option<Vec<u32>>,
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "")]
    default_doc_id: String,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ProviderArg {
    Hash,
    External,
}

#[derive(Args, Debug, Serialize)]
struct BuildIndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ProviderArg::Hash)]
    provider: ProviderArg,
    /// Precomputed vectors for the external provider.
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    d_raw: usize,
    #[arg(long, default_value_t = 2)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
    #[arg(long, default_value_t = 0.99)]
    variance: f64,
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    ivf_cells: Option<usize>,
    #[arg(long, default_value_t = 20)]
    kmeans_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct TrainAlignArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Index directory; only its embedder config is read.
    #[arg(long)]
    index: PathBuf,
    /// Relation queries, one `{"relation", "query"}` object per line.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Precomputed vectors when the index uses the external provider.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Relations held out of training; their pairs go to `--dev-pairs`.
    #[arg(long, value_delimiter = ',')]
    dev_relations: Vec<String>,
    #[arg(long)]
    dev_pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    per_relation: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 9)]
    max_span_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Token,
    Subtree,
}

impl From<ModeArg> for ExpandMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Token => ExpandMode::Token,
            ModeArg::Subtree => ExpandMode::Subtree,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SearchArgs {
    query: String,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Token)]
    mode: ModeArg,
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct EngineArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    vectors: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SessionArgs {
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_POOL_CAP)]
    pool_cap: usize,
    #[arg(long)]
    keyword: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::Token)]
    mode: ModeArg,
    #[arg(long)]
    nprobe: Option<usize>,
    #[arg(long)]
    symbolic_cap: Option<usize>,
}

impl SessionArgs {
    fn config(&self) -> SessionConfig {
        SessionConfig {
            k: self.k,
            pool_cap: self.pool_cap,
            keyword_filter: self.keyword.clone(),
            capture_display_mode: self.mode.into(),
            nprobe: self.nprobe,
            symbolic_cap: self.symbolic_cap,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct NeuralSearchArgs {
    query: String,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    session: SessionArgs,
}

#[derive(Args, Debug, Serialize)]
struct RelevancyArgs {
    /// Ranked results, one `{"relation", "rank", "sid"}` object per line.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "1-10")]
    top: String,
    #[arg(long, default_value = "91-100")]
    tail: String,
    /// Machine-readable report.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct AlignmentArgs {
    /// Stored predictions to score; otherwise `--pairs` are aligned anew.
    #[arg(long, conflicts_with = "pairs")]
    records: Option<PathBuf>,
    #[arg(long, requires_all = ["corpus", "index", "model"])]
    pairs: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    records_out: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CompareArgs {
    query: String,
    #[arg(long)]
    relation: String,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ServeArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, default_value_t = nes_service::DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Name clients may give as `corpus`; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = nes_service::DEFAULT_SEARCH_CAP)]
    search_cap: usize,
    #[arg(long, default_value_t = nes_service::DEFAULT_SESSION_TTL.as_secs())]
    session_ttl_secs: u64,
}

fn announce<T: Serialize>(command: &str, args: &T, seed: Option<u64>) {
    let line = serde_json::json!({ "command": command, "config": args, "seed": seed });
    eprintln!("config {line}");
}

fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    if !path.is_file() {
        return Err(CliError::new("UnknownCorpus", format!("no corpus at {}", path.display())));
    }
    if path.extension().is_some_and(|e| e == "conllu") {
        let reader = std::io::BufReader::new(File::open(path)?);
        Ok(ingest_conllu(reader, &IngestOptions::default())?)
    } else {
        Ok(Corpus::load(path)?)
    }
}

fn load_embedder_config(index_dir: &Path) -> Result<EmbeddingProviderConfig, CliError> {
    let path = index_dir.join(EMBEDDER_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::new("IoError", format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_engine(args: &EngineArgs) -> Result<SearchEngine, CliError> {
    let corpus = load_corpus(&args.corpus)?;
    let provider = provider_from_config(&load_embedder_config(&args.index)?, args.vectors.as_deref())?;
    let pca = PcaModel::read_from(std::io::BufReader::new(File::open(args.index.join(PCA_FILE))?))?;
    let index = SearchIndex::load(&args.index.join(INDEX_FILE))?;
    let model = args.model.as_deref().map(AlignModel::load).transpose()?;
    Ok(SearchEngine { corpus, provider, pca, index, model })
}

fn parse_bucket(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::config(format!("rank bucket {text:?}: expected LO-HI"));
    let (lo, hi) = text.split_once('-').ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    announce("synth", a, Some(a.seed));
    let spec = SynthSpec {
        relations: a.relations,
        templates: a.templates,
        arg_vocab: a.arg_vocab,
        topic_vocab: a.topic_vocab,
        sentences: a.sentences,
        seed: a.seed,
        template_weights: a.template_weights.clone(),
    };
    let out = synth_corpus(&spec)?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("corpus.conllu"), to_conllu(&out.corpus))?;
    write_ndjson(&a.out.join("gold.jsonl"), &out.gold)?;
    write_ndjson(&a.out.join("labels.jsonl"), &out.labels)?;
    write_ndjson(&a.out.join("queries.jsonl"), &out.queries)?;
    write_json(&a.out.join("spec.json"), &spec)?;
    println!("{}", serde_json::json!({ "sentences": out.corpus.len(), "queries": out.queries.len(), "out": a.out }));
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<(), CliError> {
    announce("ingest", a, None);
    if !a.input.is_file() {
        return Err(CliError::new("UnknownCorpus", format!("no CoNLL-U file at {}", a.input.display())));
    }
    let reader = std::io::BufReader::new(File::open(&a.input)?);
    let corpus = ingest_conllu(reader, &IngestOptions { default_doc_id: a.default_doc_id.clone() })?;
    corpus.save(&a.out)?;
    println!("{}", serde_json::json!({ "sentences": corpus.len(), "out": a.out }));
    Ok(())
}

fn build_index(a: &BuildIndexArgs) -> Result<(), CliError> {
    announce("build-index", a, Some(a.seed));
    let corpus = load_corpus(&a.corpus)?;
    let embed = EmbeddingProviderConfig {
        kind: match a.provider {
            ProviderArg::Hash => ProviderKind::Hash,
            ProviderArg::External => ProviderKind::External,
        },
        d_raw: a.d_raw,
        window: a.window,
        seed: a.embed_seed,
    };
    let provider = provider_from_config(&embed, a.vectors.as_deref())?;
    let cfg = IndexConfig {
        variance: a.variance,
        normalize: a.normalize,
        ivf_cells: a.ivf_cells,
        kmeans_iters: a.kmeans_iters,
        seed: a.seed,
    };
    let (pca, index) = build_sentence_index(&corpus, provider.as_ref(), &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    index.save(&a.out.join(INDEX_FILE))?;
    let mut w = BufWriter::new(File::create(a.out.join(PCA_FILE))?);
    pca.write_to(&mut w)?;
    w.flush()?;
    write_json(&a.out.join(EMBEDDER_FILE), &embed)?;
    println!(
        "{}",
        serde_json::json!({ "sentences": corpus.len(), "input_dim": pca.input_dim(), "reduced_dim": pca.output_dim(), "out": a.out })
    );
    Ok(())
}

fn relation_patterns(
    queries: &[RelationQuery],
    corpus: &Corpus,
) -> Result<BTreeMap<String, Vec<SyntacticPattern>>, CliError> {
    let mut rels: BTreeMap<String, Vec<SyntacticPattern>> = BTreeMap::new();
    for q in queries {
        let (_, pattern) = compile_by_example(&q.query, corpus)?;
        rels.entry(q.relation.clone()).or_default().push(pattern);
    }
    Ok(rels)
}

fn train_align(a: &TrainAlignArgs) -> Result<(), CliError> {
    announce("train-align", a, Some(a.seed));
    let corpus = load_corpus(&a.corpus)?;
    let provider = provider_from_config(&load_embedder_config(&a.index)?, a.vectors.as_deref())?;
    let queries: Vec<RelationQuery> = read_ndjson(&a.queries)?;
    let rels = relation_patterns(&queries, &corpus)?;
    let dev: HashSet<String> = a.dev_relations.iter().cloned().collect();
    if let Some(r) = dev.iter().find(|r| !rels.contains_key(*r)) {
        return Err(CliError::config(format!("dev relation {r:?} has no queries")));
    }
    let (train_pairs, dev_pairs) = build_pairs(&rels, &corpus, a.per_relation, &dev, a.seed)?;
    let cfg = TrainConfig {
        margin: a.margin,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        max_span_len: a.max_span_len,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (model, log) = train(&train_pairs, &corpus, provider.as_ref(), &cfg)?;
    model.save(&a.out)?;
    if let Some(p) = &a.dev_pairs {
        write_ndjson(p, &dev_pairs)?;
    }
    println!(
        "{}",
        serde_json::json!({
            "train_pairs": train_pairs.len(),
            "dev_pairs": dev_pairs.len(),
            "first_epoch_loss": log.epoch_losses.first(),
            "last_epoch_loss": log.epoch_losses.last(),
            "out": a.out,
        })
    );
    Ok(())
}

fn search(a: &SearchArgs) -> Result<(), CliError> {
    announce("search", a, None);
    let corpus = load_corpus(&a.corpus)?;
    let (results, _) = symbolic_search(&corpus, &a.query, a.mode.into(), a.limit)?;
    let mut out = BufWriter::new(std::io::stdout().lock());
    for r in &results {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn neural_search(a: &NeuralSearchArgs) -> Result<(), CliError> {
    announce("neural-search", a, None);
    let engine = load_engine(&a.engine)?;
    let stdout = std::io::stdout();
    let mut write_failed = None;
    engine.extractive_neural_search(&a.query, &a.session.config(), &mut |record: StreamRecord| {
        let mut out = stdout.lock();
        let res = serde_json::to_writer(&mut out, &record)
            .map_err(std::io::Error::from)
            .and_then(|_| out.write_all(b"\n"))
            .and_then(|_| out.flush());
        match res {
            Ok(()) => true,
            Err(e) => {
                write_failed = Some(e);
                false
            }
        }
    })?;
    match write_failed {
        // a closed pipe just means the reader had enough
        Some(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn eval_relevancy(a: &RelevancyArgs) -> Result<(), CliError> {
    announce("eval relevancy", a, None);
    let results: Vec<RankedResult> = read_ndjson(&a.results)?;
    let labels = LabelSet::load(&a.labels)?;
    let buckets = RankBuckets { top: parse_bucket(&a.top)?, tail: parse_bucket(&a.tail)? };
    let report = relevancy_eval(&results, &labels, buckets)?;
    print!("{}", report.render());
    if let Some(p) = &a.summary {
        write_json(p, &report)?;
    }
    Ok(())
}

fn eval_alignment(a: &AlignmentArgs) -> Result<(), CliError> {
    announce("eval alignment", a, None);
    let records: Vec<AlignmentRecord> = match (&a.records, &a.pairs) {
        (Some(path), _) => read_ndjson(path)?,
        (None, Some(pairs_path)) => {
            let (Some(corpus), Some(index), Some(model)) = (&a.corpus, &a.index, &a.model) else {
                return Err(CliError::config("--pairs needs --corpus, --index and --model".into()));
            };
            let corpus = load_corpus(corpus)?;
            let provider = provider_from_config(&load_embedder_config(index)?, a.vectors.as_deref())?;
            let model = AlignModel::load(model)?;
            let pairs: Vec<TrainingPair> = read_ndjson(pairs_path)?;
            predict_alignments(&model, &pairs, &corpus, provider.as_ref())?
        }
        (None, None) => return Err(CliError::config("give --records or --pairs".into())),
    };
    if let Some(p) = &a.records_out {
        write_ndjson(p, &records)?;
    }
    let report = alignment_eval(&records)?;
    print!("{}", report.render());
    if let Some(p) = &a.summary {
        write_json(p, &report)?;
    }
    Ok(())
}

fn eval_compare(a: &CompareArgs) -> Result<(), CliError> {
    announce("eval compare", a, None);
    let engine = load_engine(&a.engine)?;
    let labels = LabelSet::load(&a.labels)?;
    let report = compare_symbolic_neural(&engine, &a.query, &a.relation, &a.session.config(), &labels)?;
    print!("{}", report.render());
    if let Some(p) = &a.summary {
        write_json(p, &report)?;
    }
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<(), CliError> {
    announce("serve", a, None);
    let engine = load_engine(&a.engine)?;
    let name = a
        .name
        .clone()
        .or_else(|| a.engine.corpus.file_stem().map(|s| s.to_string_lossy().into_owned()));
    let state = nes_service::AppState::new(
        Arc::new(engine),
        nes_service::ServiceConfig {
            corpus_name: name,
            search_cap: a.search_cap,
            session_ttl: std::time::Duration::from_secs(a.session_ttl_secs),
        },
    );
    let addr: std::net::SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::config(format!("listen address: {e}")))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(nes_service::serve(addr, state))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::BuildIndex(a) => build_index(a),
        Command::TrainAlign(a) => train_align(a),
        Command::Search(a) => search(a),
        Command::NeuralSearch(a) => neural_search(a),
        Command::Eval(EvalCommand::Relevancy(a)) => eval_relevancy(a),
        Command::Eval(EvalCommand::Alignment(a)) => eval_alignment(a),
        Command::Eval(EvalCommand::Compare(a)) => eval_compare(a),
        Command::Serve(a) => serve(a),
    }
}

fn main() -> ExitCode {
    let filter = tracing_subscriber::EnvFilter::try_from_env("NES_LOG_LEVEL")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
