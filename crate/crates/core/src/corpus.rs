//! Dependency-parsed, entity-annotated sentences and the lexicon indexes
//! used to prefilter candidate sentences.
//!
//! Corpora arrive as CoNLL-U. Entity annotations ride the MISC column as
//! `Entity=LABEL` (begin) and `Entity=I-LABEL` (continuation). A corpus can
//! be persisted to a single `NESC1` snapshot file; lexicon indexes are not
//! stored and get rebuilt on load.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SNAPSHOT_MAGIC: &[u8; 5] = b"NESC1";
pub const SNAPSHOT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("MalformedLine: line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("CyclicParse: sentence {sentence}: {reason}")]
    CyclicParse { sentence: usize, reason: String },
    #[error("OverlappingEntities: sentence {sentence}")]
    OverlappingEntities { sentence: usize },
    #[error("UnknownId: {0}")]
    UnknownId(u64),
    #[error("DuplicateId: {0}")]
    DuplicateId(u64),
    #[error("FormatError: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    pub fn code(&self) -> &'static str {
        match self {
            CorpusError::MalformedLine { .. } => "MalformedLine",
            CorpusError::CyclicParse { .. } => "CyclicParse",
            CorpusError::OverlappingEntities { .. } => "OverlappingEntities",
            CorpusError::UnknownId(_) => "UnknownId",
            CorpusError::DuplicateId(_) => "DuplicateId",
            CorpusError::Format(_) => "FormatError",
            CorpusError::Io(_) => "IoError",
        }
    }
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub lemma: String,
    pub pos: String,
    /// Index of the syntactic head; `None` for the root.
    pub head: Option<usize>,
    pub deprel: String,
}

impl Token {
    pub fn new(surface: &str, lemma: &str, pos: &str, head: Option<usize>, deprel: &str) -> Self {
        Token {
            surface: surface.to_string(),
            lemma: lemma.to_string(),
            pos: pos.to_string(),
            head,
            deprel: deprel.to_string(),
        }
    }
}

/// Half-open token range `[start, end)` carrying an entity type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl EntitySpan {
    pub fn contains(&self, idx: usize) -> bool {
        self.start <= idx && idx < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: u64,
    pub tokens: Vec<Token>,
    pub entities: Vec<EntitySpan>,
    pub doc_id: String,
    pub text: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn root(&self) -> Option<usize> {
        self.tokens.iter().position(|t| t.head.is_none())
    }

    /// Token indices whose head is `idx`, ascending.
    pub fn children(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.head == Some(idx))
            .map(|(i, _)| i)
    }

    pub fn entity_at(&self, idx: usize) -> Option<&EntitySpan> {
        self.entities.iter().find(|e| e.contains(idx))
    }

    /// Surface text of tokens `[start, end)` joined by single spaces.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        self.tokens[start..end]
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Check the head links and entity spans. `index` is used only for
    /// error reporting.
    pub fn validate(&self, index: usize) -> Result<()> {
        let n = self.tokens.len();
        let cyclic = |reason: String| CorpusError::CyclicParse { sentence: index, reason };
        if n == 0 {
            return Err(cyclic("empty sentence".into()));
        }
        let mut roots = 0;
        for (i, tok) in self.tokens.iter().enumerate() {
            match tok.head {
                None => roots += 1,
                Some(h) if h == i => return Err(cyclic(format!("token {i} heads itself"))),
                Some(h) if h >= n => return Err(cyclic(format!("token {i} head {h} out of range"))),
                Some(_) => {}
            }
            if tok.surface.is_empty() || tok.lemma.is_empty() {
                return Err(cyclic(format!("token {i} has empty surface or lemma")));
            }
        }
        if roots != 1 {
            return Err(cyclic(format!("{roots} root tokens")));
        }
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(h) = self.tokens[cur].head {
                cur = h;
                steps += 1;
                if steps > n {
                    return Err(cyclic(format!("cycle through token {start}")));
                }
            }
        }
        let mut spans: Vec<&EntitySpan> = self.entities.iter().collect();
        spans.sort_by_key(|e| (e.start, e.end));
        for e in &spans {
            if e.start >= e.end || e.end > n {
                return Err(CorpusError::OverlappingEntities { sentence: index });
            }
        }
        for w in spans.windows(2) {
            if w[1].start < w[0].end {
                return Err(CorpusError::OverlappingEntities { sentence: index });
            }
        }
        Ok(())
    }
}

/// Lookup key for [`Corpus::candidate_ids`]. Word and lemma keys are
/// case-insensitive; entity labels are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexKey<'a> {
    Word(&'a str),
    Lemma(&'a str),
    Entity(&'a str),
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    by_id: HashMap<u64, usize>,
    words: HashMap<String, Vec<u64>>,
    lemmas: HashMap<String, Vec<u64>>,
    entities: HashMap<String, Vec<u64>>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.sentences == other.sentences
    }
}

fn push_posting(map: &mut HashMap<String, Vec<u64>>, key: String, id: u64) {
    let list = map.entry(key).or_default();
    if list.last() != Some(&id) {
        list.push(id);
    }
}

impl Corpus {
    pub fn from_sentences(sentences: Vec<Sentence>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (pos, s) in sentences.iter().enumerate() {
            if corpus.by_id.insert(s.id, pos).is_some() {
                return Err(CorpusError::DuplicateId(s.id));
            }
        }
        // postings must come out sorted regardless of storage order
        let mut order: Vec<usize> = (0..sentences.len()).collect();
        order.sort_by_key(|&i| sentences[i].id);
        for i in order {
            let s = &sentences[i];
            for tok in &s.tokens {
                push_posting(&mut corpus.words, tok.surface.to_lowercase(), s.id);
                push_posting(&mut corpus.lemmas, tok.lemma.to_lowercase(), s.id);
            }
            for e in &s.entities {
                push_posting(&mut corpus.entities, e.label.clone(), s.id);
            }
        }
        for map in [&mut corpus.words, &mut corpus.lemmas, &mut corpus.entities] {
            for list in map.values_mut() {
                list.dedup();
            }
        }
        corpus.sentences = sentences;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn get_sentence(&self, id: u64) -> Result<&Sentence> {
        self.by_id
            .get(&id)
            .map(|&i| &self.sentences[i])
            .ok_or(CorpusError::UnknownId(id))
    }

    /// Ids of sentences containing `key`, ascending. Unknown keys yield an
    /// empty list.
    pub fn candidate_ids(&self, key: LexKey<'_>) -> Vec<u64> {
        let hit = match key {
            LexKey::Word(w) => self.words.get(&w.to_lowercase()),
            LexKey::Lemma(l) => self.lemmas.get(&l.to_lowercase()),
            LexKey::Entity(e) => self.entities.get(e),
        };
        hit.cloned().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sentence> {
        self.sentences.iter()
    }

    /// Write the corpus as a `NESC1` snapshot.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&[SNAPSHOT_VERSION])?;
        w.write_all(&(self.sentences.len() as u64).to_le_bytes())?;
        for s in &self.sentences {
            let payload = serde_json::to_vec(s).map_err(|e| CorpusError::Format(e.to_string()))?;
            w.write_all(&(payload.len() as u32).to_le_bytes())?;
            w.write_all(&payload)?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let short = |_| CorpusError::Format("truncated snapshot".into());
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(short)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(CorpusError::Format("bad magic".into()));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version).map_err(short)?;
        if version[0] != SNAPSHOT_VERSION {
            return Err(CorpusError::Format(format!("unsupported version {}", version[0])));
        }
        let mut count = [0u8; 8];
        r.read_exact(&mut count).map_err(short)?;
        let count = u64::from_le_bytes(count) as usize;
        let mut sentences = Vec::with_capacity(count.min(1 << 20));
        let mut buf = Vec::new();
        for i in 0..count {
            let mut len = [0u8; 4];
            r.read_exact(&mut len).map_err(short)?;
            buf.resize(u32::from_le_bytes(len) as usize, 0);
            r.read_exact(&mut buf).map_err(short)?;
            let s: Sentence =
                serde_json::from_slice(&buf).map_err(|e| CorpusError::Format(e.to_string()))?;
            s.validate(i)?;
            sentences.push(s);
        }
        Corpus::from_sentences(sentences)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_snapshot(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Corpus::read_snapshot(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Document id for sentences that appear before any `# newdoc id` or
    /// `# doc_id` comment.
    pub default_doc_id: String,
}

#[derive(Default)]
struct PendingSentence {
    tokens: Vec<Token>,
    entity_tags: Vec<Vec<String>>,
    doc_id: Option<String>,
    text: Option<String>,
}

/// Parse CoNLL-U text into a validated corpus. Sentence ids are assigned
/// sequentially from 0 in input order.
pub fn ingest_conllu<R: BufRead>(input: R, options: &IngestOptions) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut current_doc = options.default_doc_id.clone();
    let mut pending = PendingSentence::default();

    let finish = |pending: &mut PendingSentence, current_doc: &str, sentences: &mut Vec<Sentence>| -> Result<()> {
        if pending.tokens.is_empty() {
            *pending = PendingSentence::default();
            return Ok(());
        }
        let p = std::mem::take(pending);
        let index = sentences.len();
        let entities = decode_entities(&p.entity_tags, index)?;
        let text = p.text.unwrap_or_else(|| {
            p.tokens.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ")
        });
        let sentence = Sentence {
            id: index as u64,
            tokens: p.tokens,
            entities,
            doc_id: p.doc_id.unwrap_or_else(|| current_doc.to_string()),
            text,
        };
        sentence.validate(index)?;
        sentences.push(sentence);
        Ok(())
    };

    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            finish(&mut pending, &current_doc, &mut sentences)?;
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("newdoc id =") {
                current_doc = v.trim().to_string();
            } else if let Some(v) = comment.strip_prefix("newdoc") {
                current_doc = v.trim().to_string();
            } else if let Some(v) = comment.strip_prefix("doc_id =") {
                pending.doc_id = Some(v.trim().to_string());
            } else if let Some(v) = comment.strip_prefix("text =") {
                pending.text = Some(v.trim().to_string());
            }
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 10 {
            return Err(CorpusError::MalformedLine {
                line: lineno,
                reason: format!("expected 10 columns, found {}", cols.len()),
            });
        }
        // multiword ranges and empty nodes carry no syntactic token
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedLine { line: lineno, reason };
        let id: usize = cols[0].parse().map_err(|_| malformed(format!("bad ID {:?}", cols[0])))?;
        if id != pending.tokens.len() + 1 {
            return Err(malformed(format!("token ID {id} out of sequence")));
        }
        let head: usize = cols[6].parse().map_err(|_| malformed(format!("bad HEAD {:?}", cols[6])))?;
        let surface = cols[1].to_string();
        let lemma = if cols[2] == "_" && cols[1] != "_" { surface.clone() } else { cols[2].to_string() };
        pending.tokens.push(Token {
            surface,
            lemma,
            pos: cols[3].to_string(),
            head: if head == 0 { None } else { Some(head - 1) },
            deprel: cols[7].to_string(),
        });
        let tags = cols[9]
            .split('|')
            .filter_map(|kv| kv.strip_prefix("Entity="))
            .map(str::to_string)
            .collect();
        pending.entity_tags.push(tags);
    }
    finish(&mut pending, &current_doc, &mut sentences)?;
    Corpus::from_sentences(sentences)
}

fn decode_entities(tags: &[Vec<String>], sentence: usize) -> Result<Vec<EntitySpan>> {
    let mut spans: Vec<EntitySpan> = Vec::new();
    for (i, token_tags) in tags.iter().enumerate() {
        if token_tags.len() > 1 {
            return Err(CorpusError::OverlappingEntities { sentence });
        }
        let Some(tag) = token_tags.first() else { continue };
        if let Some(label) = tag.strip_prefix("I-") {
            if let Some(last) = spans.last_mut() {
                if last.end == i && last.label == label {
                    last.end = i + 1;
                    continue;
                }
            }
            spans.push(EntitySpan { start: i, end: i + 1, label: label.to_string() });
        } else {
            let label = tag.strip_prefix("B-").unwrap_or(tag);
            spans.push(EntitySpan { start: i, end: i + 1, label: label.to_string() });
        }
    }
    Ok(spans)
}

/// Render one sentence as a CoNLL-U block (without the trailing blank line).
pub fn sentence_to_conllu(s: &Sentence) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# sent_id = {}", s.id);
    if !s.doc_id.is_empty() {
        let _ = writeln!(out, "# doc_id = {}", s.doc_id);
    }
    let _ = writeln!(out, "# text = {}", s.text);
    for (i, t) in s.tokens.iter().enumerate() {
        let misc = match s.entity_at(i) {
            Some(e) if e.start == i => format!("Entity={}", e.label),
            Some(e) => format!("Entity=I-{}", e.label),
            None => "_".to_string(),
        };
        let head = t.head.map(|h| h + 1).unwrap_or(0);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t_\t_\t{}\t{}\t_\t{}",
            i + 1,
            t.surface,
            t.lemma,
            t.pos,
            head,
            t.deprel,
            misc
        );
    }
    out
}

/// Serialize a corpus to CoNLL-U in id order.
pub fn to_conllu(corpus: &Corpus) -> String {
    let mut out = String::new();
    for s in corpus.sentences() {
        out.push_str(&sentence_to_conllu(s));
        out.push('\n');
    }
    out
}

/// Full-scan reference for [`Corpus::candidate_ids`].
pub fn scan_ids(corpus: &Corpus, key: LexKey<'_>) -> Vec<u64> {
    let ids: BTreeSet<u64> = corpus
        .iter()
        .filter(|s| match key {
            LexKey::Word(w) => s.tokens.iter().any(|t| t.surface.to_lowercase() == w.to_lowercase()),
            LexKey::Lemma(l) => s.tokens.iter().any(|t| t.lemma.to_lowercase() == l.to_lowercase()),
            LexKey::Entity(e) => s.entities.iter().any(|x| x.label == e),
        })
        .map(|s| s.id)
        .collect();
    ids.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const X_CAUSES_Y: &str = "1\tX\tx\tPROPN\t_\t_\t2\tnsubj\t_\t_\n\
                              2\tcauses\tcause\tVERB\t_\t_\t0\troot\t_\t_\n\
                              3\tY\ty\tPROPN\t_\t_\t2\tobj\t_\t_\n";

    fn ingest(text: &str) -> Result<Corpus> {
        ingest_conllu(text.as_bytes(), &IngestOptions::default())
    }

    #[test]
    fn minimal_parse() {
        let c = ingest(X_CAUSES_Y).unwrap();
        assert_eq!(c.len(), 1);
        let s = c.get_sentence(0).unwrap();
        assert_eq!(s.root(), Some(1));
        assert_eq!(s.text, "X causes Y");
        assert_eq!(s.children(1).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn self_head_is_cyclic() {
        let bad = "1\tX\tx\tPROPN\t_\t_\t1\tnsubj\t_\t_\n2\tgoes\tgo\tVERB\t_\t_\t0\troot\t_\t_\n";
        assert!(matches!(ingest(bad), Err(CorpusError::CyclicParse { .. })));
    }

    #[test]
    fn two_token_cycle_rejected() {
        let bad = "1\tA\ta\tX\t_\t_\t2\tdep\t_\t_\n2\tB\tb\tX\t_\t_\t1\tdep\t_\t_\n3\tC\tc\tX\t_\t_\t0\troot\t_\t_\n";
        assert!(matches!(ingest(bad), Err(CorpusError::CyclicParse { .. })));
    }

    #[test]
    fn wrong_column_count() {
        let bad = "1\tX\tx\tPROPN\t_\t_\t0\troot\t_\n";
        assert!(matches!(ingest(bad), Err(CorpusError::MalformedLine { line: 1, .. })));
    }

    #[test]
    fn entities_from_misc() {
        let text = "1\tColchicum\tcolchicum\tPROPN\t_\t_\t3\tnsubj\t_\tEntity=SPECIES\n\
                    2\tautumnale\tautumnale\tPROPN\t_\t_\t1\tflat\t_\tEntity=I-SPECIES\n\
                    3\tgrows\tgrow\tVERB\t_\t_\t0\troot\t_\t_\n\
                    4\tcolchicine\tcolchicine\tNOUN\t_\t_\t3\tobj\t_\tEntity=CHEMICAL\n";
        let c = ingest(text).unwrap();
        let s = c.get_sentence(0).unwrap();
        assert_eq!(
            s.entities,
            vec![
                EntitySpan { start: 0, end: 2, label: "SPECIES".into() },
                EntitySpan { start: 3, end: 4, label: "CHEMICAL".into() },
            ]
        );
        assert_eq!(c.candidate_ids(LexKey::Entity("CHEMICAL")), vec![0]);
    }

    #[test]
    fn double_entity_tag_overlaps() {
        let text = "1\tX\tx\tPROPN\t_\t_\t0\troot\t_\tEntity=GENE|Entity=CHEMICAL\n";
        assert!(matches!(ingest(text), Err(CorpusError::OverlappingEntities { .. })));
    }

    #[test]
    fn comments_and_docs() {
        let text = format!("# newdoc id = d1\n# text = X causes Y .\n{X_CAUSES_Y}\n{X_CAUSES_Y}");
        let c = ingest(&text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get_sentence(0).unwrap().text, "X causes Y .");
        assert_eq!(c.get_sentence(1).unwrap().doc_id, "d1");
        assert_eq!(c.get_sentence(1).unwrap().id, 1);
    }

    #[test]
    fn get_sentence_lookups() {
        let text: String = (0..10).map(|_| format!("{X_CAUSES_Y}\n")).collect();
        let c = ingest(&text).unwrap();
        assert_eq!(c.get_sentence(3).unwrap().id, 3);
        assert!(matches!(c.get_sentence(99), Err(CorpusError::UnknownId(99))));
        let empty = Corpus::default();
        assert!(matches!(empty.get_sentence(0), Err(CorpusError::UnknownId(0))));
    }

    #[test]
    fn candidate_ids_word_lookup() {
        let plain = "1\tno\tno\tDET\t_\t_\t0\troot\t_\t_\n\n";
        let with = "1\tTreatment\ttreatment\tNOUN\t_\t_\t0\troot\t_\t_\n\n";
        let text: String = (0..10).map(|i| if i == 2 || i == 7 { with } else { plain }).collect();
        let c = ingest(&text).unwrap();
        assert_eq!(c.candidate_ids(LexKey::Word("treatment")), vec![2, 7]);
        assert!(c.candidate_ids(LexKey::Entity("CHEMICAL")).is_empty());
        assert!(c.candidate_ids(LexKey::Lemma("unknown")).is_empty());
    }

    #[test]
    fn snapshot_round_trip_and_truncation() {
        let c = ingest(X_CAUSES_Y).unwrap();
        let mut buf = Vec::new();
        c.write_snapshot(&mut buf).unwrap();
        assert_eq!(&buf[..5], SNAPSHOT_MAGIC);
        let back = Corpus::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.candidate_ids(LexKey::Lemma("cause")), vec![0]);
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(Corpus::read_snapshot(cut), Err(CorpusError::Format(_))));
    }
}
