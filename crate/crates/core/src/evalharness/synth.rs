//! Deterministic relation corpus generator.
//!
//! Each relation owns a predicate (verb and noun forms), two argument
//! vocabularies of pseudo-words tagged with a per-slot entity label, and a
//! few topic words. Sentences instantiate one of four syntactic frames with
//! hand-built dependency trees:
//!
//! ```text
//! 0 active      a1 causes a2 .
//! 1 passive     a2 is caused by a1 .
//! 2 nominal     a1 is a cause of a2 .
//! 3 inverse     the cause of a2 is a1 .
//! ```
//!
//! optionally with a leading adverbial, an adjective on either argument and
//! a trailing topic phrase. Frame 0 is drawn less often than the others so
//! a by-example query written in it reaches only a minority of the
//! relation's sentences symbolically.
//!
//! Nominal predicates carry the verb's lemma ("treatment" → treat), so the
//! frames of one relation share a lexical signal.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, RelevanceLabel};
use crate::corpus::{Corpus, EntitySpan, Sentence, Token};
use crate::matcher::Span;
use crate::querylang::{ByExampleQuery, Query, QueryToken};

struct RelationDef {
    lemma: &'static str,
    third: &'static str,
    participle: &'static str,
    noun: &'static str,
    labels: (&'static str, &'static str),
}

const RELATIONS: &[RelationDef] = &[
    RelationDef { lemma: "cause", third: "causes", participle: "caused", noun: "cause", labels: ("VIRUS", "DISEASE") },
    RelationDef { lemma: "treat", third: "treats", participle: "treated", noun: "treatment", labels: ("CHEMICAL", "DISEASE") },
    RelationDef { lemma: "inhibit", third: "inhibits", participle: "inhibited", noun: "inhibitor", labels: ("CHEMICAL", "PROTEIN") },
    RelationDef { lemma: "activate", third: "activates", participle: "activated", noun: "activator", labels: ("PROTEIN", "GENE") },
    RelationDef { lemma: "prevent", third: "prevents", participle: "prevented", noun: "preventer", labels: ("CHEMICAL", "SYMPTOM") },
    RelationDef { lemma: "regulate", third: "regulates", participle: "regulated", noun: "regulator", labels: ("GENE", "PROTEIN") },
    RelationDef { lemma: "bind", third: "binds", participle: "bound", noun: "binder", labels: ("PROTEIN", "CELL") },
    RelationDef { lemma: "produce", third: "produces", participle: "produced", noun: "producer", labels: ("CELL", "PROTEIN") },
    RelationDef { lemma: "transmit", third: "transmits", participle: "transmitted", noun: "transmitter", labels: ("ORGANISM", "VIRUS") },
    RelationDef { lemma: "detect", third: "detects", participle: "detected", noun: "detector", labels: ("PROTEIN", "VIRUS") },
    RelationDef { lemma: "encode", third: "encodes", participle: "encoded", noun: "encoder", labels: ("VIRUS", "GENE") },
    RelationDef { lemma: "infect", third: "infects", participle: "infected", noun: "infector", labels: ("VIRUS", "CELL") },
];

pub const MAX_RELATIONS: usize = RELATIONS.len();
pub const MAX_TEMPLATES: usize = 4;
pub const TEMPLATE_NAMES: [&str; MAX_TEMPLATES] = ["active", "passive", "nominal", "inverse"];
const DEFAULT_WEIGHTS: [u32; MAX_TEMPLATES] = [1, 2, 2, 2];

const ADJECTIVES: &[&str] = &["acute", "novel", "chronic", "mutant", "primary", "severe", "common", "rare"];
const ADVERBS: &[&str] = &["recently", "notably", "however", "clearly"];
const RESERVED: &[&str] = &["is", "a", "of", "by", "the", "in"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub relations: usize,
    pub templates: usize,
    /// Pseudo-words per argument slot per relation.
    pub arg_vocab: usize,
    pub topic_vocab: usize,
    pub sentences: usize,
    pub seed: u64,
    /// Relative frame frequencies; defaults to 1:2:2:2.
    #[serde(default)]
    pub template_weights: Option<Vec<u32>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { relations: 10, templates: 3, arg_vocab: 200, topic_vocab: 3, sentences: 5000, seed: 42, template_weights: None }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidSpec(m));
        if self.relations == 0 || self.relations > MAX_RELATIONS {
            return bad(format!("relations must be in 1..={MAX_RELATIONS}"));
        }
        if self.templates < 2 || self.templates > MAX_TEMPLATES {
            return bad(format!("templates must be in 2..={MAX_TEMPLATES}"));
        }
        if self.arg_vocab == 0 || self.topic_vocab == 0 {
            return bad("vocabulary sizes must be positive".into());
        }
        if let Some(w) = &self.template_weights {
            if w.len() != self.templates || w.iter().all(|&x| x == 0) {
                return bad("template_weights needs one entry per template, not all zero".into());
            }
        }
        Ok(())
    }

    fn weights(&self) -> Vec<u32> {
        self.template_weights.clone().unwrap_or_else(|| DEFAULT_WEIGHTS[..self.templates].to_vec())
    }
}

/// Generated truth for one sentence. `args` are full argument phrases
/// (adjective included); `heads` are their head nouns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub sid: u64,
    pub relation: String,
    pub template: usize,
    pub args: Vec<Span>,
    pub heads: Vec<usize>,
}

/// One by-example query per (relation, frame), with its parse attached.
/// Captures carry their entity label so the topic phrase, which shares the
/// `obl` attachment in the passive frame, is not captured.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationQuery {
    pub relation: String,
    pub template: usize,
    pub query: String,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub gold: Vec<GoldRecord>,
    /// A label for every (sentence, relation) combination.
    pub labels: Vec<RelevanceLabel>,
    pub queries: Vec<RelationQuery>,
}

pub fn relation_names(count: usize) -> Vec<String> {
    RELATIONS.iter().take(count).map(|r| r.lemma.to_string()).collect()
}

struct Vocab {
    args: Vec<[Vec<String>; 2]>,
    topics: Vec<Vec<String>>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*C.choose(rng).unwrap() as char);
        w.push(*V.choose(rng).unwrap() as char);
    }
    if rng.random_bool(0.5) {
        w.push(*C.choose(rng).unwrap() as char);
    }
    w
}

fn build_vocab(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vocab {
    let mut used: HashSet<String> = RESERVED.iter().chain(ADJECTIVES).chain(ADVERBS).map(|s| s.to_string()).collect();
    for r in RELATIONS {
        used.extend([r.lemma, r.third, r.participle, r.noun].map(String::from));
    }
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let w = pseudo_word(rng);
        if used.insert(w.clone()) {
            return w;
        }
    };
    let mut args = Vec::new();
    let mut topics = Vec::new();
    for _ in 0..spec.relations {
        let a1 = (0..spec.arg_vocab).map(|_| fresh(rng)).collect();
        let a2 = (0..spec.arg_vocab).map(|_| fresh(rng)).collect();
        args.push([a1, a2]);
        topics.push((0..spec.topic_vocab).map(|_| fresh(rng)).collect());
    }
    Vocab { args, topics }
}

#[derive(Default)]
struct Builder {
    tokens: Vec<Token>,
    entities: Vec<EntitySpan>,
}

impl Builder {
    fn push(&mut self, surface: &str, lemma: &str, pos: &str, deprel: &str) -> usize {
        self.tokens.push(Token::new(surface, lemma, pos, None, deprel));
        self.tokens.len() - 1
    }

    fn attach(&mut self, child: usize, head: usize) {
        self.tokens[child].head = Some(head);
    }

    /// Optional adjective plus head noun; returns (head, span).
    fn arg(&mut self, word: &str, adj: Option<&str>, deprel: &str, label: &str) -> (usize, Span) {
        let start = self.tokens.len();
        let a = adj.map(|a| self.push(a, a, "ADJ", "amod"));
        let head = self.push(word, word, "NOUN", deprel);
        if let Some(a) = a {
            self.attach(a, head);
        }
        let span = (start, head + 1);
        self.entities.push(EntitySpan { start, end: head + 1, label: label.to_string() });
        (head, span)
    }

    fn finish(self, id: u64) -> Sentence {
        let text = self.tokens.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ");
        Sentence { id, tokens: self.tokens, entities: self.entities, doc_id: String::new(), text }
    }
}

struct Slots<'a> {
    a1: &'a str,
    a2: &'a str,
    adj1: Option<&'a str>,
    adj2: Option<&'a str>,
    adverb: Option<&'a str>,
    topic: Option<&'a str>,
}

struct Built {
    sentence: Sentence,
    args: Vec<Span>,
    heads: Vec<usize>,
    predicate: usize,
}

fn build(rel: &RelationDef, template: usize, s: &Slots<'_>, id: u64) -> Built {
    let mut b = Builder::default();
    let (l1, l2) = rel.labels;
    let adv = s.adverb.map(|w| {
        let a = b.push(w, w, "ADV", "advmod");
        let c = b.push(",", ",", "PUNCT", "punct");
        (a, c)
    });
    let (root, predicate, h1, sp1, h2, sp2) = match template {
        0 => {
            let (h1, sp1) = b.arg(s.a1, s.adj1, "nsubj", l1);
            let v = b.push(rel.third, rel.lemma, "VERB", "root");
            let (h2, sp2) = b.arg(s.a2, s.adj2, "obj", l2);
            b.attach(h1, v);
            b.attach(h2, v);
            (v, v, h1, sp1, h2, sp2)
        }
        1 => {
            let (h2, sp2) = b.arg(s.a2, s.adj2, "nsubj:pass", l2);
            let aux = b.push("is", "be", "AUX", "aux:pass");
            let v = b.push(rel.participle, rel.lemma, "VERB", "root");
            let by = b.push("by", "by", "ADP", "case");
            let (h1, sp1) = b.arg(s.a1, s.adj1, "obl", l1);
            b.attach(h2, v);
            b.attach(aux, v);
            b.attach(by, h1);
            b.attach(h1, v);
            (v, v, h1, sp1, h2, sp2)
        }
        2 => {
            let (h1, sp1) = b.arg(s.a1, s.adj1, "nsubj", l1);
            let cop = b.push("is", "be", "AUX", "cop");
            let det = b.push("a", "a", "DET", "det");
            let n = b.push(rel.noun, rel.lemma, "NOUN", "root");
            let of = b.push("of", "of", "ADP", "case");
            let (h2, sp2) = b.arg(s.a2, s.adj2, "nmod", l2);
            b.attach(h1, n);
            b.attach(cop, n);
            b.attach(det, n);
            b.attach(of, h2);
            b.attach(h2, n);
            (n, n, h1, sp1, h2, sp2)
        }
        _ => {
            let det = b.push("the", "the", "DET", "det");
            let n = b.push(rel.noun, rel.lemma, "NOUN", "nsubj");
            let of = b.push("of", "of", "ADP", "case");
            let (h2, sp2) = b.arg(s.a2, s.adj2, "nmod", l2);
            let cop = b.push("is", "be", "AUX", "cop");
            let (h1, sp1) = b.arg(s.a1, s.adj1, "root", l1);
            b.attach(det, n);
            b.attach(of, h2);
            b.attach(h2, n);
            b.attach(n, h1);
            b.attach(cop, h1);
            (h1, n, h1, sp1, h2, sp2)
        }
    };
    if let Some((a, c)) = adv {
        b.attach(a, root);
        b.attach(c, root);
    }
    if let Some(t) = s.topic {
        let p = b.push("in", "in", "ADP", "case");
        let n = b.push(t, t, "NOUN", "obl");
        b.attach(p, n);
        b.attach(n, root);
    }
    let dot = b.push(".", ".", "PUNCT", "punct");
    b.attach(dot, root);
    Built { sentence: b.finish(id), args: vec![sp1, sp2], heads: vec![h1, h2], predicate }
}

fn query_for(rel: &RelationDef, template: usize, vocab: &[Vec<String>; 2]) -> String {
    let slots = Slots { a1: &vocab[0][0], a2: &vocab[1][0], adj1: None, adj2: None, adverb: None, topic: None };
    let built = build(rel, template, &slots, 0);
    let tokens = built
        .sentence
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == built.heads[0] {
                QueryToken { entity_constraint: Some(rel.labels.0.into()), ..QueryToken::capture("a1", &t.surface) }
            } else if i == built.heads[1] {
                QueryToken { entity_constraint: Some(rel.labels.1.into()), ..QueryToken::capture("a2", &t.surface) }
            } else if i == built.predicate {
                QueryToken::anchor(&t.surface)
            } else {
                QueryToken::plain(&t.surface)
            }
        })
        .collect();
    Query::ByExample(ByExampleQuery { tokens, example_parse: Some(built.sentence) }).render()
}

pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthOutput, EvalError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = build_vocab(spec, &mut rng);
    let weights = spec.weights();
    let weight_total: u32 = weights.iter().sum();
    let names = relation_names(spec.relations);

    let mut sentences = Vec::with_capacity(spec.sentences);
    let mut gold = Vec::with_capacity(spec.sentences);
    for sid in 0..spec.sentences as u64 {
        let r = rng.random_range(0..spec.relations);
        let mut pick = rng.random_range(0..weight_total);
        let template = weights
            .iter()
            .position(|&w| {
                if pick < w {
                    true
                } else {
                    pick -= w;
                    false
                }
            })
            .expect("pick below total weight");
        let [v1, v2] = &vocab.args[r];
        let slots = Slots {
            a1: v1.choose(&mut rng).unwrap(),
            a2: v2.choose(&mut rng).unwrap(),
            adj1: rng.random_bool(0.25).then(|| *ADJECTIVES.choose(&mut rng).unwrap()),
            adj2: rng.random_bool(0.25).then(|| *ADJECTIVES.choose(&mut rng).unwrap()),
            adverb: rng.random_bool(0.3).then(|| *ADVERBS.choose(&mut rng).unwrap()),
            topic: rng.random_bool(0.6).then(|| vocab.topics[r].choose(&mut rng).unwrap().as_str()),
        };
        let built = build(&RELATIONS[r], template, &slots, sid);
        gold.push(GoldRecord { sid, relation: names[r].clone(), template, args: built.args, heads: built.heads });
        sentences.push(built.sentence);
    }
    let corpus = Corpus::from_sentences(sentences).map_err(|e| EvalError::InvalidSpec(e.to_string()))?;

    let mut labels = Vec::with_capacity(spec.sentences * spec.relations);
    for g in &gold {
        for name in &names {
            let relevant = *name == g.relation;
            labels.push(RelevanceLabel {
                sid: g.sid,
                relation: name.clone(),
                relevant,
                a1: relevant.then_some(g.args[0]),
                a2: relevant.then_some(g.args[1]),
            });
        }
    }
    let queries = (0..spec.relations)
        .flat_map(|r| (0..spec.templates).map(move |t| (r, t)))
        .map(|(r, t)| RelationQuery { relation: names[r].clone(), template: t, query: query_for(&RELATIONS[r], t, &vocab.args[r]) })
        .collect();
    Ok(SynthOutput { corpus, gold, labels, queries })
}
