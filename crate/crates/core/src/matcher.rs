//! Symbolic extractive search: boolean term/entity queries and dependency
//! pattern embedding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, LexKey, Sentence};
use crate::querylang::{BooleanQuery, SyntacticPattern};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("UnknownCapture: {0}")]
    UnknownCapture(String),
}

/// Half-open token span.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Match {
    pub sentence_id: u64,
    /// Capture name → token span. Pattern captures are single tokens here;
    /// see [`expand_capture`] for subtree spans.
    pub captures: BTreeMap<String, Span>,
    /// Pattern node index → matched token index. Empty for boolean matches.
    pub matched_nodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpandMode {
    #[default]
    Token,
    Subtree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expansion {
    pub span: Span,
    /// Subtree mode only: the subtree was not contiguous and `span` fell
    /// back to the single token.
    pub non_contiguous: bool,
}

fn term_present(sentence: &Sentence, term: &str) -> bool {
    let term = term.to_lowercase();
    sentence
        .tokens
        .iter()
        .any(|t| t.surface.to_lowercase() == term || t.lemma.to_lowercase() == term)
}

fn intersect(a: &[u64], b: &[u64]) -> Vec<u64> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn union(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out: Vec<u64> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Sentences containing every required term (as word or lemma) with one
/// match per injective assignment of entity spans to capture constraints.
pub fn match_boolean(query: &BooleanQuery, corpus: &Corpus) -> Vec<Match> {
    let mut candidates: Option<Vec<u64>> = None;
    let mut narrow = |ids: Vec<u64>| {
        candidates = Some(match candidates.take() {
            Some(c) => intersect(&c, &ids),
            None => ids,
        });
    };
    for term in &query.required_terms {
        narrow(union(
            &corpus.candidate_ids(LexKey::Word(term)),
            &corpus.candidate_ids(LexKey::Lemma(term)),
        ));
    }
    for c in &query.capture_constraints {
        narrow(corpus.candidate_ids(LexKey::Entity(&c.label)));
    }
    let ids = candidates.unwrap_or_else(|| corpus.iter().map(|s| s.id).collect());

    let mut out = Vec::new();
    for id in ids {
        let Ok(sentence) = corpus.get_sentence(id) else { continue };
        if !query.required_terms.iter().all(|t| term_present(sentence, t)) {
            continue;
        }
        let options: Vec<Vec<Span>> = query
            .capture_constraints
            .iter()
            .map(|c| {
                let mut spans: Vec<Span> = sentence
                    .entities
                    .iter()
                    .filter(|e| e.label == c.label)
                    .map(|e| (e.start, e.end))
                    .collect();
                spans.sort();
                spans
            })
            .collect();
        let mut chosen = Vec::with_capacity(options.len());
        assign_spans(&options, &mut chosen, &mut |spans| {
            let captures = query
                .capture_constraints
                .iter()
                .zip(spans)
                .map(|(c, &s)| (c.name.clone(), s))
                .collect();
            out.push(Match { sentence_id: id, captures, matched_nodes: Vec::new() });
        });
    }
    out
}

fn assign_spans(options: &[Vec<Span>], chosen: &mut Vec<Span>, emit: &mut dyn FnMut(&[Span])) {
    if chosen.len() == options.len() {
        emit(chosen);
        return;
    }
    for &span in &options[chosen.len()] {
        if chosen.contains(&span) {
            continue;
        }
        chosen.push(span);
        assign_spans(options, chosen, emit);
        chosen.pop();
    }
}

fn node_accepts(pattern: &SyntacticPattern, node: usize, sentence: &Sentence, tok: usize) -> bool {
    let pn = &pattern.nodes[node];
    if !pn.constraint.accepts(&sentence.tokens[tok]) {
        return false;
    }
    match &pn.entity {
        Some(label) => sentence.entities.iter().any(|e| e.contains(tok) && &e.label == label),
        None => true,
    }
}

fn match_from_assignment(pattern: &SyntacticPattern, sentence_id: u64, assign: &[usize]) -> Match {
    let captures = pattern
        .nodes
        .iter()
        .zip(assign)
        .filter_map(|(n, &t)| n.capture.clone().map(|c| (c, (t, t + 1))))
        .collect();
    Match { sentence_id, captures, matched_nodes: assign.to_vec() }
}

struct Embedder<'a> {
    pattern: &'a SyntacticPattern,
    sentence: &'a Sentence,
    /// Pattern nodes in preorder; every node's parent precedes it.
    order: Vec<usize>,
    parents: Vec<Option<(usize, &'a str)>>,
    children: Vec<Vec<usize>>,
    assign: Vec<usize>,
    used: Vec<bool>,
}

impl<'a> Embedder<'a> {
    fn new(pattern: &'a SyntacticPattern, sentence: &'a Sentence) -> Self {
        let mut order = Vec::with_capacity(pattern.nodes.len());
        let mut stack = vec![pattern.root];
        while let Some(n) = stack.pop() {
            order.push(n);
            let mut kids: Vec<usize> = pattern.children(n).map(|(c, _)| c).collect();
            kids.sort_unstable_by(|a, b| b.cmp(a));
            stack.extend(kids);
        }
        let mut children = vec![Vec::new(); sentence.tokens.len()];
        for (i, t) in sentence.tokens.iter().enumerate() {
            if let Some(h) = t.head {
                children[h].push(i);
            }
        }
        Embedder {
            pattern,
            sentence,
            order,
            parents: pattern.parents(),
            children,
            assign: vec![usize::MAX; pattern.nodes.len()],
            used: vec![false; sentence.tokens.len()],
        }
    }

    fn run(&mut self, out: &mut Vec<Match>) {
        let root = self.pattern.root;
        for tok in 0..self.sentence.tokens.len() {
            if node_accepts(self.pattern, root, self.sentence, tok) {
                self.place(0, tok, out);
            }
        }
    }

    fn place(&mut self, depth: usize, tok: usize, out: &mut Vec<Match>) {
        let node = self.order[depth];
        self.assign[node] = tok;
        self.used[tok] = true;
        if depth + 1 == self.order.len() {
            out.push(match_from_assignment(self.pattern, self.sentence.id, &self.assign));
        } else {
            let next = self.order[depth + 1];
            let (parent, label) = self.parents[next].expect("non-root node has a parent");
            let head = self.assign[parent];
            for i in 0..self.children[head].len() {
                let cand = self.children[head][i];
                if !self.used[cand]
                    && self.sentence.tokens[cand].deprel == label
                    && node_accepts(self.pattern, next, self.sentence, cand)
                {
                    self.place(depth + 1, cand, out);
                }
            }
        }
        self.used[tok] = false;
        self.assign[node] = usize::MAX;
    }
}

fn candidate_sentences(pattern: &SyntacticPattern, corpus: &Corpus) -> Vec<u64> {
    let mut candidates: Option<Vec<u64>> = None;
    for node in &pattern.nodes {
        let mut keys = Vec::new();
        if let Some(k) = node.constraint.lex_key() {
            keys.push(k);
        }
        if let Some(label) = &node.entity {
            keys.push(LexKey::Entity(label));
        }
        for key in keys {
            let ids = corpus.candidate_ids(key);
            candidates = Some(match candidates.take() {
                Some(c) => intersect(&c, &ids),
                None => ids,
            });
        }
    }
    match candidates {
        Some(c) => c,
        None => {
            let mut all: Vec<u64> = corpus.iter().map(|s| s.id).collect();
            all.sort_unstable();
            all
        }
    }
}

/// Every embedding of `pattern` into the corpus, ordered by sentence id then
/// by the matched token of each pattern node, truncated at `limit`.
pub fn match_pattern(pattern: &SyntacticPattern, corpus: &Corpus, limit: Option<usize>) -> Vec<Match> {
    let mut out = Vec::new();
    if pattern.nodes.is_empty() || limit == Some(0) {
        return out;
    }
    for id in candidate_sentences(pattern, corpus) {
        let Ok(sentence) = corpus.get_sentence(id) else { continue };
        if sentence.tokens.len() < pattern.nodes.len() {
            continue;
        }
        let start = out.len();
        Embedder::new(pattern, sentence).run(&mut out);
        out[start..].sort_by(|a, b| a.matched_nodes.cmp(&b.matched_nodes));
        if let Some(k) = limit {
            if out.len() >= k {
                out.truncate(k);
                break;
            }
        }
    }
    out
}

/// Reference matcher: tries every injective node → token assignment in
/// every sentence without touching the lexicon indexes.
pub fn brute_force_match(pattern: &SyntacticPattern, corpus: &Corpus) -> Vec<Match> {
    let k = pattern.nodes.len();
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    let mut sentences: Vec<&Sentence> = corpus.iter().collect();
    sentences.sort_by_key(|s| s.id);
    for s in sentences {
        let n = s.tokens.len();
        if n < k {
            continue;
        }
        let mut assign = vec![0usize; k];
        'odometer: loop {
            let injective = (0..k).all(|i| (i + 1..k).all(|j| assign[i] != assign[j]));
            if injective {
                let nodes_ok = (0..k).all(|i| node_accepts(pattern, i, s, assign[i]));
                let edges_ok = pattern.edges.iter().all(|e| {
                    let child = &s.tokens[assign[e.child]];
                    child.head == Some(assign[e.parent]) && child.deprel == e.deprel
                });
                if nodes_ok && edges_ok {
                    out.push(match_from_assignment(pattern, s.id, &assign));
                }
            }
            let mut pos = k;
            loop {
                if pos == 0 {
                    break 'odometer;
                }
                pos -= 1;
                assign[pos] += 1;
                if assign[pos] < n {
                    break;
                }
                assign[pos] = 0;
            }
        }
    }
    out
}

/// Token span of a capture, optionally widened to the contiguous cover of
/// the captured token's dependency subtree.
pub fn expand_capture(m: &Match, sentence: &Sentence, capture: &str, mode: ExpandMode) -> Result<Expansion, MatchError> {
    let &(start, end) = m
        .captures
        .get(capture)
        .ok_or_else(|| MatchError::UnknownCapture(capture.to_string()))?;
    if mode == ExpandMode::Token || end != start + 1 {
        return Ok(Expansion { span: (start, end), non_contiguous: false });
    }
    let members = subtree(sentence, start);
    let lo = *members.iter().min().expect("subtree holds its root");
    let hi = *members.iter().max().expect("subtree holds its root");
    if hi - lo + 1 == members.len() {
        Ok(Expansion { span: (lo, hi + 1), non_contiguous: false })
    } else {
        Ok(Expansion { span: (start, end), non_contiguous: true })
    }
}

/// All tokens dominated by `root`, including itself.
pub fn subtree(sentence: &Sentence, root: usize) -> Vec<usize> {
    (0..sentence.tokens.len())
        .filter(|&i| {
            let mut cur = i;
            loop {
                if cur == root {
                    return true;
                }
                match sentence.tokens[cur].head {
                    Some(h) => cur = h,
                    None => return false,
                }
            }
        })
        .collect()
}
