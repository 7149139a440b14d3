//! Capture-slot query language.
//!
//! Tokens are split on whitespace:
//!
//! * `$word` is an anchor (must match exactly, lemma and word form);
//! * `name:word` captures the token under `name`, optionally entity
//!   constrained as `name:word:entity=LABEL`;
//! * `:entity=LABEL` (standalone) captures any entity of that type, and
//!   `name:entity=LABEL` does the same under an explicit name;
//! * anything else is a plain word.
//!
//! A query with at least one anchor or token capture is a by-example query;
//! otherwise it is boolean. A by-example query may carry the parse of its
//! example sentence as a CoNLL-U block after a `|||` separator.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, Corpus, IngestOptions, LexKey, Sentence};

pub const PARSE_SEPARATOR: &str = "|||";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("EmptyQuery")]
    EmptyQuery,
    #[error("DuplicateCaptureName: {0}")]
    DuplicateCaptureName(String),
    #[error("BadSyntax: {0}")]
    BadSyntax(String),
    #[error("TokenMismatch: {0}")]
    TokenMismatch(String),
    #[error("NoMarkedTokens")]
    NoMarkedTokens,
    #[error("NoParseAvailable")]
    NoParseAvailable,
}

impl QueryError {
    pub fn code(&self) -> &'static str {
        match self {
            QueryError::EmptyQuery => "EmptyQuery",
            QueryError::DuplicateCaptureName(_) => "DuplicateCaptureName",
            QueryError::BadSyntax(_) => "BadSyntax",
            QueryError::TokenMismatch(_) => "TokenMismatch",
            QueryError::NoMarkedTokens => "NoMarkedTokens",
            QueryError::NoParseAvailable => "NoParseAvailable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenRole {
    Plain,
    Anchor,
    Capture,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryToken {
    pub surface: String,
    pub role: TokenRole,
    pub capture_name: Option<String>,
    pub entity_constraint: Option<String>,
}

impl QueryToken {
    pub fn plain(surface: &str) -> Self {
        QueryToken { surface: surface.into(), role: TokenRole::Plain, capture_name: None, entity_constraint: None }
    }

    pub fn anchor(surface: &str) -> Self {
        QueryToken { surface: surface.into(), role: TokenRole::Anchor, capture_name: None, entity_constraint: None }
    }

    pub fn capture(name: &str, surface: &str) -> Self {
        QueryToken {
            surface: surface.into(),
            role: TokenRole::Capture,
            capture_name: Some(name.into()),
            entity_constraint: None,
        }
    }

    fn render(&self) -> String {
        match self.role {
            TokenRole::Plain => self.surface.clone(),
            TokenRole::Anchor => format!("${}", self.surface),
            TokenRole::Capture => {
                let mut s = format!("{}:{}", self.capture_name.as_deref().unwrap_or(""), self.surface);
                if let Some(label) = &self.entity_constraint {
                    s.push_str(":entity=");
                    s.push_str(label);
                }
                s
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByExampleQuery {
    pub tokens: Vec<QueryToken>,
    pub example_parse: Option<Sentence>,
}

impl ByExampleQuery {
    pub fn capture_names(&self) -> Vec<&str> {
        self.tokens.iter().filter_map(|t| t.capture_name.as_deref()).collect()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCapture {
    pub name: String,
    pub label: String,
    /// Written as a bare `:entity=LABEL`; the name was generated.
    pub anonymous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BooleanQuery {
    pub required_terms: Vec<String>,
    pub capture_constraints: Vec<EntityCapture>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    Boolean(BooleanQuery),
    ByExample(ByExampleQuery),
}

impl Query {
    /// Canonical text form; `parse_query(q.render()) == q`.
    pub fn render(&self) -> String {
        match self {
            Query::Boolean(b) => {
                let mut parts: Vec<String> = b.required_terms.clone();
                for c in &b.capture_constraints {
                    if c.anonymous {
                        parts.push(format!(":entity={}", c.label));
                    } else {
                        parts.push(format!("{}:entity={}", c.name, c.label));
                    }
                }
                parts.join(" ")
            }
            Query::ByExample(q) => {
                let mut s = q.tokens.iter().map(QueryToken::render).collect::<Vec<_>>().join(" ");
                if let Some(parse) = &q.example_parse {
                    s.push(' ');
                    s.push_str(PARSE_SEPARATOR);
                    s.push('\n');
                    s.push_str(&corpus::sentence_to_conllu(parse));
                }
                s
            }
        }
    }
}

fn is_capture_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

enum Piece {
    Token(QueryToken),
    Entity { name: Option<String>, label: String },
}

fn parse_piece(raw: &str) -> Result<Piece, QueryError> {
    let bad = |why: &str| QueryError::BadSyntax(format!("{raw:?}: {why}"));
    if let Some(word) = raw.strip_prefix('$') {
        if word.is_empty() {
            return Err(bad("anchor without a word"));
        }
        return Ok(Piece::Token(QueryToken::anchor(word)));
    }
    if let Some(rest) = raw.strip_prefix(':') {
        let label = rest.strip_prefix("entity=").ok_or_else(|| bad("expected :entity=LABEL"))?;
        if label.is_empty() {
            return Err(bad("empty entity label"));
        }
        return Ok(Piece::Entity { name: None, label: label.into() });
    }
    if let Some((name, rest)) = raw.split_once(':') {
        if is_capture_name(name) {
            if rest.is_empty() {
                return Err(bad("capture without a word"));
            }
            if let Some(label) = rest.strip_prefix("entity=") {
                if label.is_empty() {
                    return Err(bad("empty entity label"));
                }
                return Ok(Piece::Entity { name: Some(name.into()), label: label.into() });
            }
            let (word, entity) = match rest.split_once(":entity=") {
                Some((w, l)) if !l.is_empty() => (w, Some(l.to_string())),
                Some(_) => return Err(bad("empty entity label")),
                None => (rest, None),
            };
            if word.is_empty() {
                return Err(bad("capture without a word"));
            }
            let mut tok = QueryToken::capture(name, word);
            tok.entity_constraint = entity;
            return Ok(Piece::Token(tok));
        }
    }
    Ok(Piece::Token(QueryToken::plain(raw)))
}

pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let (query_text, parse_text) = match text.split_once(PARSE_SEPARATOR) {
        Some((q, p)) => (q, Some(p)),
        None => (text, None),
    };
    let raw: Vec<&str> = query_text.split_whitespace().collect();
    if raw.is_empty() {
        return Err(QueryError::EmptyQuery);
    }
    let pieces = raw.iter().map(|r| parse_piece(r)).collect::<Result<Vec<_>, _>>()?;

    let by_example = pieces
        .iter()
        .any(|p| matches!(p, Piece::Token(t) if t.role != TokenRole::Plain));

    if by_example {
        let mut tokens = Vec::with_capacity(pieces.len());
        for p in pieces {
            match p {
                Piece::Token(t) => tokens.push(t),
                Piece::Entity { .. } => {
                    return Err(QueryError::BadSyntax(
                        "standalone entity captures are not allowed in by-example queries".into(),
                    ))
                }
            }
        }
        let mut seen = HashSet::new();
        for name in tokens.iter().filter_map(|t| t.capture_name.as_deref()) {
            if !seen.insert(name) {
                return Err(QueryError::DuplicateCaptureName(name.into()));
            }
        }
        if seen.is_empty() {
            return Err(QueryError::BadSyntax("by-example query needs at least one capture".into()));
        }
        let constrained = tokens
            .iter()
            .any(|t| t.role == TokenRole::Anchor || t.entity_constraint.is_some());
        if !constrained {
            return Err(QueryError::BadSyntax(
                "by-example query needs an anchor or an entity constraint".into(),
            ));
        }
        let example_parse = match parse_text {
            Some(block) => Some(parse_attached(block)?),
            None => None,
        };
        return Ok(Query::ByExample(ByExampleQuery { tokens, example_parse }));
    }

    if parse_text.is_some() {
        return Err(QueryError::BadSyntax("attached parse requires a by-example query".into()));
    }
    let mut required_terms = Vec::new();
    let mut captures: Vec<EntityCapture> = Vec::new();
    let mut explicit = HashSet::new();
    for p in &pieces {
        if let Piece::Entity { name: Some(n), .. } = p {
            if !explicit.insert(n.clone()) {
                return Err(QueryError::DuplicateCaptureName(n.clone()));
            }
        }
    }
    let mut used: HashSet<String> = explicit.clone();
    for p in pieces {
        match p {
            Piece::Token(t) => required_terms.push(t.surface),
            Piece::Entity { name: Some(name), label } => {
                captures.push(EntityCapture { name, label, anonymous: false })
            }
            Piece::Entity { name: None, label } => {
                let base = label.to_lowercase();
                let mut name = base.clone();
                let mut k = 2;
                while used.contains(&name) {
                    name = format!("{base}{k}");
                    k += 1;
                }
                used.insert(name.clone());
                captures.push(EntityCapture { name, label, anonymous: true });
            }
        }
    }
    Ok(Query::Boolean(BooleanQuery { required_terms, capture_constraints: captures }))
}

fn parse_attached(block: &str) -> Result<Sentence, QueryError> {
    let corpus = corpus::ingest_conllu(block.trim_start_matches([' ', '\t']).as_bytes(), &IngestOptions::default())
        .map_err(|e| QueryError::BadSyntax(format!("attached parse: {e}")))?;
    match corpus.sentences() {
        [one] => Ok(one.clone()),
        other => Err(QueryError::BadSyntax(format!(
            "attached parse must hold exactly one sentence, found {}",
            other.len()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeConstraint {
    Wildcard,
    Word { value: String },
    Lemma { value: String },
    LemmaWord { lemma: String, word: String },
}

impl NodeConstraint {
    /// Case-insensitive exact comparison against a token.
    pub fn accepts(&self, token: &corpus::Token) -> bool {
        let eq = |a: &str, b: &str| a.to_lowercase() == b.to_lowercase();
        match self {
            NodeConstraint::Wildcard => true,
            NodeConstraint::Word { value } => eq(value, &token.surface),
            NodeConstraint::Lemma { value } => eq(value, &token.lemma),
            NodeConstraint::LemmaWord { lemma, word } => eq(lemma, &token.lemma) && eq(word, &token.surface),
        }
    }

    /// Lexicon key usable for candidate prefiltering.
    pub fn lex_key(&self) -> Option<LexKey<'_>> {
        match self {
            NodeConstraint::Wildcard => None,
            NodeConstraint::Word { value } => Some(LexKey::Word(value)),
            NodeConstraint::Lemma { value } => Some(LexKey::Lemma(value)),
            NodeConstraint::LemmaWord { lemma, .. } => Some(LexKey::Lemma(lemma)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternNode {
    pub constraint: NodeConstraint,
    pub entity: Option<String>,
    pub capture: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternEdge {
    pub parent: usize,
    pub child: usize,
    pub deprel: String,
}

/// Constraint tree matched against dependency parses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntacticPattern {
    pub nodes: Vec<PatternNode>,
    pub edges: Vec<PatternEdge>,
    pub root: usize,
}

impl SyntacticPattern {
    /// Edges must form a tree over all nodes rooted at `root`, and capture
    /// names must be unique.
    pub fn validate(&self) -> Result<(), QueryError> {
        let n = self.nodes.len();
        let bad = |why: String| QueryError::BadSyntax(format!("invalid pattern: {why}"));
        if n == 0 || self.root >= n {
            return Err(bad("no root".into()));
        }
        if self.edges.len() != n - 1 {
            return Err(bad(format!("{} edges for {} nodes", self.edges.len(), n)));
        }
        let mut parent = vec![None; n];
        for e in &self.edges {
            if e.parent >= n || e.child >= n || e.child == self.root || parent[e.child].is_some() {
                return Err(bad(format!("edge {}->{}", e.parent, e.child)));
            }
            parent[e.child] = Some(e.parent);
        }
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parent[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(bad("cycle".into()));
                }
            }
            if cur != self.root {
                return Err(bad("disconnected".into()));
            }
        }
        let mut seen = HashSet::new();
        for name in self.nodes.iter().filter_map(|x| x.capture.as_deref()) {
            if !seen.insert(name) {
                return Err(QueryError::DuplicateCaptureName(name.into()));
            }
        }
        Ok(())
    }

    pub fn capture_names(&self) -> Vec<&str> {
        self.nodes.iter().filter_map(|n| n.capture.as_deref()).collect()
    }

    /// Children of `node` in the pattern with their edge labels.
    pub fn children(&self, node: usize) -> impl Iterator<Item = (usize, &str)> {
        self.edges
            .iter()
            .filter(move |e| e.parent == node)
            .map(|e| (e.child, e.deprel.as_str()))
    }

    /// Node index → (parent node, edge label); `None` for the root.
    pub fn parents(&self) -> Vec<Option<(usize, &str)>> {
        let mut p = vec![None; self.nodes.len()];
        for e in &self.edges {
            p[e.child] = Some((e.parent, e.deprel.as_str()));
        }
        p
    }
}

/// Token index of every marked query token, ascending.
fn marked_tokens(query: &ByExampleQuery) -> Vec<usize> {
    query
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.role != TokenRole::Plain || t.entity_constraint.is_some())
        .map(|(i, _)| i)
        .collect()
}

fn ancestors(parse: &Sentence, idx: usize) -> Vec<usize> {
    let mut chain = vec![idx];
    let mut cur = idx;
    while let Some(h) = parse.tokens[cur].head {
        chain.push(h);
        cur = h;
    }
    chain
}

/// Build the minimal connected subtree of `parse` spanning every anchor and
/// capture token. Pattern nodes are ordered by token position; the returned
/// vector maps node index → token index.
pub fn derive_pattern_with_tokens(
    query: &ByExampleQuery,
    parse: &Sentence,
) -> Result<(SyntacticPattern, Vec<usize>), QueryError> {
    if query.tokens.len() != parse.tokens.len() {
        return Err(QueryError::TokenMismatch(format!(
            "query has {} tokens, parse has {}",
            query.tokens.len(),
            parse.tokens.len()
        )));
    }
    for (i, (q, t)) in query.tokens.iter().zip(&parse.tokens).enumerate() {
        if q.surface != t.surface {
            return Err(QueryError::TokenMismatch(format!(
                "token {i}: query {:?} vs parse {:?}",
                q.surface, t.surface
            )));
        }
    }
    let marked = marked_tokens(query);
    if marked.is_empty() {
        return Err(QueryError::NoMarkedTokens);
    }

    let chains: Vec<Vec<usize>> = marked.iter().map(|&m| ancestors(parse, m)).collect();
    // lowest common ancestor: deepest node shared by every root path
    let first: Vec<usize> = chains[0].iter().rev().copied().collect();
    let mut lca = first[0];
    for &cand in &first {
        if chains.iter().all(|c| c.contains(&cand)) {
            lca = cand;
        } else {
            break;
        }
    }
    let mut included = std::collections::BTreeSet::new();
    for chain in &chains {
        for &t in chain {
            included.insert(t);
            if t == lca {
                break;
            }
        }
    }
    let tokens: Vec<usize> = included.into_iter().collect();
    let node_of: BTreeMap<usize, usize> = tokens.iter().enumerate().map(|(n, &t)| (t, n)).collect();

    let nodes = tokens
        .iter()
        .map(|&t| {
            let q = &query.tokens[t];
            let tok = &parse.tokens[t];
            let constraint = match q.role {
                TokenRole::Anchor => NodeConstraint::LemmaWord { lemma: tok.lemma.clone(), word: tok.surface.clone() },
                TokenRole::Capture => NodeConstraint::Wildcard,
                TokenRole::Plain => NodeConstraint::Lemma { value: tok.lemma.clone() },
            };
            PatternNode { constraint, entity: q.entity_constraint.clone(), capture: q.capture_name.clone() }
        })
        .collect();
    let edges = tokens
        .iter()
        .filter(|&&t| t != lca)
        .map(|&t| {
            let head = parse.tokens[t].head.expect("non-root node has a head");
            PatternEdge { parent: node_of[&head], child: node_of[&t], deprel: parse.tokens[t].deprel.clone() }
        })
        .collect();
    let pattern = SyntacticPattern { nodes, edges, root: node_of[&lca] };
    Ok((pattern, tokens))
}

pub fn derive_pattern(query: &ByExampleQuery, parse: &Sentence) -> Result<SyntacticPattern, QueryError> {
    derive_pattern_with_tokens(query, parse).map(|(p, _)| p)
}

/// The attached parse, or else the first corpus sentence whose surface
/// tokens equal the query's.
pub fn resolve_example_parse(query: &ByExampleQuery, corpus: &Corpus) -> Result<Sentence, QueryError> {
    if let Some(parse) = &query.example_parse {
        return Ok(parse.clone());
    }
    let surfaces = query.surfaces();
    let first = surfaces.first().ok_or(QueryError::NoParseAvailable)?;
    for id in corpus.candidate_ids(LexKey::Word(first)) {
        let s = corpus.get_sentence(id).map_err(|_| QueryError::NoParseAvailable)?;
        if s.tokens.len() == surfaces.len() && s.tokens.iter().zip(&surfaces).all(|(t, q)| t.surface == *q) {
            return Ok(s.clone());
        }
    }
    Err(QueryError::NoParseAvailable)
}

/// Parse `text` as a by-example query and derive its pattern against the
/// attached or corpus-resolved parse.
pub fn compile_by_example(text: &str, corpus: &Corpus) -> Result<(ByExampleQuery, SyntacticPattern), QueryError> {
    match parse_query(text)? {
        Query::ByExample(q) => {
            let parse = resolve_example_parse(&q, corpus)?;
            let pattern = derive_pattern(&q, &parse)?;
            Ok((q, pattern))
        }
        Query::Boolean(_) => Err(QueryError::BadSyntax("expected a by-example query".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;

    fn sentence(tokens: Vec<Token>) -> Sentence {
        let text = tokens.iter().map(|t| t.surface.clone()).collect::<Vec<_>>().join(" ");
        Sentence { id: 0, tokens, entities: vec![], doc_id: String::new(), text }
    }

    fn x_causes_y() -> Sentence {
        sentence(vec![
            Token::new("X", "x", "PROPN", Some(1), "nsubj"),
            Token::new("causes", "cause", "VERB", None, "root"),
            Token::new("Y", "y", "PROPN", Some(1), "obj"),
        ])
    }

    fn risk_factor() -> Sentence {
        // something is a risk factor for stroke
        sentence(vec![
            Token::new("something", "something", "PRON", Some(4), "nsubj"),
            Token::new("is", "be", "AUX", Some(4), "cop"),
            Token::new("a", "a", "DET", Some(4), "det"),
            Token::new("risk", "risk", "NOUN", Some(4), "compound"),
            Token::new("factor", "factor", "NOUN", None, "root"),
            Token::new("for", "for", "ADP", Some(6), "case"),
            Token::new("stroke", "stroke", "NOUN", Some(4), "nmod"),
        ])
    }

    fn by_example(text: &str) -> ByExampleQuery {
        match parse_query(text).unwrap() {
            Query::ByExample(q) => q,
            other => panic!("expected by-example, got {other:?}"),
        }
    }

    #[test]
    fn risk_factor_query_parses() {
        let q = by_example("arg1:something is a $risk $factor for $stroke");
        let anchors: Vec<&str> = q
            .tokens
            .iter()
            .filter(|t| t.role == TokenRole::Anchor)
            .map(|t| t.surface.as_str())
            .collect();
        assert_eq!(anchors, ["risk", "factor", "stroke"]);
        assert_eq!(q.tokens[0].capture_name.as_deref(), Some("arg1"));
        assert_eq!(q.tokens[0].surface, "something");
        assert_eq!(q.surfaces().len(), 7);
    }

    #[test]
    fn boolean_entity_query() {
        let Query::Boolean(b) = parse_query("Bacteremia treatment :entity=CHEMICAL").unwrap() else {
            panic!("expected boolean")
        };
        assert_eq!(b.required_terms, ["Bacteremia", "treatment"]);
        assert_eq!(b.capture_constraints.len(), 1);
        assert_eq!(b.capture_constraints[0].label, "CHEMICAL");
        assert!(b.capture_constraints[0].anonymous);
    }

    #[test]
    fn syntax_errors() {
        assert_eq!(parse_query(""), Err(QueryError::EmptyQuery));
        assert_eq!(parse_query("   "), Err(QueryError::EmptyQuery));
        assert_eq!(parse_query("a1:x a1:y $z").unwrap_err().code(), "DuplicateCaptureName");
        assert_eq!(parse_query("name: $x").unwrap_err().code(), "BadSyntax");
        assert_eq!(parse_query("$ foo").unwrap_err().code(), "BadSyntax");
        assert_eq!(parse_query(":chem").unwrap_err().code(), "BadSyntax");
        assert_eq!(parse_query("a1:x $y :entity=GENE").unwrap_err().code(), "BadSyntax");
        // capture without any anchor or entity constraint
        assert_eq!(parse_query("a1:x causes a2:y").unwrap_err().code(), "BadSyntax");
    }

    #[test]
    fn entity_constrained_capture_token() {
        let q = by_example("drug:aspirin:entity=CHEMICAL treats a2:pain");
        assert_eq!(q.tokens[0].entity_constraint.as_deref(), Some("CHEMICAL"));
        assert_eq!(q.tokens[0].surface, "aspirin");
    }

    #[test]
    fn anonymous_capture_names_are_unique() {
        let Query::Boolean(b) = parse_query(":entity=CHEMICAL chemical:entity=GENE :entity=CHEMICAL").unwrap() else {
            panic!()
        };
        let names: Vec<_> = b.capture_constraints.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["chemical2", "chemical", "chemical3"]);
    }

    #[test]
    fn render_is_canonical() {
        for text in [
            "arg1:something is a $risk $factor for $stroke",
            "Bacteremia treatment :entity=CHEMICAL",
            "drug:aspirin:entity=CHEMICAL $treats a2:pain",
            "x d:entity=DISEASE",
        ] {
            assert_eq!(parse_query(text).unwrap().render(), text);
        }
    }

    #[test]
    fn attached_parse_round_trips() {
        let mut parse = x_causes_y();
        parse.text = "X causes Y".into();
        let q = Query::ByExample(ByExampleQuery {
            tokens: vec![QueryToken::capture("a1", "X"), QueryToken::anchor("causes"), QueryToken::capture("a2", "Y")],
            example_parse: Some(parse.clone()),
        });
        let text = q.render();
        assert!(text.starts_with("a1:X $causes a2:Y |||\n"));
        let back = parse_query(&text).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn derive_three_node_pattern() {
        let q = by_example("a1:X $causes a2:Y");
        let (p, toks) = derive_pattern_with_tokens(&q, &x_causes_y()).unwrap();
        assert_eq!(toks, [0, 1, 2]);
        assert_eq!(p.root, 1);
        assert_eq!(
            p.nodes[1].constraint,
            NodeConstraint::LemmaWord { lemma: "cause".into(), word: "causes".into() }
        );
        assert_eq!(p.nodes[0].constraint, NodeConstraint::Wildcard);
        assert_eq!(p.nodes[0].capture.as_deref(), Some("a1"));
        assert_eq!(p.nodes[2].capture.as_deref(), Some("a2"));
        let mut edges: Vec<_> = p.edges.iter().map(|e| (e.parent, e.child, e.deprel.as_str())).collect();
        edges.sort();
        assert_eq!(edges, [(1, 0, "nsubj"), (1, 2, "obj")]);
        p.validate().unwrap();
    }

    #[test]
    fn derive_risk_factor_pattern() {
        // factor heads risk, something and stroke: the minimal subtree holds
        // exactly those four tokens, rooted at factor.
        let q = by_example("arg:something is a $risk $factor for $stroke");
        let (p, toks) = derive_pattern_with_tokens(&q, &risk_factor()).unwrap();
        assert_eq!(toks, [0, 3, 4, 6]);
        assert_eq!(p.nodes.len(), 4);
        assert_eq!(toks[p.root], 4);
        assert_eq!(p.capture_names(), ["arg"]);
        p.validate().unwrap();
    }

    #[test]
    fn interior_nodes_constrain_lemma_only() {
        // a1 and a2 hang off different heads; the path passes through an
        // unmarked token.
        let s = sentence(vec![
            Token::new("A", "a", "PROPN", Some(1), "nsubj"),
            Token::new("said", "say", "VERB", None, "root"),
            Token::new("B", "b", "PROPN", Some(3), "nsubj"),
            Token::new("helps", "help", "VERB", Some(1), "ccomp"),
        ]);
        let q = by_example("a1:A $said a2:B helps");
        let (p, toks) = derive_pattern_with_tokens(&q, &s).unwrap();
        assert_eq!(toks, [0, 1, 2, 3]);
        assert_eq!(p.nodes[3].constraint, NodeConstraint::Lemma { value: "help".into() });
    }

    #[test]
    fn derive_errors() {
        let q = ByExampleQuery {
            tokens: vec![QueryToken::plain("X"), QueryToken::plain("causes"), QueryToken::plain("Y")],
            example_parse: None,
        };
        assert_eq!(derive_pattern(&q, &x_causes_y()), Err(QueryError::NoMarkedTokens));
        let q = by_example("a1:X $causes");
        assert_eq!(derive_pattern(&q, &x_causes_y()).unwrap_err().code(), "TokenMismatch");
        let q = by_example("a1:X $cause a2:Y");
        assert_eq!(derive_pattern(&q, &x_causes_y()).unwrap_err().code(), "TokenMismatch");
    }

    #[test]
    fn resolve_parse_sources() {
        let mut sentences = Vec::new();
        for i in 0..8u64 {
            let mut s = if i == 5 { x_causes_y() } else { risk_factor() };
            s.id = i;
            sentences.push(s);
        }
        let corpus = Corpus::from_sentences(sentences).unwrap();
        let q = by_example("a1:X $causes a2:Y");
        assert_eq!(resolve_example_parse(&q, &corpus).unwrap().id, 5);

        let mut attached = x_causes_y();
        attached.id = 42;
        let mut with = q.clone();
        with.example_parse = Some(attached);
        assert_eq!(resolve_example_parse(&with, &corpus).unwrap().id, 42);

        let q = by_example("a1:Z $causes a2:Y");
        assert_eq!(resolve_example_parse(&q, &corpus), Err(QueryError::NoParseAvailable));
    }
}
