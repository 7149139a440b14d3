//! Random syntactic patterns for matcher equivalence checks.
//!
//! A pattern is grown as a connected subtree around a random token of a
//! random corpus sentence, so most samples match somewhere; constraints,
//! edge labels and node order are then perturbed so that plenty of samples
//! match rarely or never.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Corpus, Sentence};
use crate::querylang::{NodeConstraint, PatternEdge, PatternNode, SyntacticPattern};

fn neighbors(s: &Sentence, t: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..s.tokens.len()).filter(|&c| s.tokens[c].head == Some(t)).collect();
    out.extend(s.tokens[t].head);
    out
}

fn flip_case(text: &str, rng: &mut impl Rng) -> String {
    if rng.random_bool(0.2) {
        text.to_uppercase()
    } else {
        text.to_string()
    }
}

/// Sample a valid pattern with 1..=`max_nodes` nodes. Returns `None` for an
/// empty corpus.
pub fn sample_pattern(corpus: &Corpus, max_nodes: usize, rng: &mut impl Rng) -> Option<SyntacticPattern> {
    let s = corpus.sentences().iter().filter(|s| !s.tokens.is_empty()).collect::<Vec<_>>().choose(rng).copied()?;
    let want = rng.random_range(1..=max_nodes.max(1));
    let mut members = BTreeSet::from([rng.random_range(0..s.tokens.len())]);
    while members.len() < want {
        let frontier: Vec<usize> = members
            .iter()
            .flat_map(|&t| neighbors(s, t))
            .filter(|t| !members.contains(t))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        match frontier.choose(rng) {
            Some(&t) => {
                members.insert(t);
            }
            None => break,
        }
    }
    let mut order: Vec<usize> = members.iter().copied().collect();
    order.shuffle(rng);
    let node_of = |t: usize| order.iter().position(|&x| x == t).unwrap();

    let labels: Vec<&str> = corpus.sentences().iter().flat_map(|s| s.entities.iter().map(|e| e.label.as_str())).take(64).collect();
    let deprels: Vec<&str> = s.tokens.iter().map(|t| t.deprel.as_str()).collect();
    let mut captures = 0;
    let nodes = order
        .iter()
        .map(|&t| {
            let tok = &s.tokens[t];
            let constraint = match rng.random_range(0..4) {
                0 => NodeConstraint::Wildcard,
                1 => NodeConstraint::Word { value: flip_case(&tok.surface, rng) },
                2 => NodeConstraint::Lemma { value: flip_case(&tok.lemma, rng) },
                _ => NodeConstraint::LemmaWord { lemma: tok.lemma.clone(), word: flip_case(&tok.surface, rng) },
            };
            let entity = if rng.random_bool(0.25) {
                s.entity_at(t).map(|e| e.label.clone()).or_else(|| labels.choose(rng).map(|l| l.to_string()))
            } else {
                None
            };
            let capture = rng.random_bool(0.5).then(|| {
                captures += 1;
                format!("c{captures}")
            });
            PatternNode { constraint, entity, capture }
        })
        .collect();
    let mut edges = Vec::new();
    let mut root = None;
    for &t in &order {
        match s.tokens[t].head.filter(|h| members.contains(h)) {
            Some(h) => {
                let deprel = if rng.random_bool(0.1) {
                    deprels.choose(rng).unwrap().to_string()
                } else {
                    s.tokens[t].deprel.clone()
                };
                edges.push(PatternEdge { parent: node_of(h), child: node_of(t), deprel });
            }
            None => root = Some(node_of(t)),
        }
    }
    let pattern = SyntacticPattern { nodes, edges, root: root.expect("subtree has a top node") };
    debug_assert!(pattern.validate().is_ok());
    Some(pattern)
}

/// `n` points in `dim` dimensions drawn from an equal-weight mixture of
/// `components` unit-variance Gaussians whose centers are N(0, spread²).
pub fn gaussian_mixture(n: usize, dim: usize, components: usize, spread: f32, rng: &mut impl Rng) -> Vec<Vec<f32>> {
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    let centers: Vec<Vec<f32>> =
        (0..components.max(1)).map(|_| (0..dim).map(|_| spread * normal.sample(rng)).collect()).collect();
    (0..n)
        .map(|_| {
            let c = centers.choose(rng).expect("at least one center");
            c.iter().map(|x| x + normal.sample(rng)).collect()
        })
        .collect()
}

/// Zero-mean data with a planted covariance spectrum: `n` rows in
/// `variances.len()` dimensions, variance `variances[i]` along the i-th row
/// of a random orthonormal basis (also returned).
pub fn planted_spectrum(n: usize, variances: &[f64], rng: &mut impl Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = variances.len();
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    // Gram-Schmidt on Gaussian vectors
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let data = (0..n)
        .map(|_| {
            let mut row = vec![0.0; d];
            for (b, &var) in basis.iter().zip(variances) {
                let c = var.sqrt() * normal.sample(rng);
                row.iter_mut().zip(b).for_each(|(r, x)| *r += c * x);
            }
            row
        })
        .collect();
    (data, basis)
}
