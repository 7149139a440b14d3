use std::collections::BTreeSet;

use nes_core::corpus::Corpus;
use nes_core::evalharness::{sample_pattern, synth_corpus, SynthSpec};
use nes_core::matcher::{brute_force_match, expand_capture, match_pattern, ExpandMode, Match};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(seed: u64, sentences: usize) -> Corpus {
    synth_corpus(&SynthSpec { sentences, seed, relations: 4, templates: 4, ..Default::default() }).unwrap().corpus
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn indexed_matcher_equals_brute_force(corpus_seed in 0u64..6, pattern_seed in any::<u64>()) {
        let corpus = corpus(corpus_seed, 150);
        let mut rng = ChaCha8Rng::seed_from_u64(pattern_seed);
        let pattern = sample_pattern(&corpus, 4, &mut rng).unwrap();
        let fast = match_pattern(&pattern, &corpus, None);
        let slow = brute_force_match(&pattern, &corpus);
        let a: BTreeSet<&Match> = fast.iter().collect();
        let b: BTreeSet<&Match> = slow.iter().collect();
        prop_assert_eq!(a, b);
        // no duplicates and sentence-ordered
        prop_assert_eq!(fast.len(), slow.len());
        prop_assert!(fast.windows(2).all(|w| (w[0].sentence_id, &w[0].matched_nodes) < (w[1].sentence_id, &w[1].matched_nodes)));
    }

    #[test]
    fn limit_is_a_prefix(pattern_seed in any::<u64>(), limit in 1usize..20) {
        let corpus = corpus(1, 150);
        let mut rng = ChaCha8Rng::seed_from_u64(pattern_seed);
        let pattern = sample_pattern(&corpus, 3, &mut rng).unwrap();
        let all = match_pattern(&pattern, &corpus, None);
        let some = match_pattern(&pattern, &corpus, Some(limit));
        prop_assert_eq!(&all[..limit.min(all.len())], &some[..]);
    }

    #[test]
    fn injective_and_constraint_respecting(pattern_seed in any::<u64>()) {
        let corpus = corpus(2, 150);
        let mut rng = ChaCha8Rng::seed_from_u64(pattern_seed);
        let pattern = sample_pattern(&corpus, 4, &mut rng).unwrap();
        for m in match_pattern(&pattern, &corpus, None) {
            let s = corpus.get_sentence(m.sentence_id).unwrap();
            let distinct: BTreeSet<usize> = m.matched_nodes.iter().copied().collect();
            prop_assert_eq!(distinct.len(), m.matched_nodes.len());
            for e in &pattern.edges {
                let child = &s.tokens[m.matched_nodes[e.child]];
                prop_assert_eq!(child.head, Some(m.matched_nodes[e.parent]));
                prop_assert_eq!(&child.deprel, &e.deprel);
            }
            for (i, node) in pattern.nodes.iter().enumerate() {
                prop_assert!(node.constraint.accepts(&s.tokens[m.matched_nodes[i]]));
                if let Some(name) = &node.capture {
                    let t = m.matched_nodes[i];
                    prop_assert_eq!(m.captures[name], (t, t + 1));
                    let sub = expand_capture(&m, s, name, ExpandMode::Subtree).unwrap();
                    prop_assert!(sub.span.0 <= t && t < sub.span.1);
                }
            }
        }
    }
}
