use nes_core::evalharness::gaussian_mixture;
use nes_core::knn::{build_exact, build_exact_with, build_ivf, search_exact, search_ivf, Neighbor, SearchIndex};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent reference: full scan, f32 accumulation in index order,
/// stable sort by distance so equal distances keep id order.
fn naive(ids: &[u64], data: &[Vec<f32>], q: &[f32], k: usize) -> Vec<(u64, f32)> {
    let mut all: Vec<(u64, f32)> = ids
        .iter()
        .zip(data)
        .map(|(&id, v)| {
            let mut s = 0.0f32;
            for i in 0..q.len() {
                s += (q[i] - v[i]) * (q[i] - v[i]);
            }
            (id, s)
        })
        .collect();
    all.sort_by_key(|a| a.0);
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    all.truncate(k);
    all
}

fn pairs(n: &[Neighbor]) -> Vec<(u64, f32)> {
    n.iter().map(|x| (x.id, x.distance)).collect()
}

fn uniform(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect()
}

#[test]
fn exact_equals_naive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = uniform(1000, 64, &mut rng);
    let ids: Vec<u64> = (0..1000).map(|i| (i * 7919) % 1000).collect();
    let index = build_exact(&ids, &data).unwrap();
    for _ in 0..50 {
        let q: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        for k in [1, 10, 1000, 2000] {
            assert_eq!(pairs(&search_exact(&index, &q, k).unwrap()), naive(&ids, &data, &q, k));
        }
    }
}

#[test]
fn duplicate_vectors_tie_by_id() {
    let v = vec![vec![1.0f32, 2.0]; 5];
    let ids = [9, 3, 7, 1, 5];
    let index = build_exact(&ids, &v).unwrap();
    let got: Vec<u64> = search_exact(&index, &[0.0, 0.0], 5).unwrap().iter().map(|n| n.id).collect();
    assert_eq!(got, vec![1, 3, 5, 7, 9]);
}

#[test]
fn ivf_full_probe_equals_exact_and_lists_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data = gaussian_mixture(2000, 16, 12, 4.0, &mut rng);
    let ids: Vec<u64> = (0..2000).collect();
    let ivf = build_ivf(&ids, &data, 16, 10, 5).unwrap();
    let mut all: Vec<u64> = ivf.lists().concat();
    all.sort();
    assert_eq!(all, ids);
    for _ in 0..30 {
        let q: Vec<f32> = (0..16).map(|_| rng.random_range(-6.0f32..6.0)).collect();
        assert_eq!(search_ivf(&ivf, &q, 10, 16).unwrap(), search_exact(ivf.exact(), &q, 10).unwrap());
    }
    assert!(search_ivf(&ivf, &[0.0; 16], 10, 0).is_err());
    assert!(search_ivf(&ivf, &[0.0; 16], 10, 17).is_err());
}

#[test]
fn ivf_recall_on_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let data = gaussian_mixture(10_000, 32, 64, 3.0, &mut rng);
    let ids: Vec<u64> = (0..10_000).collect();
    let ivf = build_ivf(&ids, &data, 64, 20, 42).unwrap();
    let queries = gaussian_mixture(50, 32, 64, 3.0, &mut ChaCha8Rng::seed_from_u64(42));
    let mut hits = 0;
    for q in &queries {
        let truth: Vec<u64> = search_exact(ivf.exact(), q, 10).unwrap().iter().map(|n| n.id).collect();
        let got = search_ivf(&ivf, q, 10, 8).unwrap();
        hits += got.iter().filter(|n| truth.contains(&n.id)).count();
    }
    let recall = hits as f64 / (10 * queries.len()) as f64;
    assert!(recall >= 0.8, "recall {recall}");
}

#[test]
fn snapshots_round_trip_both_tiers() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = uniform(300, 12, &mut rng);
    let ids: Vec<u64> = (100..400).collect();
    let dir = tempfile::tempdir().unwrap();
    let exact = SearchIndex::Exact(build_exact_with(&ids, &data, true).unwrap());
    let ivf = SearchIndex::Ivf(build_ivf(&ids, &data, 8, 5, 1).unwrap());
    for (name, idx) in [("e.nesi", exact), ("i.nesi", ivf)] {
        let path = dir.path().join(name);
        idx.save(&path).unwrap();
        let back = SearchIndex::load(&path).unwrap();
        assert_eq!(back, idx);
        let q = vec![0.25f32; 12];
        assert_eq!(back.search(&q, 7, None).unwrap(), idx.search(&q, 7, None).unwrap());
        let bytes = std::fs::read(&path).unwrap();
        assert!(SearchIndex::read_snapshot(&bytes[..bytes.len() - 3]).is_err());
    }
}

#[test]
fn ivf_build_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = uniform(500, 8, &mut rng);
    let ids: Vec<u64> = (0..500).collect();
    let a = build_ivf(&ids, &data, 10, 8, 77).unwrap();
    let b = build_ivf(&ids, &data, 10, 8, 77).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn results_sorted_bounded_and_distinct(seed in any::<u64>(), n in 1usize..80, k in 0usize..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // coarse grid values produce many exact ties
        let data: Vec<Vec<f32>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(0..3) as f32).collect()).collect();
        let ids: Vec<u64> = (0..n as u64).rev().collect();
        let index = build_exact(&ids, &data).unwrap();
        let q: Vec<f32> = (0..4).map(|_| rng.random_range(0..3) as f32).collect();
        let got = search_exact(&index, &q, k).unwrap();
        prop_assert_eq!(got.len(), k.min(n));
        prop_assert!(got.windows(2).all(|w| (w[0].distance, w[0].id) < (w[1].distance, w[1].id)));
        prop_assert_eq!(pairs(&got), naive(&ids, &data, &q, k));
    }
}
