//! Retrieval against a brute-force full-sort oracle, and metric-ranking equivalence.

use knn_calibrate::embedstore::normalize_vector;
use knn_calibrate::{build_store, retrieve, EmbeddingStore, Metric, RawEmbeddings};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_store(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> EmbeddingStore {
    let vectors = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes as u32)).collect();
    build_store(RawEmbeddings::new(vectors, dim, labels, classes).unwrap()).unwrap()
}

fn oracle(store: &EmbeddingStore, q: &[f32], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..store.len())
        .filter(|&i| Some(i) != exclude)
        .map(|i| {
            let mut acc = 0.0f64;
            for (a, b) in q.iter().zip(store.row(i)) {
                let d = *a as f64 - *b as f64;
                acc += d * d;
            }
            (i, acc.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn retrieve_matches_full_sort(
        seed in any::<u64>(),
        n in 1usize..=500,
        dim in 1usize..=64,
        k in 1usize..40,
        exclude_first in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = random_store(&mut rng, n, dim, 3);
        let q = loop {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Some(u) = normalize_vector(&v) { break u; }
        };
        let exclude = exclude_first.then_some(0);
        let got = retrieve(&store, &q, k, Metric::Euclidean, exclude).unwrap();
        let actual: Vec<_> = got.entries.iter().map(|e| (e.index, e.distance)).collect();
        prop_assert_eq!(actual, oracle(&store, &q, k, exclude));
        for e in &got.entries {
            prop_assert_eq!(e.label, store.label(e.index));
        }
    }
}

#[test]
fn duplicated_rows_keep_index_order() {
    let row = [0.3f32, -0.2, 0.9];
    let raw = RawEmbeddings::new(row.repeat(6), 3, vec![0, 1, 0, 1, 0, 1], 2).unwrap();
    let store = build_store(raw).unwrap();
    let got = retrieve(&store, store.row(0), 4, Metric::Cosine, Some(2)).unwrap();
    let idx: Vec<_> = got.entries.iter().map(|e| e.index).collect();
    assert_eq!(idx, vec![0, 1, 3, 4]);
}

#[test]
fn euclidean_and_cosine_rank_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let store = random_store(&mut rng, 300, 16, 4);
    for _ in 0..100 {
        let q = normalize_vector(&(0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>()).unwrap();
        let e = retrieve(&store, &q, 16, Metric::Euclidean, None).unwrap();
        let c = retrieve(&store, &q, 16, Metric::Cosine, None).unwrap();
        let mut ei: Vec<_> = e.entries.iter().map(|n| n.index).collect();
        let mut ci: Vec<_> = c.entries.iter().map(|n| n.index).collect();
        ei.sort_unstable();
        ci.sort_unstable();
        assert_eq!(ei, ci);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let store = random_store(&mut rng, 2000, 8, 3);
    let q = store.row(17).to_vec();
    let multi = retrieve(&store, &q, 32, Metric::Euclidean, Some(17)).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let single = pool.install(|| retrieve(&store, &q, 32, Metric::Euclidean, Some(17)).unwrap());
    assert_eq!(multi, single);
}
