use astrolens::corpus::{bin_values, BinAssignment, BinStrategy};
use astrolens::purity::*;
use astrolens::synth::two_blobs;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform_points(seed: u64, n: usize, d: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.random::<f64>())
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i:04}")).collect()
}

/// Bins given directly as labels, one bin per distinct label value.
fn labels_to_bins(labels: &[usize]) -> BinAssignment {
    let n_bins = labels.iter().max().unwrap() + 1;
    let edges: Vec<f64> = (0..=n_bins).map(|b| b as f64 - 0.5).collect();
    let values: Vec<(String, f64)> = ids(labels.len()).into_iter().zip(labels.iter().map(|&l| l as f64)).collect();
    bin_values("label", &values, n_bins, BinStrategy::FixedEdges { edges }).unwrap()
}

/// Full sort of all pairwise distances.
fn knn_oracle(points: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = points.nrows();
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = (0..points.ncols())
                        .map(|c| (points[[i, c]] - points[[j, c]]).powi(2))
                        .sum();
                    (d.sqrt(), j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

#[test]
fn seeded_set_matches_exhaustive_sort() {
    let p = uniform_points(30, 30, 2);
    assert_eq!(knn_indices(p.view(), 5).unwrap(), knn_oracle(&p, 5));
}

#[test]
fn separated_blobs_are_pure() {
    let (x, labels) = two_blobs(3, 200, 2, 10.0);
    let r = knn_purity(&ids(400), x.view(), &labels_to_bins(&labels), 10, Space::Embedding).unwrap();
    assert!(r.purity >= 0.99, "{}", r.purity);
    assert_eq!(r.n_used, 400);
}

#[test]
fn random_labels_give_chance_purity() {
    let mut total = 0.0;
    for seed in 0..20u64 {
        let x = uniform_points(seed, 200, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..2)).collect();
        total += knn_purity(&ids(200), x.view(), &labels_to_bins(&labels), 10, Space::Projection)
            .unwrap()
            .purity;
    }
    let mean = total / 20.0;
    assert!((mean - 0.5).abs() <= 0.05, "{mean}");
}

#[test]
fn purity_needs_more_points_than_k() {
    let x = array![[0.0], [1.0], [2.0]];
    let bins = labels_to_bins(&[0, 1, 0]);
    assert_eq!(
        knn_purity(&ids(3), x.view(), &bins, 3, Space::Embedding).unwrap_err(),
        PurityError::TooFewPoints { n: 3, k: 3 }
    );
}

#[test]
fn report_serializes() {
    let x = uniform_points(1, 20, 2);
    let r = knn_purity(&ids(20), x.view(), &labels_to_bins(&[0, 1].repeat(10)), 3, Space::Projection).unwrap();
    let json = serde_json::to_string(&r).unwrap();
    let back: PurityReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
}

fn rotation(theta: f64) -> Array2<f64> {
    array![[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matches_oracle(seed in 0u64..10_000, n in 6usize..=200, k in 1usize..6) {
        let p = uniform_points(seed, n, 3);
        prop_assert_eq!(knn_indices(p.view(), k).unwrap(), knn_oracle(&p, k));
    }

    #[test]
    fn rigid_motion_invariance(seed in 0u64..10_000, theta in 0.0f64..6.28, dx in -100.0f64..100.0, dy in -100.0f64..100.0) {
        let x = uniform_points(seed, 60, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
        let bins = labels_to_bins(&labels);
        let moved = x.dot(&rotation(theta)) + &array![dx, dy];
        let a = knn_purity(&ids(60), x.view(), &bins, 5, Space::Projection).unwrap();
        let b = knn_purity(&ids(60), moved.view(), &bins, 5, Space::Projection).unwrap();
        prop_assert!((a.purity - b.purity).abs() <= 1e-9);
    }

    #[test]
    fn relabeling_invariance(seed in 0u64..10_000, perm in Just([2usize, 0, 1]).prop_shuffle()) {
        let x = uniform_points(seed, 50, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..50).map(|_| rng.random_range(0..3)).collect();
        let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let a = knn_purity(&ids(50), x.view(), &labels_to_bins(&labels), 4, Space::Projection).unwrap();
        let b = knn_purity(&ids(50), x.view(), &labels_to_bins(&relabeled), 4, Space::Projection).unwrap();
        prop_assert_eq!(a.purity, b.purity);
    }

    #[test]
    fn purity_bounds_and_mean(seed in 0u64..10_000, n_bins in 1usize..4) {
        let x = uniform_points(seed, 40, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<(String, f64)> = ids(40).into_iter().map(|id| (id, rng.random::<f64>())).collect();
        let bins = bin_values("v", &values, n_bins, BinStrategy::Quantile).unwrap();
        let r = knn_purity(&ids(40), x.view(), &bins, 5, Space::Projection).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.purity));
        let mean = r.per_source.iter().map(|(_, p)| p).sum::<f64>() / r.per_source.len() as f64;
        prop_assert_eq!(mean, r.purity);
        prop_assert_eq!(r.n_used, bins.labels.len());
        if n_bins == 1 {
            prop_assert_eq!(r.purity, 1.0);
        }
    }
}
