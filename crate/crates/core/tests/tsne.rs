use astrolens::llmclient::EmbeddingMatrix;
use astrolens::synth::two_blobs;
use astrolens::tsne::*;
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_matrix(seed: u64, n: usize, d: usize, scale: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    })
}

fn matrix(x: Array2<f64>) -> EmbeddingMatrix {
    let ids = (0..x.nrows()).map(|i| format!("r{i:03}")).collect();
    EmbeddingMatrix::new(ids, x, "test").unwrap()
}

/// KL(P || Q) with the Student-t kernel, written out directly.
fn kl_oracle(p: &Array2<f64>, y: ArrayView2<f64>) -> f64 {
    let n = y.nrows();
    let mut w = Array2::zeros((n, n));
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d2: f64 = (0..y.ncols()).map(|k| (y[[i, k]] - y[[j, k]]).powi(2)).sum();
                w[[i, j]] = 1.0 / (1.0 + d2);
                z += w[[i, j]];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && p[[i, j]] > 0.0 {
                kl += p[[i, j]] * (p[[i, j]] / (w[[i, j]] / z)).ln();
            }
        }
    }
    kl
}

fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

fn fd_gradient(p: &Array2<f64>, y: &Array2<f64>, h: f64) -> Array2<f64> {
    let mut g = Array2::zeros(y.raw_dim());
    for idx in ndarray::indices(y.raw_dim()) {
        let mut plus = y.clone();
        let mut minus = y.clone();
        plus[idx] += h;
        minus[idx] -= h;
        g[idx] = (kl_oracle(p, plus.view()) - kl_oracle(p, minus.view())) / (2.0 * h);
    }
    g
}

#[test]
fn realized_perplexity_matches_target() {
    for (seed, perp) in [(1u64, 5.0), (2, 10.0), (3, 20.0)] {
        let x = random_matrix(seed, 70, 6, 1.0);
        let p = conditional_affinities(x.view(), perp).unwrap();
        for (i, row) in p.outer_iter().enumerate() {
            assert_eq!(row[i], 0.0);
            assert!((row.sum() - 1.0).abs() < 1e-12);
            let bits: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
            let realized = 2f64.powf(bits);
            assert!((realized - perp).abs() / perp < 1e-5, "row {i}: {realized} vs {perp}");
        }
    }
}

#[test]
fn joint_affinities_symmetric_and_normalized() {
    let x = random_matrix(4, 40, 5, 1.0);
    let p = symmetrize(&conditional_affinities(x.view(), 8.0).unwrap(), 1e-12).unwrap();
    let asym = (&p - &p.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert_eq!(asym, 0.0);
    assert!((p.sum() - 1.0).abs() < 1e-9);
    for ((i, j), &v) in p.indexed_iter() {
        if i != j {
            assert!(v >= 1e-12 * 0.99);
        }
    }
}

#[test]
fn kl_gradient_matches_finite_differences() {
    for seed in 0..5u64 {
        let x = random_matrix(100 + seed, 15, 8, 1.0);
        let p = symmetrize(&conditional_affinities(x.view(), 4.0).unwrap(), 1e-12).unwrap();
        let y = random_matrix(200 + seed, 15, 2, 1.0);
        let (kl, grad) = kl_gradient(&p, y.view());
        assert!((kl - kl_oracle(&p, y.view())).abs() < 1e-10);
        let err = max_rel_err(&grad, &fd_gradient(&p, &y, 1e-5));
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn blobs_stay_separated() {
    let (x, labels) = two_blobs(11, 100, 50, 10.0);
    let cfg = TsneConfig::default();
    let r = run_tsne(&matrix(x), &cfg).unwrap();
    assert_eq!(r.kl_history.len(), cfg.n_iter);
    let nn = astrolens::purity::knn_indices(r.points.view(), 1).unwrap();
    let correct = nn.iter().enumerate().filter(|(i, nb)| labels[*i] == labels[nb[0]]).count();
    assert!(correct as f64 / labels.len() as f64 >= 0.99);
    let end_of_exaggeration = r.kl_history[cfg.early_exaggeration_iters - 1];
    assert!(*r.kl_history.last().unwrap() < end_of_exaggeration);
}

#[test]
fn runs_are_bit_identical_and_parallel_is_close() {
    let x = matrix(random_matrix(5, 60, 10, 1.0));
    let cfg = TsneConfig {
        perplexity: 10.0,
        n_iter: 300,
        ..TsneConfig::default()
    };
    let a = run_tsne(&x, &cfg).unwrap();
    let b = run_tsne(&x, &cfg).unwrap();
    assert_eq!(a, b);
    let par = run_tsne(&x, &TsneConfig { parallel: true, ..cfg }).unwrap();
    let diff = (&a.points - &par.points).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn perplexity_bound_uses_actual_n() {
    let x = matrix(random_matrix(6, 30, 3, 1.0));
    let err = run_tsne(&x, &TsneConfig::default()).unwrap_err();
    assert!(matches!(err, TsneError::InvalidPerplexity { n: 30, .. }), "{err}");
}

fn orthogonal(seed: u64, d: usize) -> Array2<f64> {
    // Gram-Schmidt on a random square matrix.
    let a = random_matrix(seed, d, d, 1.0);
    let mut q = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut v = a.column(j).to_owned();
        for k in 0..j {
            let qk = q.column(k).to_owned();
            let c = qk.dot(&v);
            v.scaled_add(-c, &qk);
        }
        let n = v.dot(&v).sqrt();
        q.column_mut(j).assign(&(v / n));
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn affinities_invariant_under_rigid_motion(seed in 0u64..1000, shift in -50.0f64..50.0) {
        let x = random_matrix(seed, 20, 4, 1.0);
        let moved = x.dot(&orthogonal(seed + 1, 4)) + shift;
        let p = conditional_affinities(x.view(), 5.0).unwrap();
        let q = conditional_affinities(moved.view(), 5.0).unwrap();
        let diff = (&p - &q).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(diff < 1e-9, "{}", diff);
    }

    #[test]
    fn joint_matrix_invariants(seed in 0u64..1000, perp in 1.5f64..5.0) {
        let x = random_matrix(seed, 16, 3, 2.0);
        let p = symmetrize(&conditional_affinities(x.view(), perp).unwrap(), 1e-12).unwrap();
        prop_assert!((p.sum() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!(p.indexed_iter().all(|((i, j), &v)| v == p[[j, i]]));
    }
}
