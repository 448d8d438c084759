use nalgebra::DMatrix;
use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salient_core::shapefeat::{kshape_fit, presence, sbd, KernelPca};

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn brute_presence(x: &Array2<f64>, c: &Array2<f64>) -> f64 {
    let len = c.ncols();
    (0..=x.ncols() - len)
        .map(|t| {
            x.slice(s![.., t..t + len])
                .iter()
                .zip(c.iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Projections of the training rows from an eigendecomposition of the
/// double-centred kernel: column j is `sqrt(lambda_j) v_j`.
fn training_projection(z: &Array2<f64>, gamma: f64, n_components: usize) -> DMatrix<f64> {
    let n = z.nrows();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d: f64 = z.row(i).iter().zip(z.row(j).iter()).map(|(a, b)| (a - b).powi(2)).sum();
        (-gamma * d).exp()
    });
    let ones = DMatrix::from_element(n, n, 1.0 / n as f64);
    let kc = &k - &ones * &k - &k * &ones + &ones * &k * &ones;
    let eig = kc.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_fn(n, n_components, |i, c| {
        let o = order[c];
        eig.eigenvectors[(i, o)] * eig.eigenvalues[o].max(0.0).sqrt()
    })
}

#[test]
fn kpca_training_rows_project_like_the_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f = random_matrix(25, 4, &mut rng);
    let model = KernelPca::fit(f.view(), None, 3).unwrap();
    let projected = model.transform_rows(f.view()).unwrap();
    let oracle = training_projection(&model.train, model.gamma, 3);
    for c in 0..3 {
        let agree: f64 = (0..25).map(|i| projected[[i, c]] * oracle[(i, c)]).sum();
        let sign = agree.signum();
        for i in 0..25 {
            assert!(
                (projected[[i, c]] - sign * oracle[(i, c)]).abs() < 1e-8,
                "row {i} component {c}: {} vs {}",
                projected[[i, c]],
                sign * oracle[(i, c)]
            );
        }
    }
}

#[test]
fn sbd_of_a_shifted_copy_is_zero() {
    let a: Vec<f64> = (0..32).map(|i| (i as f64 * 0.4).sin() * (-(i as f64 - 16.0).powi(2) / 30.0).exp()).collect();
    let mut b = vec![0.0; 32];
    b[3..].copy_from_slice(&a[..29]);
    let (d, shift) = sbd(&a, &b);
    assert!(d < 1e-3, "{d}");
    assert_eq!(shift.abs(), 3);
}

#[test]
fn kshape_rejects_more_clusters_than_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let segs: Vec<Array2<f64>> = (0..3).map(|_| random_matrix(1, 10, &mut rng)).collect();
    assert!(kshape_fit(&segs, 4, 0, 10, 0.05).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sbd_is_sign_symmetric(seed in 0u64..10_000, m in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let na: Vec<f64> = a.iter().map(|v| -v).collect();
        let nb: Vec<f64> = b.iter().map(|v| -v).collect();
        let (d, _) = sbd(&a, &b);
        let (dn, _) = sbd(&na, &nb);
        prop_assert!((d - dn).abs() < 1e-12);
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&d));
        prop_assert!(sbd(&a, &a).0.abs() < 1e-9);
    }

    #[test]
    fn kshape_objective_never_increases(seed in 0u64..10_000, n in 6usize..20, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let segs: Vec<Array2<f64>> = (0..n).map(|_| random_matrix(2, 16, &mut rng)).collect();
        let model = kshape_fit(&segs, k, seed, 30, 0.08).unwrap();
        prop_assert_eq!(model.assignments.len(), n);
        prop_assert_eq!(model.centroids.len(), k);
        for w in model.objective.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "objective rose: {:?}", model.objective);
        }
    }

    #[test]
    fn presence_matches_brute_force(seed in 0u64..10_000, leads in 1usize..4, n in 4usize..60, frac in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = ((n as f64 * frac).ceil() as usize).clamp(1, n);
        let x = random_matrix(leads, n, &mut rng);
        let c = random_matrix(leads, len, &mut rng);
        let fast = presence(x.view(), c.view()).unwrap();
        let slow = brute_presence(&x, &c);
        prop_assert!((fast - slow).abs() < 1e-9 * (1.0 + slow), "{fast} vs {slow}");
    }

    #[test]
    fn kpca_transform_reproduces_training_projection(seed in 0u64..10_000, n in 6usize..20, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_matrix(n, d, &mut rng);
        let model = KernelPca::fit(f.view(), None, 2).unwrap();
        let projected = model.transform_rows(f.view()).unwrap();
        let kc = model.train.nrows();
        for c in 0..2 {
            let col = model.alphas.column(c);
            let lambda = model.eigenvalues[c];
            prop_assume!(lambda > 1e-6);
            let norm_sq: f64 = projected.column(c).iter().map(|v| v * v).sum();
            prop_assert!((norm_sq - lambda).abs() < 1e-8 * (1.0 + lambda), "{norm_sq} vs {lambda}");
            for i in 0..kc {
                prop_assert!((projected[[i, c]] - lambda * col[i]).abs() < 1e-8);
            }
        }
    }
}
