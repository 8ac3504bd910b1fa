use proptest::prelude::*;
use semshift::metric::{
    check_positive_definite, gaussian_kl, mahalanobis_distance, row_importance, GaussianPair,
};
use semshift::{Embedding, Error, MahalanobisMatrix, MetricMode};

/// Random PD matrix `B Bᵀ + εI`.
fn pd_matrix(d: usize, entries: &[f64], eps: f64) -> MahalanobisMatrix {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..d).map(|k| entries[i * d + k] * entries[j * d + k]).sum();
        }
        a[i * d + i] += eps;
    }
    MahalanobisMatrix::from_full(d, a).unwrap()
}

fn arb_pd(max_d: usize) -> impl Strategy<Value = MahalanobisMatrix> {
    (1..=max_d).prop_flat_map(|d| {
        prop::collection::vec(-2.0..2.0f64, d * d).prop_map(move |e| pd_matrix(d, &e, 0.1))
    })
}

fn arb_instance(max_d: usize) -> impl Strategy<Value = (MahalanobisMatrix, Vec<f64>, Vec<f64>)> {
    arb_pd(max_d).prop_flat_map(|a| {
        let d = a.dim();
        (
            Just(a),
            prop::collection::vec(-5.0..5.0f64, d),
            prop::collection::vec(-5.0..5.0f64, d),
        )
    })
}

fn emb(v: &[f64]) -> Embedding {
    Embedding::new(v.to_vec()).unwrap()
}

#[test]
fn distance_examples() {
    let i2 = MahalanobisMatrix::identity(2);
    assert_eq!(mahalanobis_distance(&i2, &emb(&[1.0, 0.0]), &emb(&[0.0, 0.0])).unwrap(), 1.0);
    let a = MahalanobisMatrix::from_full(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
    assert_eq!(a.distance(&[0.3, -1.2], &[0.3, -1.2]).unwrap(), 0.0);
    assert_eq!(a.distance(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 6.0);
    let diag = MahalanobisMatrix::from_diagonal(vec![2.0, 3.0]).unwrap();
    assert_eq!(diag.distance(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 5.0);
}

#[test]
fn distance_rejects_bad_input() {
    let a = MahalanobisMatrix::identity(2);
    assert!(matches!(a.distance(&[1.0], &[0.0, 0.0]), Err(Error::Shape { .. })));
    assert!(a.distance(&[f64::NAN, 0.0], &[0.0, 0.0]).is_err());
    assert!(Embedding::new(vec![f64::INFINITY]).is_err());
}

#[test]
fn pd_examples() {
    let r = check_positive_definite(&MahalanobisMatrix::identity(3)).unwrap();
    assert!(r.positive_definite);
    assert_eq!(r.min_pivot, 1.0);
    assert!(MahalanobisMatrix::from_full(2, vec![1.0, 0.0, 0.0, -1.0]).is_err());
    assert!(MahalanobisMatrix::from_full(2, vec![2.0, 1.0, 1.0, 2.0]).is_ok());
    assert!(MahalanobisMatrix::from_full(2, vec![2.0, 1.0, 1.1, 2.0]).is_err());
}

#[test]
fn kl_examples() {
    let pair = GaussianPair::centered(
        MahalanobisMatrix::identity(2),
        MahalanobisMatrix::identity(2).scaled(2.0).unwrap(),
    )
    .unwrap();
    // Independent closed form: ½(tr − d − ln det) with tr = 4, det = 4.
    let expected = 0.5 * (4.0 - 2.0 - 4f64.ln());
    assert!((gaussian_kl(&pair).unwrap() - expected).abs() < 1e-12);
    assert!((expected - 0.306_852_819_440_054_3).abs() < 1e-15);
}

#[test]
fn row_importance_examples() {
    assert_eq!(row_importance(&MahalanobisMatrix::identity(3)), vec![1.0; 3]);
    let a = MahalanobisMatrix::from_full(2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
    let r = row_importance(&a);
    assert!((r[0] - 20f64.sqrt()).abs() < 1e-12 && (r[1] - 13f64.sqrt()).abs() < 1e-12);
    let d = MahalanobisMatrix::from_diagonal(vec![2.0, 5.0]).unwrap();
    assert_eq!(row_importance(&d), vec![2.0, 5.0]);
    assert_eq!(d.mode(), MetricMode::Diagonal);
}

/// Monte-Carlo estimate of E_{p0}[log p0(x) - log p(x)] for zero-mean
/// Gaussians with precisions `a0 = I` and `a = diag(w)`.
#[test]
fn kl_matches_monte_carlo() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let w = [2.0, 0.5, 3.0];
    let a = MahalanobisMatrix::from_diagonal(w.to_vec()).unwrap();
    let pair = GaussianPair::centered(MahalanobisMatrix::identity(3), a).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let n = Normal::new(0.0, 1.0).unwrap();
    let samples = 200_000;
    let mut acc = 0.0;
    for _ in 0..samples {
        let mut lr = 0.0;
        for wi in w {
            let x: f64 = n.sample(&mut rng);
            // log N(x; 0, 1) - log N(x; 0, 1/wi)
            lr += -0.5 * x * x + 0.5 * wi * x * x - 0.5 * wi.ln();
        }
        acc += lr;
    }
    let mc = acc / samples as f64;
    assert!((gaussian_kl(&pair).unwrap() - mc).abs() < 0.02, "mc {mc}");
}

#[test]
fn metric_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.bin");
    let a = pd_matrix(3, &[0.3, -1.0, 0.2, 0.9, 0.1, 0.4, -0.5, 0.6, 1.1], 0.1);
    a.save(&p).unwrap();
    assert_eq!(MahalanobisMatrix::load(&p).unwrap(), a);
    let d = MahalanobisMatrix::from_diagonal(vec![1.5, 2.5]).unwrap();
    d.save(&p).unwrap();
    let back = MahalanobisMatrix::load(&p).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.raw().len(), 2);
    std::fs::write(&p, b"XXXX").unwrap();
    assert!(matches!(MahalanobisMatrix::load(&p), Err(Error::Format { .. })));
}

proptest! {
    #[test]
    fn distance_is_symmetric((a, w1, w2) in arb_instance(8)) {
        let h12 = a.distance(&w1, &w2).unwrap();
        let h21 = a.distance(&w2, &w1).unwrap();
        prop_assert!(h12 >= 0.0);
        prop_assert!((h12 - h21).abs() <= 1e-9 * (1.0 + h12));
    }

    #[test]
    fn identity_is_squared_euclidean(
        (w1, w2) in (1usize..=512).prop_flat_map(|d| (
            prop::collection::vec(-3.0..3.0f64, d),
            prop::collection::vec(-3.0..3.0f64, d),
        ))
    ) {
        let a = MahalanobisMatrix::identity(w1.len());
        let h = a.distance(&w1, &w2).unwrap();
        let oracle: f64 = w1.iter().zip(&w2).map(|(x, y)| (x - y) * (x - y)).sum();
        prop_assert!((h - oracle).abs() <= 1e-9 * oracle.max(1e-300));
    }

    #[test]
    fn sqrt_distance_obeys_triangle(
        (a, x, y, z) in arb_pd(16).prop_flat_map(|a| {
            let d = a.dim();
            (Just(a),
             prop::collection::vec(-4.0..4.0f64, d),
             prop::collection::vec(-4.0..4.0f64, d),
             prop::collection::vec(-4.0..4.0f64, d))
        })
    ) {
        let dxz = a.distance(&x, &z).unwrap().sqrt();
        let dxy = a.distance(&x, &y).unwrap().sqrt();
        let dyz = a.distance(&y, &z).unwrap().sqrt();
        prop_assert!(dxz <= dxy + dyz + 1e-7);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_equality(
        (a0, a) in (1usize..=5).prop_flat_map(|d| (
            prop::collection::vec(-2.0..2.0f64, d * d),
            prop::collection::vec(-2.0..2.0f64, d * d),
        ).prop_map(move |(e0, e1)| (pd_matrix(d, &e0, 0.2), pd_matrix(d, &e1, 0.2))))
    ) {
        let kl = gaussian_kl(&GaussianPair::centered(a0.clone(), a.clone()).unwrap()).unwrap();
        prop_assert!(kl >= 0.0);
        let self_kl = gaussian_kl(&GaussianPair::centered(a0.clone(), a0.clone()).unwrap()).unwrap();
        prop_assert_eq!(self_kl, 0.0);
        let max_diff = a0.to_dense().iter().zip(a.to_dense()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if max_diff > 1e-6 {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn row_and_column_importance_agree(a in arb_pd(10)) {
        let d = a.dim();
        let rows = row_importance(&a);
        for (j, r) in rows.iter().enumerate() {
            let col: f64 = (0..d).map(|i| a.get(i, j).powi(2)).sum::<f64>().sqrt();
            prop_assert!((col - r).abs() <= 1e-9 * (1.0 + r));
        }
    }

    #[test]
    fn bytes_round_trip(a in arb_pd(12)) {
        let back = MahalanobisMatrix::from_bytes(&a.to_bytes(), std::path::Path::new("x")).unwrap();
        prop_assert_eq!(back, a);
    }
}
