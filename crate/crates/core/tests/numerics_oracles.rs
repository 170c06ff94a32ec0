mod common;

use moe_reduce::numerics::{
    cosine_columns, kmeans, linear_assignment_max, sym_eigen, Assignment, Matrix, Rng,
};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn random_symmetric(n: usize, rng: &mut Rng) -> Matrix {
    let a = Matrix::from_fn(n, n, |_, _| rng.normal());
    Matrix::from_fn(n, n, |r, c| 0.5 * (a[(r, c)] + a[(c, r)]))
}

#[test]
fn eigenvalues_match_nalgebra() {
    let mut rng = Rng::new(1);
    for n in [1, 2, 3, 7, 16, 33, 64] {
        let a = random_symmetric(n, &mut rng);
        let ours = sym_eigen(&a, n).unwrap();
        let reference = SymmetricEigen::new(DMatrix::from_row_slice(n, n, a.as_slice()));
        let mut theirs: Vec<f64> = reference.eigenvalues.iter().copied().collect();
        theirs.sort_by(f64::total_cmp);
        let scale = a.frobenius_norm().max(1.0);
        for (x, y) in ours.values.iter().zip(&theirs) {
            assert!((x - y).abs() <= 1e-10 * scale, "n={n}: {x} vs {y}");
        }
    }
}

#[test]
fn partial_spectrum_is_the_smallest_part() {
    let mut rng = Rng::new(2);
    let a = random_symmetric(20, &mut rng);
    let full = sym_eigen(&a, 20).unwrap();
    let part = sym_eigen(&a, 5).unwrap();
    assert_eq!(part.values.len(), 5);
    assert_eq!(part.vectors.shape(), (20, 5));
    for k in 0..5 {
        assert!((part.values[k] - full.values[k]).abs() < 1e-12);
    }
}

#[test]
fn repeated_eigenvalues_still_give_an_orthonormal_basis() {
    // Laplacian of the complete graph: eigenvalue 1 with multiplicity n-1.
    let n = 9;
    let a = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 - 1.0 / n as f64 } else { -1.0 / n as f64 });
    let eig = sym_eigen(&a, n).unwrap();
    assert!(eig.values[0].abs() < 1e-12);
    for v in &eig.values[1..] {
        assert!((v - 1.0).abs() < 1e-12);
    }
    let vtv = eig.vectors.transpose().matmul(&eig.vectors).unwrap();
    assert!(vtv.max_abs_diff(&Matrix::identity(n)) < 1e-12);
}

#[test]
fn assignment_matches_brute_force_with_ties() {
    let mut rng = Rng::new(3);
    for n in 2..=6 {
        let perms = common::permutations(n);
        for _ in 0..50 {
            // Small integer costs force many tied optima.
            let cost = Matrix::from_fn(n, n, |_, _| rng.below(3) as f64);
            let got = linear_assignment_max(&cost).unwrap().value(&cost);
            let best = perms
                .iter()
                .map(|p| Assignment::new(p.clone()).unwrap().value(&cost))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(got, best);
        }
    }
}

#[test]
fn assignment_rejects_bad_input() {
    assert!(linear_assignment_max(&Matrix::zeros(2, 3)).is_err());
    let mut m = Matrix::zeros(2, 2);
    m.as_mut_slice()[0] = f64::NAN;
    assert!(linear_assignment_max(&m).is_err());
}

#[test]
fn kmeans_separates_well_spaced_blobs() {
    let mut rng = Rng::new(4);
    let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|i| {
            let (cx, cy) = centers[i % 3];
            vec![cx + 0.1 * rng.normal(), cy + 0.1 * rng.normal()]
        })
        .collect();
    let points = Matrix::from_rows(&rows).unwrap();
    let km = kmeans(&points, 3, &mut rng, 100).unwrap();
    for i in 0..60 {
        for j in 0..60 {
            assert_eq!(km.labels[i] == km.labels[j], i % 3 == j % 3);
        }
    }
}

fn arb_points() -> impl Strategy<Value = (Matrix, usize, u64)> {
    (2usize..30, 1usize..4, any::<u64>()).prop_flat_map(|(n, d, seed)| {
        (1..=n).prop_map(move |k| {
            let mut rng = Rng::new(seed);
            // Coarse grid values produce duplicate points.
            let m = Matrix::from_fn(n, d, |_, _| rng.below(4) as f64);
            (m, k, seed)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigen_residuals_are_small(n in 1usize..24, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = random_symmetric(n, &mut rng);
        let eig = sym_eigen(&a, n).unwrap();
        let fro = a.frobenius_norm();
        for k in 0..n {
            let v = eig.vectors.column(k);
            let av = a.matvec(&v);
            let res: f64 = av.iter().zip(&v).map(|(p, q)| (p - eig.values[k] * q).powi(2)).sum::<f64>().sqrt();
            prop_assert!(res <= 1e-8 * fro.max(1e-300));
        }
    }

    #[test]
    fn assignment_is_optimal((n, seed) in (1usize..7, any::<u64>())) {
        let mut rng = Rng::new(seed);
        let cost = Matrix::from_fn(n, n, |_, _| rng.uniform_range(-5.0, 5.0));
        let got = linear_assignment_max(&cost).unwrap();
        let best = common::permutations(n)
            .into_iter()
            .map(|p| Assignment::new(p).unwrap().value(&cost))
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(got.value(&cost) >= best - 1e-9);
        prop_assert_eq!(got.inverse().inverse(), got);
    }

    #[test]
    fn kmeans_invariants((points, k, seed) in arb_points()) {
        let km = kmeans(&points, k, &mut Rng::new(seed), 100).unwrap();
        prop_assert_eq!(km.labels.len(), points.rows());
        let mut sizes = vec![0usize; k];
        km.labels.iter().for_each(|&l| sizes[l] += 1);
        prop_assert!(sizes.iter().all(|&s| s > 0), "empty cluster: {:?}", sizes);
        prop_assert!(km.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9), "objective rose: {:?}", km.objective);
        let again = kmeans(&points, k, &mut Rng::new(seed), 100).unwrap();
        prop_assert_eq!(again.labels, km.labels);
    }

    #[test]
    fn cosine_matrix_is_a_valid_similarity(rows in 1usize..20, cols in 1usize..8, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let h = Matrix::from_fn(rows, cols, |_, _| rng.normal() + 0.01);
        let c = cosine_columns(&h).unwrap();
        for i in 0..cols {
            prop_assert_eq!(c[(i, i)], 1.0);
            for j in 0..cols {
                prop_assert_eq!(c[(i, j)], c[(j, i)]);
                prop_assert!((-1.0..=1.0).contains(&c[(i, j)]));
            }
        }
    }
}
