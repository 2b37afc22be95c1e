//! Random-walk baseline against dense matrix powers.

use proptest::prelude::*;
use pseudograph::baseline::{random_walk_propagate, transition_matrix, ScoreGrid};
use pseudograph::graph::GridShape;
use pseudograph::numeric::{DenseMatrix, SparseMatrix};

fn dense_power_apply(t: &[Vec<f64>], s: &[Vec<f64>], iters: usize) -> Vec<Vec<f64>> {
    let n = t.len();
    // build T^iters first, then apply once
    let mut p: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..iters {
        p = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| t[i][k] * p[k][j]).sum()).collect())
            .collect();
    }
    (0..n)
        .map(|i| (0..s[0].len()).map(|c| (0..n).map(|k| p[i][k] * s[k][c]).sum()).collect())
        .collect()
}

fn affinity(n: usize, w: &[f64]) -> SparseMatrix {
    let mut trip = Vec::new();
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            let v = w[k];
            k += 1;
            if v > 0.3 {
                trip.push((i, j, v));
                trip.push((j, i, v));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, trip).unwrap()
}

fn case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, f64)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec(0.0..1.0f64, n * n),
            proptest::collection::vec(0.0..1.0f64, n * 3),
            1.0..8.0f64,
        )
    })
}

proptest! {
    #[test]
    fn rows_are_stochastic((n, w, _, beta) in case()) {
        let t = transition_matrix(&affinity(n, &w), beta).unwrap();
        for s in t.row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn iterates_match_matrix_power((n, w, s, beta) in case(), iters in 0usize..20) {
        let t = transition_matrix(&affinity(n, &w), beta).unwrap();
        let scores = ScoreGrid::new(GridShape::new(1, n), DenseMatrix::from_vec(n, 3, s.clone()).unwrap()).unwrap();
        let got = random_walk_propagate(&scores, &t, iters).unwrap();
        let td = t.to_dense();
        let t_rows: Vec<Vec<f64>> = td.iter_rows().map(|r| r.to_vec()).collect();
        let s_rows: Vec<Vec<f64>> = s.chunks(3).map(|r| r.to_vec()).collect();
        let want = dense_power_apply(&t_rows, &s_rows, iters);
        for i in 0..n {
            for c in 0..3 {
                prop_assert!((got.scores()[(i, c)] - want[i][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_iterations_are_exact((n, w, s, beta) in case(), a in 0usize..10, b in 0usize..10) {
        let t = transition_matrix(&affinity(n, &w), beta).unwrap();
        let scores = ScoreGrid::new(GridShape::new(n, 1), DenseMatrix::from_vec(n, 3, s).unwrap()).unwrap();
        let whole = random_walk_propagate(&scores, &t, a + b).unwrap();
        let halves = random_walk_propagate(&random_walk_propagate(&scores, &t, a).unwrap(), &t, b).unwrap();
        prop_assert_eq!(whole, halves);
    }
}

#[test]
fn chain_mixes_to_stationary_mixture() {
    // 3-node chain with equal weights: T is doubly stochastic after the
    // self loop, so 64 steps approach the uniform mixture
    let a = SparseMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap();
    let t = transition_matrix(&a, 1.0).unwrap();
    let scores = ScoreGrid::new(GridShape::new(1, 3), DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 2.0]]).unwrap()).unwrap();
    let out = random_walk_propagate(&scores, &t, 64).unwrap();
    let td: Vec<Vec<f64>> = t.to_dense().iter_rows().map(|r| r.to_vec()).collect();
    let want = dense_power_apply(&td, &[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 2.0]], 64);
    for i in 0..3 {
        for c in 0..2 {
            assert!((out.scores()[(i, c)] - want[i][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn doubly_stochastic_walk_preserves_class_mass() {
    // 4-cycle with uniform weights
    let a = SparseMatrix::from_triplets(
        4,
        4,
        [(0, 1, 0.5), (1, 0, 0.5), (1, 2, 0.5), (2, 1, 0.5), (2, 3, 0.5), (3, 2, 0.5), (3, 0, 0.5), (0, 3, 0.5)],
    )
    .unwrap();
    let t = transition_matrix(&a, 2.0).unwrap();
    let s = DenseMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.5]]).unwrap();
    let out = random_walk_propagate(&ScoreGrid::new(GridShape::new(2, 2), s).unwrap(), &t, 7).unwrap();
    let mass: Vec<f64> = (0..2).map(|c| (0..4).map(|i| out.scores()[(i, c)]).sum()).collect();
    assert!((mass[0] - 4.0).abs() < 1e-12 && (mass[1] - 1.5).abs() < 1e-12);
}
