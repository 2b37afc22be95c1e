//! Random-walk propagation of class activation scores, the feed-forward
//! alternative to GCN training.

use crate::error::{Error, Result};
use crate::gcn::ClassProbGrid;
use crate::graph::{GridShape, SYMMETRY_TOL};
use crate::image::RgbImage;
use crate::numeric::{spmm, DenseMatrix, SparseMatrix};
use crate::refine::{complete_labels, CompleteLabelGrid, MeanFieldParams};

/// Non-negative per-node class scores; column 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGrid {
    shape: GridShape,
    scores: DenseMatrix,
}

impl ScoreGrid {
    pub fn new(shape: GridShape, scores: DenseMatrix) -> Result<Self> {
        if scores.rows() != shape.len() {
            return Err(Error::invalid("score rows do not match grid"));
        }
        if scores.data().iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("scores must be finite and non-negative"));
        }
        Ok(Self { shape, scores })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn scores(&self) -> &DenseMatrix {
        &self.scores
    }

    pub fn classes(&self) -> usize {
        self.scores.cols()
    }

    /// Scores normalized per node. All-zero nodes become uniform.
    pub fn to_probs(&self) -> Result<ClassProbGrid> {
        let k = self.classes() as f64;
        let mut probs = self.scores.clone();
        for i in 0..probs.rows() {
            let row = probs.row_mut(i);
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|v| *v /= sum);
            } else {
                row.iter_mut().for_each(|v| *v = 1.0 / k);
            }
        }
        ClassProbGrid::new(self.shape, probs)
    }
}

/// Row-stochastic `T = rownorm((A + I)^beta)` with the power taken
/// elementwise.
pub fn transition_matrix(a: &SparseMatrix, hadamard_beta: f64) -> Result<SparseMatrix> {
    if !a.is_square() {
        return Err(Error::invalid("affinity must be square"));
    }
    if !(hadamard_beta >= 1.0) {
        return Err(Error::invalid(format!("hadamard beta {hadamard_beta} must be >= 1")));
    }
    if let Some(&(r, c, v)) = a.entries().iter().find(|e| e.2 < 0.0) {
        return Err(Error::invalid(format!("negative affinity {v} at ({r}, {c})")));
    }
    if let Some((r, c)) = a.asymmetry(SYMMETRY_TOL) {
        return Err(Error::invalid(format!("affinity not symmetric at ({r}, {c})")));
    }
    let powered = a
        .add(&SparseMatrix::identity(a.rows()))?
        .map_values(|_, _, v| v.powf(hadamard_beta));
    let sums = powered.row_sums();
    Ok(powered.map_values(|r, _, v| v / sums[r]))
}

/// `T^iters * scores` by repeated multiplication.
pub fn random_walk_propagate(scores: &ScoreGrid, t_matrix: &SparseMatrix, iters: usize) -> Result<ScoreGrid> {
    if t_matrix.rows() != scores.shape.len() || !t_matrix.is_square() {
        return Err(Error::invalid("transition matrix does not match the score grid"));
    }
    let mut s = scores.scores.clone();
    for _ in 0..iters {
        s = spmm(t_matrix, &s)?;
    }
    ScoreGrid::new(scores.shape, s)
}

/// Propagate, then share the GCN's upsample/refine/argmax tail.
pub fn baseline_complete_labels(
    scores: &ScoreGrid,
    t_matrix: &SparseMatrix,
    iters: usize,
    image: &RgbImage,
    refine: Option<&MeanFieldParams>,
) -> Result<CompleteLabelGrid> {
    let propagated = random_walk_propagate(scores, t_matrix, iters)?;
    complete_labels(&propagated.to_probs()?, image, refine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transition_cases() {
        assert_eq!(transition_matrix(&SparseMatrix::empty(3, 3), 8.0).unwrap(), SparseMatrix::identity(3));

        let a = SparseMatrix::from_triplets(2, 2, [(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
        let t = transition_matrix(&a, 2.0).unwrap();
        assert_abs_diff_eq!(t.get(0, 0), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(t.get(0, 1), 0.2, epsilon = 1e-15);

        // 4-cycle, uniform weights: regular graph
        let ring: Vec<_> = (0..4).flat_map(|i| [(i, (i + 1) % 4, 0.3), ((i + 1) % 4, i, 0.3)]).collect();
        let t = transition_matrix(&SparseMatrix::from_triplets(4, 4, ring).unwrap(), 1.0).unwrap();
        let col_sums = t.transpose().row_sums();
        for (r, c) in t.row_sums().iter().zip(col_sums) {
            assert_abs_diff_eq!(*r, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
        }
        assert!(transition_matrix(&a, 0.5).is_err());
    }

    #[test]
    fn propagation_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = GridShape::new(1, 5);
        let s = ScoreGrid::new(shape, DenseMatrix::from_fn(5, 3, |_, _| rng.random::<f64>())).unwrap();
        let t = SparseMatrix::identity(5);
        assert_eq!(random_walk_propagate(&s, &t, 0).unwrap(), s);
        assert_eq!(random_walk_propagate(&s, &t, 7).unwrap(), s);
    }

    #[test]
    fn scores_validated() {
        assert!(ScoreGrid::new(GridShape::new(1, 1), DenseMatrix::filled(1, 2, -0.1)).is_err());
        let g = ScoreGrid::new(GridShape::new(1, 2), DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 3.0]]).unwrap()).unwrap();
        let p = g.to_probs().unwrap();
        assert_eq!(p.probs().row(0), &[0.5, 0.5]);
        assert_eq!(p.probs().row(1), &[0.25, 0.75]);
    }
}
