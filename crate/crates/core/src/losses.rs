//! Composite training objective and its gradient with respect to the class
//! probability matrix `Q` (N x K, K = |C| + 1).
//!
//! Gradients stop at `Q`; the chain through the softmax is handled by the
//! GCN backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PartialLabelGrid, SYMMETRY_TOL};
use crate::numeric::{DenseMatrix, SparseMatrix};

/// Lower clamp applied to probabilities before any logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Entropy weight.
    pub beta1: f64,
    /// Laplacian weight.
    pub beta2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta1: 10.0,
            beta2: 1e-2,
        }
    }
}

impl LossWeights {
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        if !(beta1 >= 0.0 && beta2 >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(Self { beta1, beta2 })
    }
}

/// Which optional terms take part in training. Cross-entropy terms are
/// always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossMask {
    pub use_ent: bool,
    pub use_lp: bool,
}

impl Default for LossMask {
    fn default() -> Self {
        Self {
            use_ent: true,
            use_lp: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fg: f64,
    pub bg: f64,
    pub ent: f64,
    pub lp: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.fg, self.bg, self.ent, self.lp, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn check_classes(q: &DenseMatrix, p: &PartialLabelGrid) -> Result<()> {
    if q.cols() != p.num_outputs() {
        return Err(Error::invalid(format!(
            "prediction has {} classes, labels expect {}",
            q.cols(),
            p.num_outputs()
        )));
    }
    if q.rows() != p.num_nodes() {
        return Err(Error::invalid(format!(
            "prediction has {} rows, labels cover {} nodes",
            q.rows(),
            p.num_nodes()
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood over `nodes` of their labeled class.
fn cross_entropy(q: &DenseMatrix, p: &PartialLabelGrid, nodes: &[usize]) -> (f64, DenseMatrix) {
    let mut grad = DenseMatrix::zeros(q.rows(), q.cols());
    if nodes.is_empty() {
        return (0.0, grad);
    }
    let n = nodes.len() as f64;
    let mut sum = 0.0;
    for &i in nodes {
        let c = p.label(i).expect("partition holds labeled nodes") as usize;
        let prob = q[(i, c)].max(PROB_EPS);
        sum -= prob.ln();
        grad[(i, c)] = -1.0 / (n * prob);
    }
    (sum / n, grad)
}

/// Cross-entropy over foreground-labeled nodes.
pub fn loss_fg(q: &DenseMatrix, p: &PartialLabelGrid) -> Result<(f64, DenseMatrix)> {
    check_classes(q, p)?;
    Ok(cross_entropy(q, p, &p.partition().foreground))
}

/// Cross-entropy over background-labeled nodes.
pub fn loss_bg(q: &DenseMatrix, p: &PartialLabelGrid) -> Result<(f64, DenseMatrix)> {
    check_classes(q, p)?;
    Ok(cross_entropy(q, p, &p.partition().background))
}

/// Mean Shannon entropy of the predictions at ignored nodes.
pub fn loss_entropy(q: &DenseMatrix, p: &PartialLabelGrid) -> Result<(f64, DenseMatrix)> {
    check_classes(q, p)?;
    Ok(entropy_over(q, &p.partition().ignored))
}

fn entropy_over(q: &DenseMatrix, nodes: &[usize]) -> (f64, DenseMatrix) {
    let mut grad = DenseMatrix::zeros(q.rows(), q.cols());
    if nodes.is_empty() {
        return (0.0, grad);
    }
    let n = nodes.len() as f64;
    let mut sum = 0.0;
    for &i in nodes {
        for c in 0..q.cols() {
            let log = q[(i, c)].max(PROB_EPS).ln();
            sum -= q[(i, c)] * log;
            grad[(i, c)] = -(log + 1.0) / n;
        }
    }
    (sum / n, grad)
}

/// `1/(2N) * sum_ij phi_ij |q_i - q_j|^2` over the stored entries of `phi`.
pub fn loss_laplacian(q: &DenseMatrix, phi: &SparseMatrix) -> Result<(f64, DenseMatrix)> {
    if phi.rows() != q.rows() || phi.cols() != q.rows() {
        return Err(Error::invalid(format!(
            "kernel is {}x{}, prediction has {} rows",
            phi.rows(),
            phi.cols(),
            q.rows()
        )));
    }
    if let Some((r, c)) = phi.asymmetry(SYMMETRY_TOL) {
        return Err(Error::invalid(format!("Laplacian kernel not symmetric at ({r}, {c})")));
    }
    let n = q.rows();
    let mut grad = DenseMatrix::zeros(n, q.cols());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut sum = 0.0;
    let scale = 2.0 / n as f64;
    for i in 0..n {
        let qi = q.row(i);
        for (j, w) in phi.row(i) {
            let qj = q.row(j);
            let g = grad.row_mut(i);
            for c in 0..qi.len() {
                let d = qi[c] - qj[c];
                sum += w * d * d;
                g[c] += scale * w * d;
            }
        }
    }
    Ok((sum / (2.0 * n as f64), grad))
}

/// Weighted objective plus its gradient. `phi` may be `None` only when the
/// Laplacian term is masked off.
pub fn total_loss(
    q: &DenseMatrix,
    p: &PartialLabelGrid,
    phi: Option<&SparseMatrix>,
    weights: LossWeights,
    mask: LossMask,
) -> Result<(LossBreakdown, DenseMatrix)> {
    check_classes(q, p)?;
    let part = p.partition();
    let (fg, mut grad) = cross_entropy(q, p, &part.foreground);
    let (bg, g_bg) = cross_entropy(q, p, &part.background);
    grad.add_scaled(&g_bg, 1.0)?;

    let mut ent = 0.0;
    if mask.use_ent {
        let (v, g) = entropy_over(q, &part.ignored);
        ent = v;
        grad.add_scaled(&g, weights.beta1)?;
    }
    let mut lp = 0.0;
    if mask.use_lp {
        let phi = phi.ok_or_else(|| Error::invalid("Laplacian term enabled without a kernel"))?;
        let (v, g) = loss_laplacian(q, phi)?;
        lp = v;
        grad.add_scaled(&g, weights.beta2)?;
    }
    let breakdown = LossBreakdown {
        fg,
        bg,
        ent,
        lp,
        total: fg + bg + weights.beta1 * ent + weights.beta2 * lp,
    };
    Ok((breakdown, grad))
}
