//! Two-layer graph convolutional network
//! `Q = softmax(P relu(P V W1) W2)` with `P = A + I` (optionally
//! symmetrically normalized), inverted dropout on `V` and on the hidden
//! layer, hand-written backward pass and an Adam optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureGrid, GridShape, SelfAugmentedAffinity, SYMMETRY_TOL};
use crate::numeric::{gemm, relu, row_softmax, spmm, DenseMatrix, SparseMatrix};

pub const DEFAULT_HIDDEN: usize = 16;

/// Seed offset so weight init and dropout masks draw from unrelated streams.
const INIT_STREAM: u64 = u64::MAX;
const DROPOUT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
}

impl GcnParams {
    /// Glorot-uniform initialization from `seed`.
    pub fn init(input_dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit))
        };
        let w1 = glorot(input_dim, hidden);
        let w2 = glorot(hidden, classes);
        Self { w1, w2 }
    }

    pub fn new(w1: DenseMatrix, w2: DenseMatrix) -> Result<Self> {
        if w1.cols() != w2.rows() {
            return Err(Error::invalid(format!(
                "hidden width mismatch: w1 is {:?}, w2 is {:?}",
                w1.shape(),
                w2.shape()
            )));
        }
        if !(w1.is_finite() && w2.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(Self { w1, w2 })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn classes(&self) -> usize {
        self.w2.cols()
    }

    fn tensors(&self) -> [&DenseMatrix; 2] {
        [&self.w1, &self.w2]
    }

    fn tensors_mut(&mut self) -> [&mut DenseMatrix; 2] {
        [&mut self.w1, &mut self.w2]
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: DenseMatrix::zeros(self.w1.rows(), self.w1.cols()),
            w2: DenseMatrix::zeros(self.w2.rows(), self.w2.cols()),
        }
    }
}

/// Gradients with the same layout as [`GcnParams`].
pub type GcnGrads = GcnParams;

/// Per-node class distributions on the feature grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbGrid {
    shape: GridShape,
    probs: DenseMatrix,
}

impl ClassProbGrid {
    /// Rows must be probability vectors (sum within 1e-9, entries in [0, 1]).
    pub fn new(shape: GridShape, probs: DenseMatrix) -> Result<Self> {
        if probs.rows() != shape.len() {
            return Err(Error::invalid("probability rows do not match grid"));
        }
        for (i, row) in probs.iter_rows().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("row {i} is not a probability vector")));
            }
        }
        Ok(Self { shape, probs })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn probs(&self) -> &DenseMatrix {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }
}

/// Graph operator used by both layers.
pub fn propagation_matrix(aff: &SelfAugmentedAffinity, normalize: bool) -> SparseMatrix {
    let a_tilde = aff.augmented();
    if !normalize {
        return a_tilde.clone();
    }
    let inv_sqrt: Vec<f64> = a_tilde.row_sums().iter().map(|d| 1.0 / d.sqrt()).collect();
    a_tilde.map_values(|r, c, v| v * inv_sqrt[r] * inv_sqrt[c])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutPlan {
    pub rate: f64,
    pub seed: u64,
}

/// Inverted-dropout multipliers (0 or `1/(1-rate)`) for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    pub input: DenseMatrix,
    pub hidden: DenseMatrix,
}

impl DropoutPlan {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate, seed })
    }

    /// Masks for training step `step`. Each step reads its own ChaCha stream
    /// so masks are reproducible without carrying RNG state.
    pub fn masks(&self, step: usize, nodes: usize, input_dim: usize, hidden: usize) -> DropoutMasks {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ DROPOUT_SALT);
        rng.set_stream(step as u64);
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mut draw = |rows, cols| {
            DenseMatrix::from_fn(rows, cols, |_, _| {
                if self.rate == 0.0 || rng.random::<f64>() < keep {
                    scale
                } else {
                    0.0
                }
            })
        };
        let input = draw(nodes, input_dim);
        let hidden = draw(nodes, hidden);
        DropoutMasks { input, hidden }
    }
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `P X` where `X` is the (masked) input.
    prop_input: DenseMatrix,
    /// Hidden pre-activation `P X W1`.
    hidden_pre: DenseMatrix,
    /// `P H'` where `H'` is the (masked) hidden activation.
    prop_hidden: DenseMatrix,
    hidden_mask: Option<DenseMatrix>,
    q: DenseMatrix,
}

impl ForwardCache {
    pub fn probs(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn into_probs(self) -> DenseMatrix {
        self.q
    }
}

/// Forward pass on raw matrices. `prop` must be symmetric.
pub fn forward_matrices(
    prop: &SparseMatrix,
    features: &DenseMatrix,
    params: &GcnParams,
    masks: Option<&DropoutMasks>,
) -> Result<ForwardCache> {
    let n = features.rows();
    if prop.rows() != n || prop.cols() != n {
        return Err(Error::invalid(format!(
            "graph operator is {}x{}, features have {n} rows",
            prop.rows(),
            prop.cols()
        )));
    }
    if features.cols() != params.input_dim() {
        return Err(Error::invalid(format!(
            "feature dim {} does not match w1 rows {}",
            features.cols(),
            params.input_dim()
        )));
    }
    let input = match masks {
        Some(m) => features.hadamard(&m.input)?,
        None => features.clone(),
    };
    let prop_input = spmm(prop, &input)?;
    let hidden_pre = gemm(&prop_input, &params.w1)?;
    let mut hidden = relu(&hidden_pre);
    if let Some(m) = masks {
        hidden = hidden.hadamard(&m.hidden)?;
    }
    let prop_hidden = spmm(prop, &hidden)?;
    let logits = gemm(&prop_hidden, &params.w2)?;
    let q = row_softmax(&logits);
    if !q.is_finite() {
        return Err(Error::invalid("non-finite activations in forward pass"));
    }
    Ok(ForwardCache {
        prop_input,
        hidden_pre,
        prop_hidden,
        hidden_mask: masks.map(|m| m.hidden.clone()),
        q,
    })
}

/// Forward pass on a validated graph. `dropout` is `(plan, step)` in
/// training and `None` at inference.
pub fn forward(
    aff: &SelfAugmentedAffinity,
    fg: &FeatureGrid,
    params: &GcnParams,
    normalize: bool,
    dropout: Option<(&DropoutPlan, usize)>,
) -> Result<(ClassProbGrid, ForwardCache)> {
    let prop = propagation_matrix(aff, normalize);
    let masks = dropout.map(|(plan, step)| plan.masks(step, fg.num_nodes(), fg.dim(), params.hidden()));
    let cache = forward_matrices(&prop, fg.features(), params, masks.as_ref())?;
    let grid = ClassProbGrid {
        shape: fg.shape(),
        probs: cache.q.clone(),
    };
    Ok((grid, cache))
}

/// Reverse-mode gradients of a scalar loss given `dloss/dQ`.
pub fn backward(
    prop: &SparseMatrix,
    params: &GcnParams,
    cache: &ForwardCache,
    grad_q: &DenseMatrix,
) -> Result<GcnGrads> {
    let q = &cache.q;
    if grad_q.shape() != q.shape() {
        return Err(Error::invalid(format!(
            "loss gradient {:?} does not match output {:?}",
            grad_q.shape(),
            q.shape()
        )));
    }
    if prop.rows() != q.rows() || cache.prop_hidden.cols() != params.hidden() || q.cols() != params.classes()
    {
        return Err(Error::invalid("forward cache does not match parameters"));
    }
    if !prop.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::invalid("graph operator must be symmetric"));
    }

    // softmax: dz = q * (g - <g, q>)
    let mut d_logits = DenseMatrix::zeros(q.rows(), q.cols());
    for i in 0..q.rows() {
        let (qi, gi) = (q.row(i), grad_q.row(i));
        let dot: f64 = qi.iter().zip(gi).map(|(a, b)| a * b).sum();
        for (d, (&qv, &gv)) in d_logits.row_mut(i).iter_mut().zip(qi.iter().zip(gi)) {
            *d = qv * (gv - dot);
        }
    }

    let w2 = gemm(&cache.prop_hidden.transpose(), &d_logits)?;
    let d_prop_hidden = gemm(&d_logits, &params.w2.transpose())?;
    let mut d_hidden = spmm(prop, &d_prop_hidden)?;
    if let Some(mask) = &cache.hidden_mask {
        d_hidden = d_hidden.hadamard(mask)?;
    }
    for (d, &pre) in d_hidden.data_mut().iter_mut().zip(cache.hidden_pre.data()) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }
    let w1 = gemm(&cache.prop_input.transpose(), &d_hidden)?;
    Ok(GcnGrads { w1, w2 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: usize,
    pub m1: GcnParams,
    pub m2: GcnParams,
    pub lr: f64,
    pub beta_m1: f64,
    pub beta_m2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(params: &GcnParams, lr: f64, weight_decay: f64) -> Self {
        Self {
            step: 0,
            m1: params.zeros_like(),
            m2: params.zeros_like(),
            lr,
            beta_m1: 0.9,
            beta_m2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// One Adam update with L2 weight decay folded into the gradient.
pub fn adam_step(params: &mut GcnParams, grads: &GcnGrads, state: &mut AdamState) -> Result<()> {
    for (name, (p, g)) in ["w1", "w2"].iter().zip(params.tensors().into_iter().zip(grads.tensors())) {
        if p.shape() != g.shape() {
            return Err(Error::invalid(format!(
                "{name} gradient shape {:?} does not match {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                step: state.step,
                detail: format!("{name} entry {pos} is {}", g.data()[pos]),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta_m1.powi(t);
    let bias2 = 1.0 - state.beta_m2.powi(t);
    let (b1, b2, lr, eps, wd) = (state.beta_m1, state.beta_m2, state.lr, state.eps, state.weight_decay);

    let moments = state.m1.tensors_mut().into_iter().zip(state.m2.tensors_mut());
    for ((p, g), (m, v)) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(moments) {
        let it = p.data_mut().iter_mut().zip(g.data());
        for ((theta, &grad), (m, v)) in it.zip(m.data_mut().iter_mut().zip(v.data_mut())) {
            let grad = grad + wd * *theta;
            *m = b1 * *m + (1.0 - b1) * grad;
            *v = b2 * *v + (1.0 - b2) * grad * grad;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_self_augmented;
    use approx::assert_abs_diff_eq;

    fn single_node() -> (SelfAugmentedAffinity, FeatureGrid) {
        let aff = build_self_augmented(SparseMatrix::empty(1, 1)).unwrap();
        let fg = FeatureGrid::new(GridShape::new(1, 1), DenseMatrix::filled(1, 1, 1.0)).unwrap();
        (aff, fg)
    }

    #[test]
    fn hand_evaluated_single_node() {
        let (aff, fg) = single_node();
        let w1 = DenseMatrix::filled(1, 16, 1.0);
        let mut w2 = DenseMatrix::zeros(16, 2);
        w2[(0, 0)] = 1.0;
        let params = GcnParams::new(w1, w2).unwrap();
        let (q, _) = forward(&aff, &fg, &params, false, None).unwrap();
        assert_abs_diff_eq!(q.probs()[(0, 0)], 0.731059, epsilon = 1e-6);
        assert_abs_diff_eq!(q.probs()[(0, 1)], 0.268941, epsilon = 1e-6);
    }

    #[test]
    fn zero_w2_gives_uniform() {
        let aff = build_self_augmented(
            SparseMatrix::from_triplets(3, 3, [(0, 1, 0.4), (1, 0, 0.4), (1, 2, 2.0), (2, 1, 2.0)]).unwrap(),
        )
        .unwrap();
        let fg = FeatureGrid::new(GridShape::new(1, 3), DenseMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0)).unwrap();
        let mut params = GcnParams::init(4, 16, 3, 1);
        params.w2 = DenseMatrix::zeros(16, 3);
        let (q, _) = forward(&aff, &fg, &params, false, None).unwrap();
        assert!(q.probs().data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn zero_upstream_gradient() {
        let (aff, fg) = single_node();
        let params = GcnParams::init(1, 16, 2, 4);
        let (_, cache) = forward(&aff, &fg, &params, false, None).unwrap();
        let g = backward(aff.augmented(), &params, &cache, &DenseMatrix::zeros(1, 2)).unwrap();
        assert!(g.w1.data().iter().chain(g.w2.data()).all(|&v| v == 0.0));
        assert!(backward(aff.augmented(), &params, &cache, &DenseMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn dropout_masks() {
        let plan = DropoutPlan::new(0.3, 9).unwrap();
        let m = plan.masks(0, 50, 20, 16);
        let scale = 1.0 / 0.7;
        assert!(m.input.data().iter().all(|&v| v == 0.0 || v == scale));
        let kept = m.input.data().iter().filter(|&&v| v > 0.0).count() as f64 / 1000.0;
        assert!((kept - 0.7).abs() < 0.05, "{kept}");
        assert_eq!(plan.masks(0, 50, 20, 16), m);
        assert_ne!(plan.masks(1, 50, 20, 16), m);
        let off = DropoutPlan::new(0.0, 9).unwrap().masks(3, 4, 4, 4);
        assert!(off.input.data().iter().all(|&v| v == 1.0));
        assert!(DropoutPlan::new(1.0, 0).is_err());
    }

    #[test]
    fn normalized_propagation_is_symmetric() {
        let aff = build_self_augmented(
            SparseMatrix::from_triplets(3, 3, [(0, 1, 0.4), (1, 0, 0.4), (1, 2, 2.0), (2, 1, 2.0)]).unwrap(),
        )
        .unwrap();
        let p = propagation_matrix(&aff, true);
        assert!(p.is_symmetric(1e-15));
        assert_abs_diff_eq!(p.get(0, 0), 1.0 / 1.4, epsilon = 1e-15);
    }

    fn scalar_params(theta: f64) -> GcnParams {
        GcnParams {
            w1: DenseMatrix::filled(1, 1, theta),
            w2: DenseMatrix::zeros(1, 1),
        }
    }

    #[test]
    fn adam_zero_gradient_no_decay() {
        let mut p = GcnParams::init(3, 4, 2, 0);
        let before = p.clone();
        let mut s = AdamState::new(&p, 0.01, 0.0);
        let zeros = p.zeros_like();
        adam_step(&mut p, &zeros, &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut p = scalar_params(0.5);
        let mut s = AdamState::new(&p, 0.01, 0.0);
        let g = GcnParams {
            w1: DenseMatrix::filled(1, 1, -3.0),
            w2: DenseMatrix::zeros(1, 1),
        };
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_abs_diff_eq!(p.w1[(0, 0)], 0.51, epsilon = 1e-9);
    }

    #[test]
    fn adam_decay_only_trace() {
        let mut p = scalar_params(1.0);
        let mut s = AdamState::new(&p, 0.01, 5e-4);
        adam_step(&mut p, &scalar_params(0.0), &mut s).unwrap();
        // effective gradient 5e-4, so the step is lr * g / (|g| + eps)
        let g = 5e-4;
        assert_abs_diff_eq!(p.w1[(0, 0)], 1.0 - 0.01 * g / (g + 1e-8), epsilon = 1e-15);
        assert_abs_diff_eq!(p.w1[(0, 0)], 0.99, epsilon = 1e-6);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = scalar_params(1.0);
        let mut s = AdamState::new(&p, 0.01, 0.0);
        s.step = 41;
        let err = adam_step(&mut p, &scalar_params(f64::NAN), &mut s).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { step: 41, .. }));
    }
}
