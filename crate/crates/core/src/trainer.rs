//! Per-image semi-supervised training of a fresh GCN.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{
    adam_step, backward, forward_matrices, propagation_matrix, AdamState, ClassProbGrid, DropoutPlan,
    GcnParams, DEFAULT_HIDDEN,
};
use crate::graph::{build_laplacian_kernel, FeatureGrid, GuidanceImage, KernelParams, PartialLabelGrid, SelfAugmentedAffinity};
use crate::losses::{total_loss, LossBreakdown, LossMask, LossWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub loss_mask: LossMask,
    pub hidden: usize,
    /// Use `D^-1/2 (A + I) D^-1/2` instead of `A + I`.
    pub normalize_adj: bool,
    pub kernel: KernelParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 250,
            lr: 0.01,
            weight_decay: 5e-4,
            dropout: 0.3,
            weights: LossWeights::default(),
            seed: 0,
            loss_mask: LossMask::default(),
            hidden: DEFAULT_HIDDEN,
            normalize_adj: false,
            kernel: KernelParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be >= 1"));
        }
        if !(self.lr > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate must be positive and weight decay non-negative"));
        }
        LossWeights::new(self.weights.beta1, self.weights.beta2)?;
        DropoutPlan::new(self.dropout, self.seed)?;
        if self.loss_mask.use_lp {
            self.kernel.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub trace: Vec<LossBreakdown>,
    pub params: GcnParams,
    /// Inference-mode output of the trained network.
    pub probs: ClassProbGrid,
    pub wall_time: Duration,
}

/// Trains a GCN from scratch on one image and returns its final
/// predictions. The Laplacian kernel is only built (and `guidance` only
/// read) when the Laplacian term is enabled.
pub fn train_image(
    aff: &SelfAugmentedAffinity,
    fg: &FeatureGrid,
    guidance: &GuidanceImage,
    p: &PartialLabelGrid,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let start = Instant::now();
    cfg.validate()?;
    let n = fg.num_nodes();
    if aff.num_nodes() != n || p.num_nodes() != n {
        return Err(Error::invalid(format!(
            "node counts disagree: affinity {}, features {n}, labels {}",
            aff.num_nodes(),
            p.num_nodes()
        )));
    }
    if p.labeled_count() == 0 {
        return Err(Error::invalid("degenerate supervision: no labeled nodes"));
    }
    let phi = if cfg.loss_mask.use_lp {
        if guidance.shape() != fg.shape() {
            return Err(Error::invalid("guidance image does not match the feature grid"));
        }
        Some(build_laplacian_kernel(guidance, &cfg.kernel)?)
    } else {
        None
    };

    let prop = propagation_matrix(aff, cfg.normalize_adj);
    let mut params = GcnParams::init(fg.dim(), cfg.hidden, p.num_outputs(), cfg.seed);
    let mut adam = AdamState::new(&params, cfg.lr, cfg.weight_decay);
    let dropout = DropoutPlan::new(cfg.dropout, cfg.seed)?;
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let masks = (cfg.dropout > 0.0).then(|| dropout.masks(step, n, fg.dim(), cfg.hidden));
        let cache = forward_matrices(&prop, fg.features(), &params, masks.as_ref())?;
        let (breakdown, grad_q) = total_loss(cache.probs(), p, phi.as_ref(), cfg.weights, cfg.loss_mask)?;
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteLoss { step, trace });
        }
        trace.push(breakdown);
        let grads = backward(&prop, &params, &cache, &grad_q)?;
        adam_step(&mut params, &grads, &mut adam)?;
    }

    let probs = forward_matrices(&prop, fg.features(), &params, None)?.into_probs();
    Ok(TrainReport {
        trace,
        params,
        probs: ClassProbGrid::new(fg.shape(), probs)?,
        wall_time: start.elapsed(),
    })
}
