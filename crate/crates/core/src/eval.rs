//! Confusion matrices and mean intersection-over-union.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refine::CompleteLabelGrid;

/// `counts[g][p]` = pixels with ground truth `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn transpose(&self) -> Self {
        let k = self.classes();
        Self {
            counts: (0..k).map(|p| (0..k).map(|g| self.counts[g][p]).collect()).collect(),
        }
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::invalid("confusion matrices differ in class count"));
        }
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        Ok(())
    }
}

/// Exact pixel counts; `K` is the larger of the two grids' label spaces.
pub fn confusion(gt: &CompleteLabelGrid, pred: &CompleteLabelGrid) -> Result<ConfusionMatrix> {
    if gt.shape() != pred.shape() {
        return Err(Error::invalid(format!(
            "ground truth is {:?}, prediction is {:?}",
            gt.shape(),
            pred.shape()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(gt.num_classes().max(pred.num_classes()) + 1);
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        cm.counts[g as usize][p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiouResult {
    pub miou: f64,
    /// `None` for classes absent from both ground truth and prediction.
    pub per_class: Vec<Option<f64>>,
}

/// `IoU_c = TP / (TP + FP + FN)`, averaged over classes with a non-zero
/// denominator.
pub fn miou(cm: &ConfusionMatrix) -> Result<MiouResult> {
    let k = cm.classes();
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let fn_ = cm.counts[c].iter().sum::<u64>() - tp;
            let fp = (0..k).map(|g| cm.counts[g][c]).sum::<u64>() - tp;
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::UndefinedMetric("no class present in ground truth or prediction".into()));
    }
    Ok(MiouResult {
        miou: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GridShape;
    use proptest::prelude::*;

    fn grid(labels: Vec<u16>, classes: usize) -> CompleteLabelGrid {
        CompleteLabelGrid::new(GridShape::new(2, labels.len() / 2), classes, labels).unwrap()
    }

    #[test]
    fn hand_case() {
        let cm = confusion(&grid(vec![0, 0, 1, 1], 1), &grid(vec![0, 1, 1, 1], 1)).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (1, 1, 0, 2));
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.miou - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_constant() {
        let gt = grid(vec![0, 2, 1, 1, 2, 0], 2);
        let cm = confusion(&gt, &gt).unwrap();
        assert!((0..3).all(|g| (0..3).all(|p| g == p || cm.get(g, p) == 0)));
        assert_eq!(miou(&cm).unwrap().miou, 1.0);

        let zeros = grid(vec![0; 6], 2);
        let cm = confusion(&gt, &zeros).unwrap();
        assert!((0..3).all(|g| cm.get(g, 1) == 0 && cm.get(g, 2) == 0));
        assert_eq!(miou(&cm).unwrap().per_class[1], Some(0.0));
    }

    #[test]
    fn absent_classes_excluded() {
        let gt = grid(vec![0, 0, 1, 1], 3);
        let r = miou(&confusion(&gt, &gt).unwrap()).unwrap();
        assert_eq!(r.per_class, vec![Some(1.0), Some(1.0), None, None]);
        assert_eq!(r.miou, 1.0);
        assert!(miou(&ConfusionMatrix::zeros(3)).is_err());
    }

    #[test]
    fn dims_must_match() {
        let a = grid(vec![0, 0, 1, 1], 1);
        let b = CompleteLabelGrid::new(GridShape::new(1, 4), 1, vec![0, 0, 1, 1]).unwrap();
        assert!(confusion(&a, &b).is_err());
    }

    proptest! {
        #[test]
        fn swap_transposes(pairs in proptest::collection::vec((0u16..4, 0u16..4), 2..40)) {
            let n = pairs.len() / 2 * 2;
            let a = grid(pairs[..n].iter().map(|p| p.0).collect(), 3);
            let b = grid(pairs[..n].iter().map(|p| p.1).collect(), 3);
            prop_assert_eq!(confusion(&a, &b).unwrap(), confusion(&b, &a).unwrap().transpose());
        }

        #[test]
        fn relabeling_permutes_iou(pairs in proptest::collection::vec((0u16..3, 0u16..3), 2..40)) {
            let n = pairs.len() / 2 * 2;
            let perm = [2u16, 0, 1];
            let a = grid(pairs[..n].iter().map(|p| p.0).collect(), 2);
            let b = grid(pairs[..n].iter().map(|p| p.1).collect(), 2);
            let pa = grid(pairs[..n].iter().map(|p| perm[p.0 as usize]).collect(), 2);
            let pb = grid(pairs[..n].iter().map(|p| perm[p.1 as usize]).collect(), 2);
            let r = miou(&confusion(&a, &b).unwrap()).unwrap();
            let rp = miou(&confusion(&pa, &pb).unwrap()).unwrap();
            prop_assert!((r.miou - rp.miou).abs() < 1e-12);
            for c in 0..3 {
                prop_assert_eq!(r.per_class[c], rp.per_class[perm[c] as usize]);
            }
        }
    }
}
