//! From feature-grid probabilities to full-resolution complete labels:
//! bilinear upsampling, a windowed bilateral mean-field pass, and argmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::ClassProbGrid;
use crate::graph::{GridShape, KernelParams};
use crate::image::{resize_bilinear, RgbImage};
use crate::losses::PROB_EPS;
use crate::numeric::{softmax_in_place, DenseMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct FullResProbMap {
    shape: GridShape,
    probs: DenseMatrix,
}

impl FullResProbMap {
    pub fn new(shape: GridShape, probs: DenseMatrix) -> Result<Self> {
        if probs.rows() != shape.len() || probs.cols() == 0 {
            return Err(Error::invalid("probability map does not match its shape"));
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

/// Fully assigned per-pixel labels in `0..=num_classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompleteLabelGrid {
    shape: GridShape,
    num_classes: usize,
    labels: Vec<u16>,
}

impl CompleteLabelGrid {
    /// `num_classes` counts foreground classes; labels must be `<= num_classes`.
    pub fn new(shape: GridShape, num_classes: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != shape.len() {
            return Err(Error::invalid(format!(
                "{} labels for a {}x{} grid",
                labels.len(),
                shape.height,
                shape.width
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize > num_classes) {
            return Err(Error::invalid(format!("label {l} exceeds class count {num_classes}")));
        }
        Ok(Self {
            shape,
            num_classes,
            labels,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[self.shape.index(x, y)]
    }
}

fn renormalize_rows(m: &mut DenseMatrix) {
    let k = m.cols() as f64;
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        row.iter_mut().for_each(|v| *v = v.max(0.0));
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / k);
        }
    }
}

/// Half-pixel-aligned bilinear upsampling of every class channel, followed
/// by per-pixel renormalization.
pub fn bilinear_upsample(q: &ClassProbGrid, out_h: usize, out_w: usize) -> Result<FullResProbMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("output dimensions must be non-zero"));
    }
    let from = q.shape();
    if out_h < from.height || out_w < from.width {
        return Err(Error::invalid(format!(
            "cannot upsample {}x{} to smaller {out_h}x{out_w}",
            from.height, from.width
        )));
    }
    let to = GridShape::new(out_h, out_w);
    let mut probs = resize_bilinear(q.probs(), from, to)?;
    renormalize_rows(&mut probs);
    FullResProbMap::new(to, probs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanFieldParams {
    pub iters: usize,
    /// Bilateral kernel on the full-resolution image; `sigma_xy` in pixels.
    pub kernel: KernelParams,
    pub w_pair: f64,
}

impl Default for MeanFieldParams {
    fn default() -> Self {
        Self {
            iters: 5,
            kernel: KernelParams {
                window: 7,
                ..KernelParams::default()
            },
            w_pair: 1.0,
        }
    }
}

/// Windowed bilateral mean-field smoothing:
/// `q_i <- softmax(log q0_i + w * sum_{j != i} k(i, j) q_j)`, Jacobi style.
pub fn meanfield_refine(probs: &FullResProbMap, image: &RgbImage, params: &MeanFieldParams) -> Result<FullResProbMap> {
    params.kernel.validate()?;
    let shape = probs.shape();
    if image.shape() != shape {
        return Err(Error::invalid(format!(
            "image is {}x{}, probabilities are {}x{}",
            image.height(),
            image.width(),
            shape.height,
            shape.width
        )));
    }
    if params.iters == 0 {
        return Ok(probs.clone());
    }

    let radius = params.kernel.window / 2;
    let px = image.pixels();
    let kernel: Vec<Vec<(usize, f64)>> = (0..shape.len())
        .map(|i| {
            let (xi, yi) = shape.coords(i);
            shape
                .window(i, radius)
                .filter(|&j| j != i)
                .map(|j| {
                    let (xj, yj) = shape.coords(j);
                    let color: f64 = (0..3).map(|c| (px[i][c] - px[j][c]).powi(2)).sum();
                    let pos = (xi as f64 - xj as f64).powi(2) + (yi as f64 - yj as f64).powi(2);
                    (j, params.kernel.weight(color, pos))
                })
                .collect()
        })
        .collect();

    let unary = probs.probs().map(|v| v.max(PROB_EPS).ln());
    let k = probs.classes();
    let mut q = probs.probs().clone();
    let mut message = vec![0.0; k];
    for _ in 0..params.iters {
        let mut next = DenseMatrix::zeros(shape.len(), k);
        for (i, neighbors) in kernel.iter().enumerate() {
            message.iter_mut().for_each(|m| *m = 0.0);
            for &(j, w) in neighbors {
                for (m, &qj) in message.iter_mut().zip(q.row(j)) {
                    *m += w * qj;
                }
            }
            let row = next.row_mut(i);
            for c in 0..k {
                row[c] = unary[(i, c)] + params.w_pair * message[c];
            }
            softmax_in_place(row);
        }
        q = next;
    }
    FullResProbMap::new(shape, q)
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_labels(probs: &FullResProbMap) -> CompleteLabelGrid {
    let labels = probs
        .probs()
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u16
        })
        .collect();
    CompleteLabelGrid {
        shape: probs.shape(),
        num_classes: probs.classes() - 1,
        labels,
    }
}

/// Upsample, optionally refine, and take the argmax.
pub fn complete_labels(q: &ClassProbGrid, image: &RgbImage, refine: Option<&MeanFieldParams>) -> Result<CompleteLabelGrid> {
    let up = bilinear_upsample(q, image.height(), image.width())?;
    let up = match refine {
        Some(params) => meanfield_refine(&up, image, params)?,
        None => up,
    };
    Ok(argmax_labels(&up))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(shape: GridShape, rows: Vec<Vec<f64>>) -> ClassProbGrid {
        ClassProbGrid::new(shape, DenseMatrix::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn upsample_identity_and_constant() {
        let shape = GridShape::new(2, 2);
        let q = grid(shape, vec![vec![0.2, 0.8], vec![0.5, 0.5], vec![1.0, 0.0], vec![0.3, 0.7]]);
        assert_eq!(bilinear_upsample(&q, 2, 2).unwrap().probs(), q.probs());

        let q = grid(shape, vec![vec![0.25, 0.75]; 4]);
        let up = bilinear_upsample(&q, 7, 9).unwrap();
        for row in up.probs().iter_rows() {
            assert!((row[0] - 0.25).abs() < 1e-15 && (row[1] - 0.75).abs() < 1e-15);
        }
        assert!(bilinear_upsample(&q, 0, 4).is_err());
        assert!(bilinear_upsample(&q, 1, 4).is_err());
    }

    #[test]
    fn upsample_hand_case() {
        let q = grid(GridShape::new(1, 2), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let up = bilinear_upsample(&q, 1, 4).unwrap();
        let ch1: Vec<f64> = up.probs().iter_rows().map(|r| r[1]).collect();
        assert_eq!(ch1, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn region_partition_survives_upsampling() {
        // 2x2 regions each of one class, upsampled x4
        let shape = GridShape::new(4, 4);
        let classes = [0u16, 0, 1, 1, 0, 0, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2];
        let rows = classes
            .iter()
            .map(|&c| (0..3).map(|k| if k == c as usize { 0.8 } else { 0.1 }).collect())
            .collect();
        let labels = argmax_labels(&bilinear_upsample(&grid(shape, rows), 16, 16).unwrap());
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(labels.get(x, y), classes[(y / 4) * 4 + x / 4]);
            }
        }
    }

    #[test]
    fn argmax_rules() {
        let shape = GridShape::new(1, 3);
        let m = FullResProbMap::new(
            shape,
            DenseMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.5, 0.5, 0.0], vec![0.2, 0.3, 0.5]]).unwrap(),
        )
        .unwrap();
        assert_eq!(argmax_labels(&m).labels(), &[1, 0, 2]);
    }

    #[test]
    fn meanfield_identity_cases() {
        let shape = GridShape::new(5, 5);
        let probs = FullResProbMap::new(shape, DenseMatrix::from_fn(25, 2, |i, c| if c == 0 { 0.3 + 0.01 * i as f64 } else { 0.7 - 0.01 * i as f64 })).unwrap();
        let img = RgbImage::filled(5, 5, [0.1, 0.2, 0.3]);
        let params = MeanFieldParams { iters: 0, ..Default::default() };
        assert_eq!(meanfield_refine(&probs, &img, &params).unwrap(), probs);

        let flat = FullResProbMap::new(shape, DenseMatrix::from_fn(25, 2, |_, c| [0.4, 0.6][c])).unwrap();
        let out = meanfield_refine(&flat, &img, &MeanFieldParams::default()).unwrap();
        for row in out.probs().iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let even = MeanFieldParams {
            kernel: KernelParams { window: 6, ..Default::default() },
            ..Default::default()
        };
        assert!(meanfield_refine(&flat, &img, &even).is_err());
    }

    #[test]
    fn meanfield_uniform_probs_fixed_point() {
        let shape = GridShape::new(6, 6);
        let flat = FullResProbMap::new(shape, DenseMatrix::filled(36, 3, 1.0 / 3.0)).unwrap();
        let img = RgbImage::filled(6, 6, [0.5; 3]);
        let out = meanfield_refine(&flat, &img, &MeanFieldParams::default()).unwrap();
        assert!(out.probs().max_abs_diff(flat.probs()) < 1e-15);
    }
}
