//! Per-image graph: node features on the feature grid, the affinity that
//! defines GCN edges, the guidance image and the partial labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, SparseMatrix};

/// Tolerance used when validating that a loaded affinity is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Height and width of the feature-domain lattice. Node `i` sits at
/// `(x, y) = (i % width, i / width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.width, i / self.width)
    }

    /// Nodes of the `(2r+1)x(2r+1)` window around `i`, clipped at the border,
    /// including `i` itself. Row-major order.
    pub fn window(&self, i: usize, radius: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = self.coords(i);
        let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(self.width - 1));
        let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(self.height - 1));
        (y0..=y1).flat_map(move |yy| (x0..=x1).map(move |xx| self.index(xx, yy)))
    }
}

/// Node feature matrix `V` (N x D) laid out on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    shape: GridShape,
    features: DenseMatrix,
}

impl FeatureGrid {
    pub fn new(shape: GridShape, features: DenseMatrix) -> Result<Self> {
        if features.rows() != shape.len() {
            return Err(Error::invalid(format!(
                "feature matrix has {} rows, grid {}x{} has {} nodes",
                features.rows(),
                shape.height,
                shape.width,
                shape.len()
            )));
        }
        Ok(Self { shape, features })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn num_nodes(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }
}

/// RGB guidance at feature resolution, channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceImage {
    shape: GridShape,
    pixels: DenseMatrix,
}

impl GuidanceImage {
    pub fn new(shape: GridShape, pixels: DenseMatrix) -> Result<Self> {
        if pixels.rows() != shape.len() || pixels.cols() != 3 {
            return Err(Error::invalid(format!(
                "guidance pixels must be {}x3, got {:?}",
                shape.len(),
                pixels.shape()
            )));
        }
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("guidance value {v} outside [0, 1]")));
        }
        Ok(Self { shape, pixels })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn pixels(&self) -> &DenseMatrix {
        &self.pixels
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        self.pixels.row(i)
    }
}

/// A node label: `Some(0)` is background, `Some(c)` for `c >= 1` a foreground
/// class, `None` an ignored node.
pub type NodeLabel = Option<u16>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialLabelGrid {
    shape: GridShape,
    num_classes: usize,
    labels: Vec<NodeLabel>,
}

/// Node index sets derived from a [`PartialLabelGrid`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    pub foreground: Vec<usize>,
    pub background: Vec<usize>,
    pub ignored: Vec<usize>,
}

impl PartialLabelGrid {
    /// `num_classes` counts foreground classes only, so valid labels are
    /// `0..=num_classes`.
    pub fn new(shape: GridShape, num_classes: usize, labels: Vec<NodeLabel>) -> Result<Self> {
        if labels.len() != shape.len() {
            return Err(Error::invalid(format!(
                "{} labels for a grid of {} nodes",
                labels.len(),
                shape.len()
            )));
        }
        if num_classes >= u16::MAX as usize {
            return Err(Error::invalid("too many classes"));
        }
        if let Some((i, c)) = labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&c| c as usize > num_classes).map(|c| (i, c)))
        {
            return Err(Error::invalid(format!(
                "label {c} at node {i} exceeds class count {num_classes}"
            )));
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

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Foreground class count `|C|`.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `|C| + 1`, background included.
    pub fn num_outputs(&self) -> usize {
        self.num_classes + 1
    }

    pub fn labels(&self) -> &[NodeLabel] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> NodeLabel {
        self.labels[i]
    }

    pub fn partition(&self) -> Partition {
        let mut p = Partition::default();
        for (i, l) in self.labels.iter().enumerate() {
            match l {
                Some(0) => p.background.push(i),
                Some(_) => p.foreground.push(i),
                None => p.ignored.push(i),
            }
        }
        p
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// The raw affinity `A` together with `A + I`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAugmentedAffinity {
    a: SparseMatrix,
    a_tilde: SparseMatrix,
}

impl SelfAugmentedAffinity {
    pub fn raw(&self) -> &SparseMatrix {
        &self.a
    }

    pub fn augmented(&self) -> &SparseMatrix {
        &self.a_tilde
    }

    pub fn num_nodes(&self) -> usize {
        self.a.rows()
    }
}

/// Validates `a` and adds self loops.
pub fn build_self_augmented(a: SparseMatrix) -> Result<SelfAugmentedAffinity> {
    validate_affinity(&a)?;
    let n = a.rows();
    let a_tilde = a.add(&SparseMatrix::identity(n))?;
    Ok(SelfAugmentedAffinity { a, a_tilde })
}

pub fn validate_affinity(a: &SparseMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::invalid(format!(
            "affinity must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    for &(r, c, v) in a.entries() {
        if v < 0.0 {
            return Err(Error::invalid(format!("negative affinity {v} at ({r}, {c})")));
        }
        if r == c {
            return Err(Error::invalid(format!("nonzero affinity diagonal at ({r}, {c})")));
        }
    }
    if let Some((r, c)) = a.asymmetry(SYMMETRY_TOL) {
        return Err(Error::invalid(format!(
            "affinity not symmetric at ({r}, {c}): {} vs {}",
            a.get(r, c),
            a.get(c, r)
        )));
    }
    Ok(())
}

/// Parameters of the color/position kernel used by the Laplacian loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Side of the square neighborhood, odd.
    pub window: usize,
    pub sigma_color: f64,
    pub sigma_xy: f64,
    /// Multiplies `[0, 1]` color values before distances are taken.
    pub color_scale: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            window: 5,
            sigma_color: 3f64.sqrt(),
            sigma_xy: 10.0,
            color_scale: 1.0,
        }
    }
}

impl KernelParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::invalid(format!("window must be odd and >= 1, got {}", self.window)));
        }
        if !(self.sigma_color > 0.0 && self.sigma_xy > 0.0 && self.color_scale > 0.0) {
            return Err(Error::invalid("kernel sigmas and color scale must be positive"));
        }
        Ok(())
    }

    /// `exp(-|dc|^2 / (2 sc^2) - |dp|^2 / (2 sxy^2))` for squared color and
    /// position distances.
    pub(crate) fn weight(&self, color_sq: f64, pos_sq: f64) -> f64 {
        let color_sq = color_sq * self.color_scale * self.color_scale;
        (-color_sq / (2.0 * self.sigma_color * self.sigma_color)
            - pos_sq / (2.0 * self.sigma_xy * self.sigma_xy))
            .exp()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The windowed bilateral kernel `Phi` on the feature grid. Includes the
/// diagonal (weight 1). Exactly symmetric.
pub fn build_laplacian_kernel(img: &GuidanceImage, params: &KernelParams) -> Result<SparseMatrix> {
    params.validate()?;
    let shape = img.shape();
    let radius = params.window / 2;
    let mut trips = Vec::with_capacity(shape.len() * params.window * params.window);
    for i in 0..shape.len() {
        let (xi, yi) = shape.coords(i);
        for j in shape.window(i, radius).filter(|&j| j >= i) {
            let (xj, yj) = shape.coords(j);
            let dx = xi as f64 - xj as f64;
            let dy = yi as f64 - yj as f64;
            let w = params.weight(squared_distance(img.pixel(i), img.pixel(j)), dx * dx + dy * dy);
            if w == 0.0 {
                continue;
            }
            trips.push((i, j, w));
            if j != i {
                trips.push((j, i, w));
            }
        }
    }
    SparseMatrix::from_triplets(shape.len(), shape.len(), trips)
}

/// Gaussian feature affinity within a Chebyshev radius; zero diagonal.
///
/// Stands in for a learned affinity network when none is supplied.
pub fn affinity_from_features(fg: &FeatureGrid, radius: usize, gamma: f64) -> Result<SparseMatrix> {
    if radius == 0 {
        return Err(Error::invalid("affinity radius must be >= 1"));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid("affinity gamma must be positive"));
    }
    let shape = fg.shape();
    let v = fg.features();
    let mut trips = Vec::new();
    for i in 0..shape.len() {
        for j in shape.window(i, radius).filter(|&j| j > i) {
            let w = (-gamma * squared_distance(v.row(i), v.row(j))).exp();
            if w > 0.0 {
                trips.push((i, j, w));
                trips.push((j, i, w));
            }
        }
    }
    SparseMatrix::from_triplets(shape.len(), shape.len(), trips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat_guidance(shape: GridShape, color: [f64; 3]) -> GuidanceImage {
        GuidanceImage::new(shape, DenseMatrix::from_fn(shape.len(), 3, |_, c| color[c])).unwrap()
    }

    #[test]
    fn augment_zero_affinity_is_identity() {
        let aff = build_self_augmented(SparseMatrix::empty(3, 3)).unwrap();
        assert_eq!(aff.augmented(), &SparseMatrix::identity(3));
    }

    #[test]
    fn augment_two_nodes() {
        let a = SparseMatrix::from_triplets(2, 2, [(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
        let aff = build_self_augmented(a.clone()).unwrap();
        assert_eq!(
            aff.augmented().to_dense().data(),
            &[1.0, 0.5, 0.5, 1.0]
        );
        assert_eq!(aff.augmented().nnz(), a.nnz() + 2);
        assert_eq!(aff.raw(), &a);
    }

    #[test]
    fn augment_rejects_bad_affinity() {
        let asym = SparseMatrix::from_triplets(2, 2, [(0, 1, 0.5), (1, 0, 0.4)]).unwrap();
        let msg = build_self_augmented(asym).unwrap_err().to_string();
        assert!(msg.contains("(0, 1)"), "{msg}");
        let neg = SparseMatrix::from_triplets(2, 2, [(0, 1, -0.5), (1, 0, -0.5)]).unwrap();
        assert!(build_self_augmented(neg).is_err());
        let diag = SparseMatrix::from_triplets(2, 2, [(1, 1, 0.2)]).unwrap();
        let msg = build_self_augmented(diag).unwrap_err().to_string();
        assert!(msg.contains("(1, 1)"), "{msg}");
    }

    #[test]
    fn kernel_values() {
        let shape = GridShape::new(1, 2);
        let phi = build_laplacian_kernel(&flat_guidance(shape, [0.3; 3]), &KernelParams::default()).unwrap();
        assert_eq!(phi.get(0, 0), 1.0);
        assert_abs_diff_eq!(phi.get(0, 1), (-0.005f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(phi.get(0, 1), 0.995012, epsilon = 1e-6);

        let px = DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let img = GuidanceImage::new(shape, px).unwrap();
        let phi = build_laplacian_kernel(&img, &KernelParams::default()).unwrap();
        let expected = (-1.0f64 / 6.0 - 1.0 / 200.0).exp();
        assert_abs_diff_eq!(phi.get(1, 0), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(phi.get(1, 0), 0.84226, epsilon = 1e-5);
    }

    #[test]
    fn kernel_rejects_even_window() {
        let img = flat_guidance(GridShape::new(2, 2), [0.0; 3]);
        let params = KernelParams {
            window: 4,
            ..Default::default()
        };
        assert!(build_laplacian_kernel(&img, &params).is_err());
    }

    #[test]
    fn kernel_neighborhoods_match_brute_force() {
        let shape = GridShape::new(3, 4);
        let mut k = 0.0;
        let px = DenseMatrix::from_fn(shape.len(), 3, |_, _| {
            k += 0.037;
            k % 1.0
        });
        let img = GuidanceImage::new(shape, px).unwrap();
        let phi = build_laplacian_kernel(&img, &KernelParams::default()).unwrap();
        assert_eq!(phi.transpose(), phi);
        for i in 0..shape.len() {
            let (xi, yi) = shape.coords(i);
            let mut count = 0;
            for y in 0..3i64 {
                for x in 0..4i64 {
                    if (x - xi as i64).abs() <= 2 && (y - yi as i64).abs() <= 2 {
                        count += 1;
                    }
                }
            }
            assert_eq!(phi.row_nnz(i), count, "node {i}");
            assert_eq!(phi.get(i, i), 1.0);
            assert!(phi.row(i).all(|(_, v)| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn feature_affinity() {
        let shape = GridShape::new(1, 2);
        let fg = FeatureGrid::new(shape, DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap()).unwrap();
        let a = affinity_from_features(&fg, 1, 0.5).unwrap();
        assert_abs_diff_eq!(a.get(0, 1), (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(a.get(0, 1), 0.606531, epsilon = 1e-6);
        assert_eq!(a.get(0, 0), 0.0);

        let shape = GridShape::new(3, 3);
        let same = FeatureGrid::new(shape, DenseMatrix::filled(9, 2, 0.7)).unwrap();
        let a = affinity_from_features(&same, 1, 3.0).unwrap();
        assert!(a.entries().iter().all(|e| e.2 == 1.0));
        assert_eq!(a.row_nnz(4), 8);
        build_self_augmented(a).unwrap();

        let far = FeatureGrid::new(shape, DenseMatrix::from_fn(9, 1, |i, _| i as f64 * 100.0)).unwrap();
        assert_eq!(affinity_from_features(&far, 1, 1e6).unwrap().nnz(), 0);
    }

    #[test]
    fn partition_covers_nodes() {
        let p = PartialLabelGrid::new(GridShape::new(2, 2), 2, vec![Some(0), Some(2), None, Some(1)]).unwrap();
        let part = p.partition();
        assert_eq!(part.background, vec![0]);
        assert_eq!(part.foreground, vec![1, 3]);
        assert_eq!(part.ignored, vec![2]);
        assert!(PartialLabelGrid::new(GridShape::new(1, 1), 2, vec![Some(3)]).is_err());
    }
}
