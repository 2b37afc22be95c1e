//! Full-resolution RGB images and bilinear resampling.

use crate::error::{Error, Result};
use crate::graph::{GridShape, GuidanceImage};
use crate::numeric::DenseMatrix;

/// RGB image with channels in `[0, 1]`, row-major pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if pixels.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image channel outside [0, 1]"));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, color: [f64; 3]) -> Self {
        Self {
            height,
            width,
            pixels: vec![color; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.height, self.width)
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    /// Bilinear downscale to the feature grid, as used for the Laplacian
    /// kernel.
    pub fn to_guidance(&self, shape: GridShape) -> Result<GuidanceImage> {
        let planes = DenseMatrix::from_fn(self.pixels.len(), 3, |i, c| self.pixels[i][c]);
        let resized = resize_bilinear(&planes, self.shape(), shape)?;
        // interpolation of [0, 1] values stays in range up to rounding
        GuidanceImage::new(shape, resized.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Source coordinate and blend weight along one axis under half-pixel
/// centre alignment, clamped at the edges.
fn axis_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Channel-wise bilinear resize of an `(h*w) x channels` matrix.
pub fn resize_bilinear(src: &DenseMatrix, from: GridShape, to: GridShape) -> Result<DenseMatrix> {
    if src.rows() != from.len() {
        return Err(Error::invalid("source rows do not match its grid"));
    }
    if from.is_empty() || to.is_empty() {
        return Err(Error::invalid("resize dimensions must be non-zero"));
    }
    let channels = src.cols();
    let xs: Vec<_> = (0..to.width).map(|x| axis_taps(x, from.width, to.width)).collect();
    let ys: Vec<_> = (0..to.height).map(|y| axis_taps(y, from.height, to.height)).collect();
    let mut out = DenseMatrix::zeros(to.len(), channels);
    for (y, &(y0, y1, ty)) in ys.iter().enumerate() {
        for (x, &(x0, x1, tx)) in xs.iter().enumerate() {
            let (a, b) = (src.row(from.index(x0, y0)), src.row(from.index(x1, y0)));
            let (c, d) = (src.row(from.index(x0, y1)), src.row(from.index(x1, y1)));
            let o = out.row_mut(to.index(x, y));
            for k in 0..channels {
                let top = a[k] + (b[k] - a[k]) * tx;
                let bottom = c[k] + (d[k] - c[k]) * tx;
                o[k] = top + (bottom - top) * ty;
            }
        }
    }
    Ok(out)
}
