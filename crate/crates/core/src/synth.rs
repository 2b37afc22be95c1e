//! Seeded synthetic scenes: a textured background with colored blobs,
//! imperfect activation maps, class-informative node features, and the
//! two-exponent consistency rule that turns activations into partial
//! labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureGrid, GridShape, NodeLabel, PartialLabelGrid};
use crate::image::RgbImage;
use crate::numeric::DenseMatrix;
use crate::refine::CompleteLabelGrid;

const MAX_COLOR_JITTER: f64 = 0.05;
const MIN_OCCUPANCY: f64 = 0.01;
const MAX_PLACEMENT_TRIES: usize = 200;

// independent RNG streams per generator so changing one knob does not
// reshuffle the others
const STREAM_SCENE: u64 = 1;
const STREAM_CAM: u64 = 2;
const STREAM_FEATURES: u64 = 3;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub image: RgbImage,
    pub ground_truth: CompleteLabelGrid,
    pub num_classes: usize,
    pub seed: u64,
}

/// Per-foreground-class activations on the feature grid, column `c - 1`
/// holding class `c`. Values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CamStack {
    shape: GridShape,
    maps: DenseMatrix,
}

impl CamStack {
    pub fn new(shape: GridShape, maps: DenseMatrix) -> Result<Self> {
        if maps.rows() != shape.len() {
            return Err(Error::invalid("activation rows do not match grid"));
        }
        if maps.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("activation outside [0, 1]"));
        }
        Ok(Self { shape, maps })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn maps(&self) -> &DenseMatrix {
        &self.maps
    }

    pub fn num_classes(&self) -> usize {
        self.maps.cols()
    }

    fn max_activation(&self, i: usize) -> f64 {
        self.maps.row(i).iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let (hf, wf) = (h as f64, w as f64);
        let sy = rng.random_range(hf / 8.0..hf / 3.0);
        let sx = rng.random_range(wf / 8.0..wf / 3.0);
        let cy = rng.random_range(sy / 2.0..hf - sy / 2.0);
        let cx = rng.random_range(sx / 2.0..wf - sx / 2.0);
        if rng.random_bool(0.5) {
            Shape::Rect {
                x0: cx - sx / 2.0,
                y0: cy - sy / 2.0,
                x1: cx + sx / 2.0,
                y1: cy + sy / 2.0,
            }
        } else {
            Shape::Ellipse {
                cx,
                cy,
                rx: sx / 2.0,
                ry: sy / 2.0,
            }
        }
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => px >= x0 && px < x1 && py >= y0 && py < y1,
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((px - cx) / rx, (py - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(0.1..0.9))
}

fn jitter(rng: &mut ChaCha8Rng, color: [f64; 3]) -> [f64; 3] {
    color.map(|c| (c + rng.random_range(-MAX_COLOR_JITTER..=MAX_COLOR_JITTER)).clamp(0.0, 1.0))
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Random axis-aligned and elliptical blobs of each foreground class on a
/// textured background. Later shapes paint over earlier ones; layouts that
/// leave a class under 1% of the image are redrawn.
pub fn make_scene(seed: u64, num_classes: usize, h: usize, w: usize, shapes_per_class: usize) -> Result<SyntheticScene> {
    if num_classes == 0 {
        return Err(Error::invalid("need at least one foreground class"));
    }
    if h < 32 || w < 32 {
        return Err(Error::invalid(format!("scene {h}x{w} smaller than 32x32")));
    }
    let mut rng = rng_for(seed, STREAM_SCENE);
    let shape = GridShape::new(h, w);

    let background = random_color(&mut rng);
    let mut class_colors = Vec::with_capacity(num_classes);
    while class_colors.len() < num_classes {
        let c = random_color(&mut rng);
        let distinct = std::iter::once(&background)
            .chain(&class_colors)
            .all(|&o| color_distance(c, o) > 0.3);
        if distinct {
            class_colors.push(c);
        }
    }

    let mut labels = Vec::new();
    let mut placed = false;
    for _ in 0..MAX_PLACEMENT_TRIES {
        labels = vec![0u16; shape.len()];
        let mut shapes: Vec<(u16, Shape)> = (1..=num_classes as u16)
            .flat_map(|c| (0..shapes_per_class).map(move |_| c))
            .map(|c| (c, Shape::random(&mut rng, h, w)))
            .collect();
        // paint in a random interleaving so no class always ends on top
        for i in (1..shapes.len()).rev() {
            shapes.swap(i, rng.random_range(0..=i));
        }
        for (c, s) in &shapes {
            for y in 0..h {
                for x in 0..w {
                    if s.contains(x, y) {
                        labels[shape.index(x, y)] = *c;
                    }
                }
            }
        }
        if shapes_per_class == 0 || occupancy_ok(&labels, num_classes) {
            placed = true;
            break;
        }
    }
    if !placed {
        return Err(Error::Generation(format!(
            "seed {seed}: no layout met the {MIN_OCCUPANCY} occupancy floor"
        )));
    }

    // low-frequency stripes give the background some texture
    let freq = rng.random_range(2.0..5.0) * std::f64::consts::TAU / w as f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut pixels = Vec::with_capacity(shape.len());
    for (i, &l) in labels.iter().enumerate() {
        let (x, y) = shape.coords(i);
        let base = if l == 0 {
            let t = 0.08 * ((x + y) as f64 * freq + phase).sin();
            background.map(|c| (c + t).clamp(0.0, 1.0))
        } else {
            class_colors[l as usize - 1]
        };
        pixels.push(jitter(&mut rng, base));
    }

    Ok(SyntheticScene {
        image: RgbImage::new(h, w, pixels)?,
        ground_truth: CompleteLabelGrid::new(shape, num_classes, labels)?,
        num_classes,
        seed,
    })
}

fn occupancy_ok(labels: &[u16], num_classes: usize) -> bool {
    let mut counts = vec![0usize; num_classes + 1];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let floor = MIN_OCCUPANCY * labels.len() as f64;
    counts[0] > 0 && counts[1..].iter().all(|&c| c as f64 >= floor)
}

/// Full-resolution pixel sampled for feature-grid cell `k` along an axis.
fn centre_pixel(k: usize, factor: usize, len: usize) -> usize {
    (k * factor + factor / 2).min(len - 1)
}

pub fn feature_shape(scene_shape: GridShape, downscale: usize) -> Result<GridShape> {
    if downscale == 0 || scene_shape.height % downscale != 0 || scene_shape.width % downscale != 0 {
        return Err(Error::invalid(format!(
            "downscale {downscale} must divide {}x{}",
            scene_shape.height, scene_shape.width
        )));
    }
    Ok(GridShape::new(scene_shape.height / downscale, scene_shape.width / downscale))
}

/// Ground truth on the feature grid, sampled at each cell's centre pixel.
pub fn downsample_labels(gt: &CompleteLabelGrid, downscale: usize) -> Result<CompleteLabelGrid> {
    let full = gt.shape();
    let shape = feature_shape(full, downscale)?;
    let labels = (0..shape.len())
        .map(|i| {
            let (x, y) = shape.coords(i);
            gt.get(centre_pixel(x, downscale, full.width), centre_pixel(y, downscale, full.height))
        })
        .collect();
    CompleteLabelGrid::new(shape, gt.num_classes(), labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamParams {
    pub blur_radius: usize,
    pub miss_rate: f64,
    pub noise: f64,
}

/// 4-connected components of `mask` on `shape`.
fn components(mask: &[bool], shape: GridShape) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = shape.coords(i);
            let mut push = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < shape.width {
                push(i + 1);
            }
            if y > 0 {
                push(i - shape.width);
            }
            if y + 1 < shape.height {
                push(i + shape.width);
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn box_blur(values: &[f64], shape: GridShape, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    (0..shape.len())
        .map(|i| {
            let (sum, count) = shape
                .window(i, radius)
                .fold((0.0, 0usize), |(s, n), j| (s + values[j], n + 1));
            sum / count as f64
        })
        .collect()
}

/// Emulates imperfect class activation maps from the ground truth:
/// per-class indicator on the feature grid, whole blobs dropped with
/// probability `miss_rate`, box blur, then additive Gaussian noise
/// truncated at three sigma and clipped to `[0, 1]`.
///
/// Dropping blobs before the (linear) blur equals blurring first and then
/// suppressing each blob's blurred footprint.
pub fn simulate_cams(scene: &SyntheticScene, downscale: usize, params: &CamParams) -> Result<CamStack> {
    if !(0.0..=1.0).contains(&params.miss_rate) || !(params.noise >= 0.0) {
        return Err(Error::invalid("miss rate must be in [0, 1] and noise non-negative"));
    }
    let small = downsample_labels(&scene.ground_truth, downscale)?;
    let shape = small.shape();
    let mut rng = rng_for(scene.seed, STREAM_CAM);
    let noise = (params.noise > 0.0).then(|| Normal::new(0.0, params.noise).expect("valid sigma"));
    let cut = 3.0 * params.noise;

    let mut maps = DenseMatrix::zeros(shape.len(), scene.num_classes);
    for c in 1..=scene.num_classes {
        let mask: Vec<bool> = small.labels().iter().map(|&l| l as usize == c).collect();
        let mut indicator = vec![0.0; shape.len()];
        for blob in components(&mask, shape) {
            if rng.random::<f64>() < params.miss_rate {
                continue;
            }
            for i in blob {
                indicator[i] = 1.0;
            }
        }
        let blurred = box_blur(&indicator, shape, params.blur_radius);
        for (i, v) in blurred.into_iter().enumerate() {
            let n = noise.map_or(0.0, |d| d.sample(&mut rng).clamp(-cut, cut));
            maps[(i, c - 1)] = (v + n).clamp(0.0, 1.0);
        }
    }
    CamStack::new(shape, maps)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub dim: usize,
    pub class_sep: f64,
    pub noise_sigma: f64,
}

/// Per-class mean on the sphere of radius `class_sep`, plus i.i.d.
/// Gaussian noise per node. A node's class is its centre-pixel label.
pub fn simulate_features(scene: &SyntheticScene, downscale: usize, params: &FeatureParams) -> Result<FeatureGrid> {
    if params.dim == 0 || !(params.class_sep >= 0.0) || !(params.noise_sigma >= 0.0) {
        return Err(Error::invalid("feature dim must be >= 1 and scales non-negative"));
    }
    let small = downsample_labels(&scene.ground_truth, downscale)?;
    let mut rng = rng_for(scene.seed, STREAM_FEATURES);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let means: Vec<Vec<f64>> = (0..=scene.num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..params.dim).map(|_| std.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm * params.class_sep).collect()
        })
        .collect();
    let labels = small.labels();
    let features = DenseMatrix::from_fn(labels.len(), params.dim, |i, d| {
        means[labels[i] as usize][d] + params.noise_sigma * std.sample(&mut rng)
    });
    FeatureGrid::new(small.shape(), features)
}

/// `(1 - max_c M_c)^alpha` per node.
pub fn background_map(cams: &CamStack, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    Ok((0..cams.shape.len())
        .map(|i| (1.0 - cams.max_activation(i)).powf(alpha))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyParams {
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub confidence_threshold: f64,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        Self {
            alpha_low: 4.0,
            alpha_high: 32.0,
            confidence_threshold: 0.3,
        }
    }
}

/// Index and value of the maximum of `[bg, cams...]`; ties to the lower index.
fn stack_argmax(bg: f64, cams: &[f64]) -> (usize, f64) {
    let mut best = (0, bg);
    for (c, &v) in cams.iter().enumerate() {
        if v > best.1 {
            best = (c + 1, v);
        }
    }
    best
}

/// Labels a node when the low- and high-exponent background stacks agree on
/// the winning class and both winning scores clear the threshold.
pub fn consistency_partial_labels(cams: &CamStack, params: &ConsistencyParams) -> Result<PartialLabelGrid> {
    if !(params.alpha_low < params.alpha_high) {
        return Err(Error::invalid("alpha_low must be smaller than alpha_high"));
    }
    let low = background_map(cams, params.alpha_low)?;
    let high = background_map(cams, params.alpha_high)?;
    let labels: Vec<NodeLabel> = (0..cams.shape.len())
        .map(|i| {
            let row = cams.maps.row(i);
            let (cl, sl) = stack_argmax(low[i], row);
            let (ch, sh) = stack_argmax(high[i], row);
            (cl == ch && sl.min(sh) >= params.confidence_threshold).then_some(cl as u16)
        })
        .collect();
    PartialLabelGrid::new(cams.shape, cams.num_classes(), labels)
}
