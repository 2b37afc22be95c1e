//! Synthetic scene bundles and their on-disk layout.
//!
//! A scene directory holds `image.ppm`, `gt.pgl1`, `cams.pgt1`
//! (`|C| x h x w`), `features.pgt1` (`h x w x D`), `affinity.pgs1`,
//! `partial.pgl1` and `manifest.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{affinity_from_features, FeatureGrid, GridShape, PartialLabelGrid};
use crate::image::RgbImage;
use crate::io::{
    decode_complete_labels, decode_partial_labels, decode_ppm, decode_sparse, decode_tensor, encode_complete_labels,
    encode_partial_labels, encode_ppm, encode_sparse, encode_tensor, read_file, read_json, write_file, write_json,
    Tensor,
};
use crate::numeric::{DenseMatrix, SparseMatrix};
use crate::refine::CompleteLabelGrid;
use crate::synth::{
    consistency_partial_labels, feature_shape, make_scene, simulate_cams, simulate_features, CamParams, CamStack,
    ConsistencyParams, FeatureParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinityParams {
    /// Chebyshev radius on the feature grid.
    pub radius: usize,
    pub gamma: f64,
}

/// Every knob of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub shapes_per_class: usize,
    /// Full-resolution pixels per feature-grid cell along each axis.
    pub downscale: usize,
    pub cam: CamParams,
    pub features: FeatureParams,
    pub affinity: AffinityParams,
    pub labels: ConsistencyParams,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            num_classes: 3,
            shapes_per_class: 1,
            downscale: 4,
            cam: CamParams {
                blur_radius: 2,
                miss_rate: 0.1,
                noise: 0.1,
            },
            features: FeatureParams {
                dim: 12,
                class_sep: 3.0,
                noise_sigma: 1.5,
            },
            affinity: AffinityParams {
                radius: 1,
                gamma: 0.05,
            },
            labels: ConsistencyParams::default(),
        }
    }
}

/// Everything the pipeline needs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneData {
    pub id: String,
    pub seed: u64,
    pub image: RgbImage,
    pub ground_truth: CompleteLabelGrid,
    pub cams: CamStack,
    pub features: FeatureGrid,
    /// Raw affinity `A` (no self loops).
    pub affinity: SparseMatrix,
    pub partial: PartialLabelGrid,
}

impl SceneData {
    pub fn feature_shape(&self) -> GridShape {
        self.features.shape()
    }

    pub fn num_classes(&self) -> usize {
        self.ground_truth.num_classes()
    }
}

pub fn scene_id(seed: u64) -> String {
    format!("scene_{seed:06}")
}

pub fn generate_scene(seed: u64, params: &SynthParams) -> Result<SceneData> {
    let scene = make_scene(seed, params.num_classes, params.height, params.width, params.shapes_per_class)?;
    let cams = simulate_cams(&scene, params.downscale, &params.cam)?;
    let features = simulate_features(&scene, params.downscale, &params.features)?;
    let affinity = affinity_from_features(&features, params.affinity.radius, params.affinity.gamma)?;
    let partial = consistency_partial_labels(&cams, &params.labels)?;
    Ok(SceneData {
        id: scene_id(seed),
        seed,
        image: scene.image,
        ground_truth: scene.ground_truth,
        cams,
        features,
        affinity,
        partial,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub id: String,
    pub seed: u64,
    pub params: SynthParams,
}

/// Rank-3 `(planes, h, w)` tensor from an `N x planes` matrix.
fn planes_tensor(shape: GridShape, m: &DenseMatrix) -> Tensor {
    let t = m.transpose();
    Tensor {
        dims: vec![m.cols(), shape.height, shape.width],
        data: t.into_vec(),
    }
}

fn planes_matrix(t: Tensor) -> Result<(GridShape, DenseMatrix)> {
    let [k, h, w] = t.dims[..] else {
        return Err(Error::format("PGT1", format!("expected rank 3, got {:?}", t.dims)));
    };
    let m = DenseMatrix::from_vec(k, h * w, t.data)?.transpose();
    Ok((GridShape::new(h, w), m))
}

pub fn save_scene(dir: &Path, scene: &SceneData, params: &SynthParams) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let shape = scene.feature_shape();
    write_file(&dir.join("image.ppm"), &encode_ppm(&scene.image))?;
    write_file(&dir.join("gt.pgl1"), &encode_complete_labels(&scene.ground_truth)?)?;
    write_file(&dir.join("cams.pgt1"), &encode_tensor(&planes_tensor(shape, scene.cams.maps()))?)?;
    let feats = Tensor {
        dims: vec![shape.height, shape.width, scene.features.dim()],
        data: scene.features.features().data().to_vec(),
    };
    write_file(&dir.join("features.pgt1"), &encode_tensor(&feats)?)?;
    write_file(&dir.join("affinity.pgs1"), &encode_sparse(&scene.affinity)?)?;
    write_file(&dir.join("partial.pgl1"), &encode_partial_labels(&scene.partial)?)?;
    let manifest = SceneManifest {
        id: scene.id.clone(),
        seed: scene.seed,
        params: params.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Loads a scene directory. The image is re-quantized to 8 bits on disk, so
/// a loaded scene can differ from the generated one by up to 1/510 per
/// channel.
pub fn load_scene(dir: &Path) -> Result<SceneData> {
    let manifest: SceneManifest = read_json(&dir.join("manifest.json"))?;
    let image = decode_ppm(&read_file(&dir.join("image.ppm"))?)?;
    let ground_truth = decode_complete_labels(&read_file(&dir.join("gt.pgl1"))?)?;
    let (cam_shape, cam_maps) = planes_matrix(decode_tensor(&read_file(&dir.join("cams.pgt1"))?)?)?;
    let cams = CamStack::new(cam_shape, cam_maps)?;
    let ft = decode_tensor(&read_file(&dir.join("features.pgt1"))?)?;
    let [h, w, d] = ft.dims[..] else {
        return Err(Error::format("PGT1", "features must be rank 3 (h, w, D)"));
    };
    let features = FeatureGrid::new(GridShape::new(h, w), DenseMatrix::from_vec(h * w, d, ft.data)?)?;
    let affinity = decode_sparse(&read_file(&dir.join("affinity.pgs1"))?)?;
    let partial = decode_partial_labels(&read_file(&dir.join("partial.pgl1"))?)?;

    let expected = feature_shape(ground_truth.shape(), manifest.params.downscale)?;
    if image.shape() != ground_truth.shape()
        || cams.shape() != expected
        || features.shape() != expected
        || partial.shape() != expected
        || affinity.rows() != expected.len()
    {
        return Err(Error::format("scene", format!("{}: inconsistent file dimensions", dir.display())));
    }
    Ok(SceneData {
        id: manifest.id,
        seed: manifest.seed,
        image,
        ground_truth,
        cams,
        features,
        affinity,
        partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_round_trips_through_disk() {
        let params = SynthParams {
            height: 32,
            width: 32,
            ..Default::default()
        };
        let scene = generate_scene(4, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(dir.path(), &scene, &params).unwrap();
        let back = load_scene(dir.path()).unwrap();
        assert_eq!(back.ground_truth, scene.ground_truth);
        assert_eq!(back.cams, scene.cams);
        assert_eq!(back.features, scene.features);
        assert_eq!(back.affinity, scene.affinity);
        assert_eq!(back.partial, scene.partial);
        let max_err = back
            .image
            .pixels()
            .iter()
            .flatten()
            .zip(scene.image.pixels().iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 0.5 / 255.0 + 1e-12);
    }
}
