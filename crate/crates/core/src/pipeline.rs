//! End-to-end runs over scenes: GCN pseudo labels, the random-walk
//! baseline, and the loss-ablation harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{baseline_complete_labels, transition_matrix, ScoreGrid};
use crate::dataset::SceneData;
use crate::error::{Error, Result};
use crate::eval::{confusion, miou, MiouResult};
use crate::graph::build_self_augmented;
use crate::losses::LossMask;
use crate::numeric::DenseMatrix;
use crate::refine::{complete_labels, CompleteLabelGrid, MeanFieldParams};
use crate::synth::{background_map, CamStack};
use crate::trainer::{train_image, TrainConfig, TrainReport};

/// Random-walk settings. `bg_alpha` is the exponent of the background
/// score stacked in front of the activations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub hadamard_beta: f64,
    pub iters: usize,
    pub bg_alpha: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            hadamard_beta: 8.0,
            iters: 16,
            bg_alpha: 4.0,
        }
    }
}

/// SHA-256 of the canonical JSON encoding, hex encoded.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize");
    let digest = Sha256::digest(&json);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// `[bg; cams]` score stack used by the random walk.
pub fn cam_scores(cams: &CamStack, bg_alpha: f64) -> Result<ScoreGrid> {
    let bg = background_map(cams, bg_alpha)?;
    let maps = cams.maps();
    let scores = DenseMatrix::from_fn(maps.rows(), maps.cols() + 1, |i, c| if c == 0 { bg[i] } else { maps[(i, c - 1)] });
    ScoreGrid::new(cams.shape(), scores)
}

/// Trains the per-image GCN and converts its output to complete labels.
pub fn run_gcn(scene: &SceneData, cfg: &TrainConfig, refine: Option<&MeanFieldParams>) -> Result<(CompleteLabelGrid, TrainReport)> {
    let aff = build_self_augmented(scene.affinity.clone())?;
    let guidance = scene.image.to_guidance(scene.feature_shape())?;
    let report = train_image(&aff, &scene.features, &guidance, &scene.partial, cfg)?;
    let labels = complete_labels(&report.probs, &scene.image, refine)?;
    Ok((labels, report))
}

pub fn run_baseline(scene: &SceneData, cfg: &BaselineConfig, refine: Option<&MeanFieldParams>) -> Result<CompleteLabelGrid> {
    let scores = cam_scores(&scene.cams, cfg.bg_alpha)?;
    let t = transition_matrix(&scene.affinity, cfg.hadamard_beta)?;
    baseline_complete_labels(&scores, &t, cfg.iters, &scene.image, refine)
}

pub fn score(scene: &SceneData, pred: &CompleteLabelGrid) -> Result<MiouResult> {
    miou(&confusion(&scene.ground_truth, pred)?)
}

/// One row of the loss ablation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: String,
    pub mask: LossMask,
    pub refine: bool,
}

impl AblationConfig {
    pub fn new(use_ent: bool, use_lp: bool, refine: bool) -> Self {
        let mut name = String::from("base");
        if use_ent {
            name.push_str("+ent");
        }
        if use_lp {
            name.push_str("+lp");
        }
        if refine {
            name.push_str("+refine");
        }
        Self {
            name,
            mask: LossMask { use_ent, use_lp },
            refine,
        }
    }

    /// The seven loss/refinement combinations of the ablation table.
    pub fn standard_grid() -> Vec<Self> {
        vec![
            Self::new(false, false, false),
            Self::new(true, false, false),
            Self::new(false, true, false),
            Self::new(true, true, false),
            Self::new(true, false, true),
            Self::new(false, true, true),
            Self::new(true, true, true),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene: String,
    pub seed: u64,
    pub config: String,
    pub config_hash: String,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub use_ent: bool,
    pub use_lp: bool,
    pub refine: bool,
    pub mean_miou: f64,
    pub scenes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub records: Vec<SceneRecord>,
    /// `(scene, message)` for scenes that failed and were left out.
    pub failures: Vec<(String, String)>,
}

impl AblationTable {
    pub fn mean(&self, config: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.config == config).map(|r| r.mean_miou)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,use_ent,use_lp,refine,mean_miou,scenes\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{}\n",
                r.config, r.use_ent, r.use_lp, r.refine, r.mean_miou, r.scenes
            ));
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
struct HashedConfig<'a> {
    train: &'a TrainConfig,
    refine: Option<&'a MeanFieldParams>,
}

fn scene_ablation(scene: &SceneData, base: &TrainConfig, refine: &MeanFieldParams, configs: &[AblationConfig]) -> Result<Vec<SceneRecord>> {
    let mut records = Vec::with_capacity(configs.len());
    // configs that differ only in refinement share one trained network
    let mut trained: Vec<(LossMask, TrainReport)> = Vec::new();
    for cfg in configs {
        let train_cfg = TrainConfig {
            loss_mask: cfg.mask,
            ..base.clone()
        };
        let idx = match trained.iter().position(|(m, _)| *m == cfg.mask) {
            Some(i) => i,
            None => {
                let aff = build_self_augmented(scene.affinity.clone())?;
                let guidance = scene.image.to_guidance(scene.feature_shape())?;
                let report = train_image(&aff, &scene.features, &guidance, &scene.partial, &train_cfg)?;
                trained.push((cfg.mask, report));
                trained.len() - 1
            }
        };
        let refine = cfg.refine.then_some(refine);
        let labels = complete_labels(&trained[idx].1.probs, &scene.image, refine)?;
        let m = score(scene, &labels)?;
        records.push(SceneRecord {
            scene: scene.id.clone(),
            seed: scene.seed,
            config: cfg.name.clone(),
            config_hash: config_hash(&HashedConfig { train: &train_cfg, refine }),
            miou: m.miou,
            per_class_iou: m.per_class,
        });
    }
    Ok(records)
}

/// Runs every configuration on every scene over `workers` threads and
/// averages mIoU per configuration. Failing scenes are excluded and listed.
pub fn ablation_harness(
    scenes: &[SceneData],
    base: &TrainConfig,
    refine: &MeanFieldParams,
    configs: &[AblationConfig],
    workers: usize,
) -> Result<AblationTable> {
    if scenes.is_empty() {
        return Err(Error::invalid("no scenes"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        scenes
            .par_iter()
            .map(|s| (s.id.clone(), scene_ablation(s, base, refine, configs)))
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(mut recs) => records.append(&mut recs),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    let rows = configs
        .iter()
        .map(|cfg| {
            let vals: Vec<f64> = records.iter().filter(|r| r.config == cfg.name).map(|r| r.miou).collect();
            AblationRow {
                config: cfg.name.clone(),
                use_ent: cfg.mask.use_ent,
                use_lp: cfg.mask.use_lp,
                refine: cfg.refine,
                mean_miou: if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 },
                scenes: vals.len(),
            }
        })
        .collect();
    Ok(AblationTable { rows, records, failures })
}
