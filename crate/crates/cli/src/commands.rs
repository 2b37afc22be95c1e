use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pseudograph::dataset::{generate_scene, load_scene, save_scene, scene_id, SceneData, SynthParams};
use pseudograph::io::{
    decode_complete_labels, encode_complete_labels, read_file, render_labels, save_checkpoint, write_file, write_json,
};
use pseudograph::losses::LossBreakdown;
use pseudograph::pipeline::{ablation_harness, run_baseline, run_gcn, score, AblationConfig, AblationTable};
use pseudograph::eval::{confusion, miou};
use pseudograph::{Error, Result};

use crate::manifest::RunManifest;
use crate::{CliError, CliResult};

/// Per-scene outcome. Written to `<out>/<scene>/metrics.json` and collected
/// into the run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene: String,
    pub seed: u64,
    pub config_hash: String,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<LossBreakdown>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFailure {
    pub scene: String,
    pub error: String,
}

/// Aggregate written to `<out>/summary.json`. Contains no timing fields so
/// reruns compare byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub config_hash: String,
    pub scenes: usize,
    pub mean_miou: Option<f64>,
    pub records: Vec<SceneMetrics>,
    pub failures: Vec<SceneFailure>,
}

#[derive(Serialize)]
struct TimedMetrics<'a> {
    #[serde(flatten)]
    metrics: &'a SceneMetrics,
    wall_time_ms: u128,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))
}

fn dir_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Writes `count` scenes starting at `seed` under `out`, plus a
/// `manifest.json` listing them with default run settings.
pub fn cmd_generate(out: &Path, seed: u64, count: u64, params: &SynthParams, workers: usize) -> CliResult<RunManifest> {
    if count == 0 {
        return Err(Error::InvalidInput("scene count must be at least 1".into()).into());
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let seeds: Vec<u64> = (seed..seed + count).collect();
    pool(workers)?.install(|| {
        seeds.par_iter().try_for_each(|&s| {
            let scene = generate_scene(s, params)?;
            save_scene(&out.join(scene_id(s)), &scene, params)
        })
    })?;
    let scenes = seeds.iter().map(|&s| PathBuf::from(scene_id(s))).collect();
    let manifest = RunManifest::new(scenes, PathBuf::from("run"));
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

fn finish(command: &str, manifest: &RunManifest, results: Vec<std::result::Result<SceneMetrics, SceneFailure>>) -> CliResult<RunSummary> {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(m) => records.push(m),
            Err(f) => failures.push(f),
        }
    }
    let summary = RunSummary {
        command: command.to_string(),
        config_hash: manifest.config_hash.clone(),
        scenes: manifest.scenes.len(),
        mean_miou: mean(records.iter().map(|r| r.miou)),
        records,
        failures,
    };
    write_json(&manifest.out.join("summary.json"), &summary)?;
    manifest.save(&manifest.out.join("manifest.json"))?;
    for f in &summary.failures {
        eprintln!("{}: {}", f.scene, f.error);
    }
    if summary.failures.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::SceneFailures {
            failed: summary.failures.len(),
            total: summary.scenes,
        })
    }
}

/// Runs every scene of `manifest` through `job` on the worker pool. Each
/// job owns its scene directory under `manifest.out`.
fn run_scenes<F>(manifest: &RunManifest, job: F) -> CliResult<Vec<std::result::Result<SceneMetrics, SceneFailure>>>
where
    F: Fn(&SceneData, &Path) -> Result<SceneMetrics> + Sync,
{
    manifest.check_nonempty()?;
    std::fs::create_dir_all(&manifest.out).map_err(|e| Error::io(&manifest.out, e))?;
    let results = pool(manifest.worker_count())?.install(|| {
        manifest
            .scenes
            .par_iter()
            .map(|dir| {
                let started = Instant::now();
                let outcome = load_scene(dir).and_then(|scene| {
                    let scene_out = manifest.out.join(&scene.id);
                    std::fs::create_dir_all(&scene_out).map_err(|e| Error::io(&scene_out, e))?;
                    let metrics = job(&scene, &scene_out)?;
                    let timed = TimedMetrics {
                        metrics: &metrics,
                        wall_time_ms: started.elapsed().as_millis(),
                    };
                    write_json(&scene_out.join("metrics.json"), &timed)?;
                    Ok(metrics)
                });
                outcome.map_err(|e| SceneFailure {
                    scene: dir_name(dir),
                    error: e.to_string(),
                })
            })
            .collect()
    });
    Ok(results)
}

/// Trains one GCN per scene and writes labels, checkpoint and metrics.
pub fn cmd_train(manifest: &RunManifest) -> CliResult<RunSummary> {
    let results = run_scenes(manifest, |scene, out| {
        let (labels, report) = run_gcn(scene, &manifest.train, manifest.refine.as_ref())?;
        write_file(&out.join("labels.pgl1"), &encode_complete_labels(&labels)?)?;
        save_checkpoint(&out.join("checkpoint"), &report.params, manifest.train.seed)?;
        let m = score(scene, &labels)?;
        Ok(SceneMetrics {
            scene: scene.id.clone(),
            seed: scene.seed,
            config_hash: manifest.config_hash.clone(),
            miou: m.miou,
            per_class_iou: m.per_class,
            final_loss: report.trace.last().copied(),
        })
    })?;
    finish("train", manifest, results)
}

/// Random-walk propagation of the activation maps, same output layout as
/// [`cmd_train`] minus the checkpoint.
pub fn cmd_baseline(manifest: &RunManifest) -> CliResult<RunSummary> {
    let results = run_scenes(manifest, |scene, out| {
        let labels = run_baseline(scene, &manifest.baseline, manifest.refine.as_ref())?;
        write_file(&out.join("labels.pgl1"), &encode_complete_labels(&labels)?)?;
        let m = score(scene, &labels)?;
        Ok(SceneMetrics {
            scene: scene.id.clone(),
            seed: scene.seed,
            config_hash: manifest.config_hash.clone(),
            miou: m.miou,
            per_class_iou: m.per_class,
            final_loss: None,
        })
    })?;
    finish("baseline", manifest, results)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene: String,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_miou: Option<f64>,
    pub records: Vec<EvalRecord>,
}

/// Scores every `<pred_dir>/<scene>/labels.pgl1` against
/// `<gt_dir>/<scene>/gt.pgl1`.
pub fn cmd_eval(pred_dir: &Path, gt_dir: &Path) -> CliResult<EvalSummary> {
    let entries = std::fs::read_dir(pred_dir).map_err(|e| Error::io(pred_dir, e))?;
    let mut scenes: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("labels.pgl1").is_file())
        .collect();
    scenes.sort();
    if scenes.is_empty() {
        return Err(Error::InvalidInput(format!("no labels.pgl1 under {}", pred_dir.display())).into());
    }
    let mut records = Vec::with_capacity(scenes.len());
    for dir in scenes {
        let name = dir_name(&dir);
        let pred = decode_complete_labels(&read_file(&dir.join("labels.pgl1"))?)?;
        let gt = decode_complete_labels(&read_file(&gt_dir.join(&name).join("gt.pgl1"))?)?;
        let m = miou(&confusion(&gt, &pred)?)?;
        records.push(EvalRecord {
            scene: name,
            miou: m.miou,
            per_class_iou: m.per_class,
        });
    }
    Ok(EvalSummary {
        mean_miou: mean(records.iter().map(|r| r.miou)),
        records,
    })
}

/// Loss ablation over the manifest's scenes. Writes `ablation.csv` and
/// `ablation.json`; the JSON also carries the random-walk mean for the same
/// scenes.
pub fn cmd_ablate(manifest: &RunManifest) -> CliResult<(AblationTable, f64)> {
    manifest.check_nonempty()?;
    let scenes = manifest.scenes.iter().map(|d| load_scene(d)).collect::<Result<Vec<_>>>()?;
    let refine = manifest.refine.unwrap_or_default();
    let table = ablation_harness(
        &scenes,
        &manifest.train,
        &refine,
        &AblationConfig::standard_grid(),
        manifest.worker_count(),
    )?;
    let baseline: Vec<f64> = pool(manifest.worker_count())?.install(|| {
        scenes
            .par_iter()
            .map(|s| run_baseline(s, &manifest.baseline, Some(&refine)).and_then(|l| score(s, &l)).map(|m| m.miou))
            .collect::<Result<Vec<_>>>()
    })?;
    let baseline_mean = mean(baseline.into_iter()).unwrap_or(f64::NAN);

    #[derive(Serialize)]
    struct Report<'a> {
        config_hash: &'a str,
        table: &'a AblationTable,
        baseline_mean_miou: f64,
    }
    std::fs::create_dir_all(&manifest.out).map_err(|e| Error::io(&manifest.out, e))?;
    write_file(&manifest.out.join("ablation.csv"), table.to_csv().as_bytes())?;
    write_json(
        &manifest.out.join("ablation.json"),
        &Report {
            config_hash: &manifest.config_hash,
            table: &table,
            baseline_mean_miou: baseline_mean,
        },
    )?;
    manifest.save(&manifest.out.join("manifest.json"))?;
    for (scene, err) in &table.failures {
        eprintln!("{scene}: {err}");
    }
    Ok((table, baseline_mean))
}

/// Palette PPM of a complete label file.
pub fn cmd_render(labels: &Path, out: &Path) -> CliResult<()> {
    let grid = decode_complete_labels(&read_file(labels)?)?;
    write_file(out, &render_labels(&grid))?;
    Ok(())
}
