use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pseudograph::io::{read_json, write_json};
use pseudograph::pipeline::{config_hash, BaselineConfig};
use pseudograph::refine::MeanFieldParams;
use pseudograph::trainer::TrainConfig;
use pseudograph::{Error, Result};

/// Everything needed to rerun a batch job. Relative paths are resolved
/// against the directory holding the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenes: Vec<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    /// `None` skips mean-field refinement.
    #[serde(default = "default_refine")]
    pub refine: Option<MeanFieldParams>,
    #[serde(default)]
    pub baseline: BaselineConfig,
    /// 0 means one worker per logical core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Recomputed whenever the manifest is resolved; a stored value is
    /// informational only.
    #[serde(default)]
    pub config_hash: String,
}

fn default_refine() -> Option<MeanFieldParams> {
    Some(MeanFieldParams::default())
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Serialize)]
struct HashedKnobs<'a> {
    train: &'a TrainConfig,
    refine: &'a Option<MeanFieldParams>,
    baseline: &'a BaselineConfig,
}

impl RunManifest {
    pub fn new(scenes: Vec<PathBuf>, out: PathBuf) -> Self {
        let mut m = Self {
            scenes,
            train: TrainConfig::default(),
            refine: default_refine(),
            baseline: BaselineConfig::default(),
            workers: 0,
            out,
            config_hash: String::new(),
        };
        m.rehash();
        m
    }

    /// Reads a manifest and makes its paths absolute, so the echo written
    /// next to the outputs reruns from anywhere.
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: RunManifest = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| std::path::absolute(base.join(p)).map_err(|e| Error::io(p, e));
        m.scenes = m.scenes.iter().map(|s| resolve(s)).collect::<Result<_>>()?;
        m.out = resolve(&m.out)?;
        m.rehash();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Hash of every knob that can change results. Worker count and paths
    /// are excluded.
    pub fn rehash(&mut self) {
        self.config_hash = config_hash(&HashedKnobs {
            train: &self.train,
            refine: &self.refine,
            baseline: &self.baseline,
        });
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(out) = &o.out {
            self.out = std::path::absolute(out).map_err(|e| Error::io(out, e))?;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(steps) = o.steps {
            self.train.steps = steps;
        }
        if let Some(b) = o.beta1 {
            self.train.weights.beta1 = b;
        }
        if let Some(b) = o.beta2 {
            self.train.weights.beta2 = b;
        }
        if o.no_ent {
            self.train.loss_mask.use_ent = false;
        }
        if o.no_lp {
            self.train.loss_mask.use_lp = false;
        }
        if o.no_refine {
            self.refine = None;
        }
        if o.normalize_adj {
            self.train.normalize_adj = true;
        }
        self.train.validate()?;
        self.rehash();
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    pub(crate) fn check_nonempty(&self) -> Result<()> {
        if self.scenes.is_empty() {
            return Err(Error::InvalidInput("no scenes".into()));
        }
        Ok(())
    }
}

/// Command-line adjustments layered over a loaded manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub no_ent: bool,
    pub no_lp: bool,
    pub no_refine: bool,
    pub normalize_adj: bool,
}
