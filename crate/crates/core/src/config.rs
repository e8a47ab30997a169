//! JSON run configuration shared by the CLI subcommands and the pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{BenchOptions, DEFAULT_LOOKAHEADS};
use crate::datagen::GenConfig;
use crate::dataset::DEFAULT_STRIDE;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "ODESURRO_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Runs drawn from the corpus for every pair set.
    pub runs: usize,
    pub stride: u32,
    pub select_seed: u64,
    pub lookaheads: Vec<u32>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { runs: 1000, stride: DEFAULT_STRIDE, select_seed: 0, lookaheads: DEFAULT_LOOKAHEADS.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub options: BenchOptions,
    pub lookaheads: Vec<u32>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { options: BenchOptions::default(), lookaheads: DEFAULT_LOOKAHEADS.to_vec() }
    }
}

/// Output locations, relative to the pipeline output directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    pub dataset_dir: PathBuf,
    pub model_dir: PathBuf,
    pub curve_dir: PathBuf,
    pub bench_csv: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus_dir: "corpus".into(),
            dataset_dir: "datasets".into(),
            model_dir: "models".into(),
            curve_dir: "curves".into(),
            bench_csv: "bench.csv".into(),
        }
    }
}

impl Paths {
    pub fn resolve(&self, root: &Path) -> Paths {
        let r = |p: &PathBuf| root.join(p);
        Paths {
            corpus_dir: r(&self.corpus_dir),
            dataset_dir: r(&self.dataset_dir),
            model_dir: r(&self.model_dir),
            curve_dir: r(&self.curve_dir),
            bench_csv: r(&self.bench_csv),
        }
    }
}

/// Everything needed to reproduce a `generate → make-dataset → train → bench` run.
/// The solver settings live in `gen.solver`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub gen: GenConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::SchemaMismatch {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        if self.dataset.runs == 0 || self.dataset.stride == 0 {
            return Err(Error::InvalidConfig("dataset.runs and dataset.stride must be positive".into()));
        }
        if self.dataset.lookaheads.contains(&0) || self.bench.lookaheads.contains(&0) {
            return Err(Error::InvalidConfig("lookaheads must be at least 1".into()));
        }
        Ok(())
    }

    /// Replaces every seed with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.gen.master_seed = seed;
        self.dataset.select_seed = seed;
        self.train.seed = seed;
        self.train.sampler.epoch_seed = seed;
        self
    }

    /// Applies `ODESURRO_SEED` when it is set.
    pub fn with_env_seed(self) -> Result<Self> {
        match env_seed()? {
            Some(seed) => Ok(self.with_seed(seed)),
            None => Ok(self),
        }
    }
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::InvalidConfig(format!("{SEED_ENV}: {e}"))),
    }
}
