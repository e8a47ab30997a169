//! Randomized corpus generation.
//!
//! Every run draws its parameters and initial condition from a generator keyed
//! by `(master_seed, run_id, retry)`, so any run can be regenerated on its own
//! and parallel generation gives the same bytes as serial generation.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{ParameterSet, StateVector, N_PARAMS, N_SPECIES, SPECIES_NAMES};
use crate::error::{Error, Result};
use crate::euler::{integrate, SolverConfig, Trajectory};
use crate::seed::mix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_MAX_RETRIES: u32 = 100;

static GENERATION_ACTIVE: AtomicUsize = AtomicUsize::new(0);

/// True while [`generate_corpus`] is running anywhere in this process.
pub fn generation_active() -> bool {
    GENERATION_ACTIVE.load(Ordering::SeqCst) > 0
}

struct ActiveGuard;

impl ActiveGuard {
    fn enter() -> Self {
        GENERATION_ACTIVE.fetch_add(1, Ordering::SeqCst);
        ActiveGuard
    }
}

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        GENERATION_ACTIVE.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub param_max: ParameterSet,
    pub init_max: StateVector,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { param_max: ParameterSet::splat(1.0), init_max: StateVector::splat(1.0) }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let all = self.param_max.to_array().into_iter().chain(self.init_max.to_array());
        for v in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("bounds must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_runs: u64,
    pub master_seed: u64,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_max_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_runs: 1000,
            master_seed: 0,
            bounds: Bounds::default(),
            solver: SolverConfig::default(),
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.solver.validate()?;
        if self.max_retries == 0 {
            return Err(Error::InvalidConfig("max_retries must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: u64,
    pub seed: u64,
    pub params: ParameterSet,
    pub init: StateVector,
}

/// Seed for attempt `retry` of run `run_id`.
pub fn run_seed(master_seed: u64, run_id: u64, retry: u32) -> u64 {
    mix(&[master_seed, run_id, u64::from(retry)])
}

pub fn sample_run_spec(cfg: &GenConfig, run_id: u64) -> RunSpec {
    sample_attempt(cfg, run_id, 0)
}

/// Uniform draws on `[0, max)` for all 13 parameters then all 6 species.
pub fn sample_attempt(cfg: &GenConfig, run_id: u64, retry: u32) -> RunSpec {
    let seed = run_seed(cfg.master_seed, run_id, retry);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut params = [0.0; N_PARAMS];
    for (p, max) in params.iter_mut().zip(cfg.bounds.param_max.to_array()) {
        *p = rng.gen::<f64>() * max;
    }
    let mut init = [0.0; N_SPECIES];
    for (x, max) in init.iter_mut().zip(cfg.bounds.init_max.to_array()) {
        *x = rng.gen::<f64>() * max;
    }
    RunSpec {
        run_id,
        seed,
        params: ParameterSet::from_array(params),
        init: StateVector::from_array(init),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: u64,
    pub seed: u64,
    pub file: String,
    pub params: ParameterSet,
    pub init: StateVector,
    pub retries: u32,
    #[serde(default)]
    pub discarded_seeds: Vec<u64>,
}

impl RunRecord {
    pub fn spec(&self) -> RunSpec {
        RunSpec { run_id: self.run_id, seed: self.seed, params: self.params, init: self.init }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub master_seed: u64,
    pub solver: SolverConfig,
    pub bounds: Bounds,
    pub runs: Vec<RunRecord>,
    /// Directory the run files live in; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut manifest: CorpusManifest = serde_json::from_reader(BufReader::new(file))?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn run(&self, run_id: u64) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.run_id == run_id)
    }

    pub fn run_path(&self, record: &RunRecord) -> PathBuf {
        self.root.join(&record.file)
    }

    pub fn load_trajectory(&self, record: &RunRecord) -> Result<Trajectory> {
        read_trajectory(&self.run_path(record), self.solver.dt)
    }
}

pub fn run_file_name(run_id: u64) -> String {
    format!("run_{run_id}.csv")
}

/// Integrates one run, resampling after blow-ups.
pub fn simulate_run(cfg: &GenConfig, run_id: u64) -> Result<(RunRecord, Trajectory)> {
    let mut discarded = Vec::new();
    for retry in 0..=cfg.max_retries {
        let spec = sample_attempt(cfg, run_id, retry);
        match integrate(&spec.init, &spec.params, &cfg.solver) {
            Ok(traj) => {
                let record = RunRecord {
                    run_id,
                    seed: spec.seed,
                    file: run_file_name(run_id),
                    params: spec.params,
                    init: spec.init,
                    retries: retry,
                    discarded_seeds: discarded,
                };
                return Ok((record, traj));
            }
            Err(Error::NonFiniteState { .. } | Error::DegenerateDenominator { .. }) => {
                discarded.push(spec.seed);
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::TooManyRetries { run_id, retries: cfg.max_retries })
}

pub fn generate_corpus(cfg: &GenConfig, out_dir: &Path) -> Result<CorpusManifest> {
    cfg.validate()?;
    let _guard = ActiveGuard::enter();
    fs::create_dir_all(out_dir)?;

    let records = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run_id| {
            let (record, traj) = simulate_run(cfg, run_id)?;
            write_trajectory(&out_dir.join(&record.file), &traj)?;
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = CorpusManifest {
        master_seed: cfg.master_seed,
        solver: cfg.solver,
        bounds: cfg.bounds.clone(),
        runs: records,
        root: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn csv_header() -> String {
    let mut h = String::from("t");
    for name in SPECIES_NAMES {
        h.push(',');
        h.push_str(name);
    }
    h
}

/// Writes `t,A,B,C_RNA,C_p,Z_RNA,Z_p` rows with 17 significant digits.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    writeln!(w, "{}", csv_header())?;
    for (t, s) in traj.rows() {
        write!(w, "{t:.16e}")?;
        for v in s.to_array() {
            write!(w, ",{v:.16e}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path, dt: f64) -> Result<Trajectory> {
    let reader = BufReader::with_capacity(1 << 20, File::open(path)?);
    let parse_err = |line: usize, detail: String| Error::Parse { path: path.to_path_buf(), line, detail };

    let mut lines = reader.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim_end) != Some(csv_header().as_ref()) {
        return Err(Error::SchemaMismatch {
            path: path.to_path_buf(),
            detail: format!("expected header `{}`", csv_header()),
        });
    }

    let mut states = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        let mut fields = line.split(',');
        fields.next().ok_or_else(|| parse_err(lineno, "empty row".into()))?;
        let mut x = [0.0; N_SPECIES];
        for slot in x.iter_mut() {
            let field = fields.next().ok_or_else(|| parse_err(lineno, "too few columns".into()))?;
            *slot = field.parse().map_err(|e| parse_err(lineno, format!("{e}: {field:?}")))?;
        }
        if fields.next().is_some() {
            return Err(parse_err(lineno, "too many columns".into()));
        }
        states.push(StateVector::from_array(x));
    }
    if states.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(Trajectory::new(dt, states))
}
