//! Lookahead pairs built from downsampled trajectories, and with-replacement
//! batch sampling over the pooled pairs.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{StateVector, N_SPECIES};
use crate::datagen::CorpusManifest;
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const DEFAULT_STRIDE: u32 = 25;
pub const DEFAULT_BATCH_SIZE: usize = 30;

pub const PAIR_MAGIC: &[u8; 8] = b"ODEPAIRS";
pub const PAIR_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub input: StateVector,
    pub target: StateVector,
}

/// Where a pair came from: run id and downsample index within that run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairOrigin {
    pub run_id: u64,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub manifest: PathBuf,
    pub run_ids: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub lookahead_n: u32,
    pub stride: u32,
    /// Raw solver step; pairs are `lookahead_n · stride · dt` apart in time.
    pub dt: f64,
    pub pairs: Vec<Pair>,
    /// Parallel to `pairs` when built from a corpus, empty when read from a pair file.
    pub origins: Vec<PairOrigin>,
    pub provenance: Option<Provenance>,
}

impl PairDataset {
    pub fn dt_sample(&self) -> f64 {
        f64::from(self.stride) * self.dt
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Raw solver steps between an input and its target.
    pub fn lookahead_steps(&self) -> usize {
        self.lookahead_n as usize * self.stride as usize
    }
}

/// Number of pairs one run of `n_rows` rows yields.
pub fn pairs_per_run(n_rows: usize, lookahead_n: usize, stride: usize) -> usize {
    let points = (n_rows - 1) / stride + 1;
    points.saturating_sub(lookahead_n)
}

/// Picks `count` distinct runs from the manifest, returned in ascending id order.
pub fn select_runs(manifest: &CorpusManifest, count: usize, seed: u64) -> Result<Vec<u64>> {
    let total = manifest.runs.len();
    if count > total {
        return Err(Error::InvalidConfig(format!(
            "asked for {count} runs but the corpus holds {total}"
        )));
    }
    let mut rng = rng_for(&[seed, 0x005E_1EC7]);
    let mut ids: Vec<u64> = index::sample(&mut rng, total, count)
        .into_iter()
        .map(|i| manifest.runs[i].run_id)
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

pub fn build_pairs(
    manifest: &CorpusManifest,
    run_ids: &BTreeSet<u64>,
    lookahead_n: u32,
    stride: u32,
) -> Result<PairDataset> {
    if lookahead_n == 0 || stride == 0 {
        return Err(Error::InvalidConfig("lookahead and stride must be at least 1".into()));
    }
    let (n, s) = (lookahead_n as usize, stride as usize);
    let required = (n + 1) * s + 1;

    let records = run_ids
        .iter()
        .map(|&id| {
            manifest
                .run(id)
                .ok_or_else(|| Error::InvalidConfig(format!("run {id} is not in the manifest")))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_run = records
        .par_iter()
        .map(|record| {
            let traj = manifest.load_trajectory(record)?;
            let rows = traj.n_rows();
            if rows < required {
                return Err(Error::RunTooShort { run_id: record.run_id, rows, required });
            }
            let count = pairs_per_run(rows, n, s);
            let pairs: Vec<Pair> = (0..count)
                .map(|i| Pair { input: *traj.state(i * s), target: *traj.state((i + n) * s) })
                .collect();
            Ok((record.run_id, pairs))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pairs = Vec::new();
    let mut origins = Vec::new();
    for (run_id, run_pairs) in per_run {
        origins.extend((0..run_pairs.len()).map(|index| PairOrigin { run_id, index }));
        pairs.extend(run_pairs);
    }

    Ok(PairDataset {
        lookahead_n,
        stride,
        dt: manifest.solver.dt,
        pairs,
        origins,
        provenance: Some(Provenance {
            manifest: manifest.root.join(crate::datagen::MANIFEST_FILE),
            run_ids: run_ids.iter().copied().collect(),
        }),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Train,
    Test,
}

impl Purpose {
    fn key(self) -> u64 {
        match self {
            Purpose::Train => 0x7_2A1E,
            Purpose::Test => 0x7_E57,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub epoch_seed: u64,
    pub batch_size: usize,
    /// Pairs per test draw.
    pub test_batch_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { epoch_seed: 0, batch_size: DEFAULT_BATCH_SIZE, test_batch_size: DEFAULT_BATCH_SIZE }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub inputs: Vec<StateVector>,
    pub targets: Vec<StateVector>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Indices drawn uniformly with replacement, keyed by `(epoch_seed, epoch, purpose)`.
pub fn sample_indices(len: usize, count: usize, epoch_seed: u64, epoch: u64, purpose: Purpose) -> Vec<usize> {
    let mut rng = rng_for(&[epoch_seed, epoch, purpose.key()]);
    (0..count).map(|_| rng.gen_range(0..len)).collect()
}

pub fn sample_batch(ds: &PairDataset, cfg: &SamplerConfig, epoch: u64, purpose: Purpose) -> Result<Batch> {
    if ds.is_empty() {
        return Err(Error::InvalidConfig("cannot sample from an empty dataset".into()));
    }
    let size = match purpose {
        Purpose::Train => cfg.batch_size,
        Purpose::Test => cfg.test_batch_size,
    };
    if size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let idx = sample_indices(ds.len(), size, cfg.epoch_seed, epoch, purpose);
    Ok(Batch {
        inputs: idx.iter().map(|&i| ds.pairs[i].input).collect(),
        targets: idx.iter().map(|&i| ds.pairs[i].target).collect(),
    })
}

/// Binary pair export: `ODEPAIRS`, then little-endian u32 version, pair count,
/// dim, lookahead, stride, f64 dt, then 12 f64 per pair (input, target).
pub fn write_pairs(path: &Path, ds: &PairDataset) -> Result<()> {
    let count = u32::try_from(ds.len())
        .map_err(|_| Error::InvalidConfig("too many pairs for the pair file format".into()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PAIR_MAGIC)?;
    for v in [PAIR_VERSION, count, N_SPECIES as u32, ds.lookahead_n, ds.stride] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&ds.dt.to_le_bytes())?;
    for p in &ds.pairs {
        for v in p.input.to_array().into_iter().chain(p.target.to_array()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_pairs(path: &Path) -> Result<PairDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    if r.read_exact(&mut magic).is_err() || &magic != PAIR_MAGIC {
        return Err(Error::BadMagic { what: "pair file", expected: "ODEPAIRS" });
    }
    let version = read_u32(&mut r)?;
    if version != PAIR_VERSION {
        return Err(Error::DimMismatch { field: "version", detail: format!("unsupported version {version}") });
    }
    let count = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)?;
    if dim as usize != N_SPECIES {
        return Err(Error::DimMismatch { field: "dim", detail: format!("expected {N_SPECIES}, got {dim}") });
    }
    let lookahead_n = read_u32(&mut r)?;
    let stride = read_u32(&mut r)?;
    let dt = read_f64(&mut r)?;

    let mut pairs = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let mut v = [0.0; 2 * N_SPECIES];
        for slot in v.iter_mut() {
            *slot = read_f64(&mut r)?;
        }
        let mut input = [0.0; N_SPECIES];
        let mut target = [0.0; N_SPECIES];
        input.copy_from_slice(&v[..N_SPECIES]);
        target.copy_from_slice(&v[N_SPECIES..]);
        pairs.push(Pair { input: input.into(), target: target.into() });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::DimMismatch { field: "pair_count", detail: "trailing bytes after the last pair".into() });
    }
    Ok(PairDataset { lookahead_n, stride, dt, pairs, origins: Vec::new(), provenance: None })
}
