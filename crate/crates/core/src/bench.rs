//! Wall-time comparison of one surrogate prediction against advancing the
//! Euler solver over the same lookahead.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::hint::black_box;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::datagen::{generation_active, CorpusManifest, RunSpec};
use crate::dataset::DEFAULT_STRIDE;
use crate::error::{Error, Result};
use crate::euler::{advance_with, DEFAULT_DT};
use crate::lstm::LstmModel;

pub const DEFAULT_LOOKAHEADS: [u32; 6] = [1, 5, 10, 15, 25, 50];
pub const BENCH_HEADER: &str = "lookahead,euler_mean_s,euler_std_s,lstm_mean_s,lstm_std_s,speedup";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchOptions {
    pub repeats: usize,
    /// Calls per timed block; `None` calibrates until a block lasts `min_block_ms`.
    pub inner_iters: Option<usize>,
    pub min_block_ms: u64,
    pub dt: f64,
    pub stride: u32,
    pub eq3_decay_on_crna: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repeats: 10,
            inner_iters: None,
            min_block_ms: 20,
            dt: DEFAULT_DT,
            stride: DEFAULT_STRIDE,
            eq3_decay_on_crna: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub lookahead_n: u32,
    pub euler_mean_s: f64,
    pub euler_std_s: f64,
    pub lstm_mean_s: f64,
    pub lstm_std_s: f64,
    pub speedup: f64,
    pub repeats: usize,
    pub euler_inner_iters: usize,
    pub lstm_inner_iters: usize,
}

/// Smallest positive step of the monotonic clock seen over a short probe.
pub fn clock_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..1000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Doubles the inner count until one block takes at least `min_block`.
fn calibrate(min_block: Duration, mut call: impl FnMut() -> Result<()>) -> Result<usize> {
    let mut iters = 1usize;
    loop {
        let start = Instant::now();
        for _ in 0..iters {
            call()?;
        }
        if start.elapsed() >= min_block || iters >= 1 << 30 {
            return Ok(iters);
        }
        iters *= 2;
    }
}

/// Per-call seconds for `repeats` timed blocks after one discarded warm-up block.
fn time_blocks(
    repeats: usize,
    inner: usize,
    resolution: Duration,
    mut call: impl FnMut() -> Result<()>,
) -> Result<Vec<f64>> {
    let mut per_call = Vec::with_capacity(repeats);
    for round in 0..=repeats {
        let start = Instant::now();
        for _ in 0..inner {
            call()?;
        }
        let block = start.elapsed();
        if block < resolution * 100 {
            return Err(Error::ClockResolutionTooCoarse {
                block_ns: block.as_nanos(),
                resolution_ns: resolution.as_nanos(),
            });
        }
        if round > 0 {
            per_call.push(block.as_secs_f64() / inner as f64);
        }
    }
    Ok(per_call)
}

pub fn bench_pair(model: &LstmModel, run: &RunSpec, lookahead_n: u32, opts: &BenchOptions) -> Result<BenchResult> {
    if lookahead_n == 0 {
        return Err(Error::InvalidConfig("lookahead must be at least 1".into()));
    }
    if opts.repeats == 0 || opts.stride == 0 {
        return Err(Error::InvalidConfig("repeats and stride must be positive".into()));
    }
    if generation_active() {
        return Err(Error::GenerationActive);
    }
    let steps = lookahead_n as usize * opts.stride as usize;
    let resolution = clock_resolution();
    let min_block = Duration::from_millis(opts.min_block_ms).max(resolution * 100);

    let init = run.init;
    let params = run.params;
    let mut euler_sink = 0u64;
    let mut euler = || -> Result<()> {
        let s = advance_with(black_box(&init), black_box(&params), opts.dt, steps, opts.eq3_decay_on_crna)?;
        euler_sink ^= black_box(s.z_p.to_bits());
        Ok(())
    };
    let euler_inner = match opts.inner_iters {
        Some(n) => n,
        None => calibrate(min_block, &mut euler)?,
    };
    let euler_times = time_blocks(opts.repeats, euler_inner, resolution, &mut euler)?;
    black_box(euler_sink);

    let x = init.to_array();
    let mut scratch = model.scratch();
    let mut y = vec![0.0; model.dims().output_dim];
    let mut lstm = || -> Result<()> {
        model.predict_into(black_box(&x), &mut scratch, &mut y)?;
        black_box(&y);
        Ok(())
    };
    let lstm_inner = match opts.inner_iters {
        Some(n) => n,
        None => calibrate(min_block, &mut lstm)?,
    };
    let lstm_times = time_blocks(opts.repeats, lstm_inner, resolution, &mut lstm)?;

    let (untimed, _, _) = model.forward(&x, &crate::lstm::CellState::zeros(model.dims().hidden_dim))?;
    if untimed != y {
        return Err(Error::TimedOutputMismatch);
    }

    let (euler_mean_s, euler_std_s) = mean_std(&euler_times);
    let (lstm_mean_s, lstm_std_s) = mean_std(&lstm_times);
    Ok(BenchResult {
        lookahead_n,
        euler_mean_s,
        euler_std_s,
        lstm_mean_s,
        lstm_std_s,
        speedup: euler_mean_s / lstm_mean_s,
        repeats: opts.repeats,
        euler_inner_iters: euler_inner,
        lstm_inner_iters: lstm_inner,
    })
}

pub fn checkpoint_name(lookahead_n: u32) -> String {
    format!("model_n{lookahead_n}.bin")
}

pub fn checkpoint_path(model_dir: &Path, lookahead_n: u32) -> PathBuf {
    model_dir.join(checkpoint_name(lookahead_n))
}

/// Benchmarks every lookahead against its own checkpoint, timing the Euler side
/// from the first run of the manifest.
pub fn bench_table(
    model_dir: &Path,
    manifest: &CorpusManifest,
    lookaheads: &[u32],
    opts: &BenchOptions,
) -> Result<Vec<BenchResult>> {
    let run = manifest
        .runs
        .first()
        .ok_or_else(|| Error::InvalidConfig("manifest has no runs".into()))?
        .spec();
    let opts = BenchOptions { dt: manifest.solver.dt, eq3_decay_on_crna: manifest.solver.eq3_decay_on_crna, ..*opts };

    let models = lookaheads
        .iter()
        .map(|&n| {
            let path = checkpoint_path(model_dir, n);
            if !path.exists() {
                return Err(Error::MissingCheckpoint(n));
            }
            LstmModel::load(&path)
        })
        .collect::<Result<Vec<_>>>()?;

    lookaheads.iter().zip(&models).map(|(&n, m)| bench_pair(m, &run, n, &opts)).collect()
}

pub fn write_bench_csv(path: &Path, results: &[BenchResult]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{BENCH_HEADER}")?;
    for r in results {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.lookahead_n, r.euler_mean_s, r.euler_std_s, r.lstm_mean_s, r.lstm_std_s, r.speedup
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a bench CSV. `repeats` and inner counts are not stored and read back as 0.
pub fn read_bench_csv(path: &Path) -> Result<Vec<BenchResult>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim_end) != Some(BENCH_HEADER) {
        return Err(Error::SchemaMismatch {
            path: path.to_path_buf(),
            detail: format!("expected header `{BENCH_HEADER}`"),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| Error::Parse { path: path.to_path_buf(), line: i + 2, detail };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(err(format!("expected 6 columns, got {}", cols.len())));
        }
        let f = |k: usize| cols[k].parse::<f64>().map_err(|e| err(format!("{e}: {:?}", cols[k])));
        out.push(BenchResult {
            lookahead_n: cols[0].parse().map_err(|e| err(format!("{e}")))?,
            euler_mean_s: f(1)?,
            euler_std_s: f(2)?,
            lstm_mean_s: f(3)?,
            lstm_std_s: f(4)?,
            speedup: f(5)?,
            repeats: 0,
            euler_inner_iters: 0,
            lstm_inner_iters: 0,
        });
    }
    Ok(out)
}

pub fn format_table(results: &[BenchResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>9}  {:>12}  {:>12}  {:>12}  {:>12}  {:>9}", "lookahead", "euler mean", "euler std", "lstm mean", "lstm std", "speedup");
    for r in results {
        let _ = writeln!(
            s,
            "{:>9}  {:>12.3e}  {:>12.3e}  {:>12.3e}  {:>12.3e}  {:>8.2}x",
            r.lookahead_n, r.euler_mean_s, r.euler_std_s, r.lstm_mean_s, r.lstm_std_s, r.speedup
        );
    }
    s
}

pub fn write_table(path: &Path, results: &[BenchResult]) -> Result<()> {
    fs::write(path, format_table(results))?;
    Ok(())
}
