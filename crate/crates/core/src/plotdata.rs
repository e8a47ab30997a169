//! Flat CSV bundles behind the convergence and timing figures.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::bench::{read_bench_csv, write_bench_csv};
use crate::error::{Error, Result};
use crate::trainer::TrainingCurve;

pub const CURVES_HEADER: &str = "n,epoch,rel_error";

/// Merges per-lookahead curves into one long-format CSV and returns the row count.
pub fn merge_curves(inputs: &[(u32, PathBuf)], out: &Path) -> Result<usize> {
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("no curve files given".into()));
    }
    let curves = inputs
        .iter()
        .map(|(n, path)| Ok((*n, TrainingCurve::read_csv(path)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut w = BufWriter::new(File::create(out)?);
    writeln!(w, "{CURVES_HEADER}")?;
    let mut rows = 0;
    for (n, curve) in &curves {
        for p in &curve.points {
            writeln!(w, "{n},{},{:.16e}", p.epoch, p.rel_error)?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}

/// Validates a bench CSV and rewrites it to `out`; the speedup column is kept.
pub fn pass_bench(bench_csv: &Path, out: &Path) -> Result<usize> {
    let rows = read_bench_csv(bench_csv)?;
    write_bench_csv(out, &rows)?;
    Ok(rows.len())
}

/// Parses `N=PATH`.
pub fn parse_curve_arg(arg: &str) -> Result<(u32, PathBuf)> {
    let (n, path) = arg
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("expected N=PATH, got {arg:?}")))?;
    let n = n.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad lookahead in {arg:?}")))?;
    Ok((n, PathBuf::from(path)))
}
