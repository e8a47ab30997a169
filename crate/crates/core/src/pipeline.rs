//! End-to-end `generate → make-dataset → train → bench` driven by one [`RunConfig`].

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bench::{bench_table, checkpoint_path, write_bench_csv, BenchResult};
use crate::config::{Paths, RunConfig};
use crate::datagen::{generate_corpus, CorpusManifest, MANIFEST_FILE};
use crate::dataset::{build_pairs, select_runs, write_pairs, PairDataset, Provenance};
use crate::error::{Error, Result};
use crate::trainer::{train_observed, CurvePoint, TrainConfig, TrainingCurve};

pub fn pairs_file_name(lookahead_n: u32) -> String {
    format!("pairs_n{lookahead_n}.bin")
}

pub fn curve_file_name(lookahead_n: u32) -> String {
    format!("curve_n{lookahead_n}.csv")
}

/// Loads the corpus, selects `runs` of it and pairs them at `lookahead_n`.
pub fn make_dataset(
    manifest_path: &Path,
    runs: usize,
    select_seed: u64,
    lookahead_n: u32,
    stride: u32,
) -> Result<PairDataset> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let ids = select_runs(&manifest, runs, select_seed)?;
    let set: BTreeSet<u64> = ids.iter().copied().collect();
    let mut ds = build_pairs(&manifest, &set, lookahead_n, stride)?;
    ds.provenance = Some(Provenance { manifest: manifest_path.to_path_buf(), run_ids: ids });
    Ok(ds)
}

#[derive(Clone, Debug)]
pub struct LookaheadReport {
    pub lookahead_n: u32,
    /// `None` when training hit the epoch cap.
    pub epochs: Option<u64>,
    pub curve: TrainingCurve,
    pub model_path: PathBuf,
    pub curve_path: PathBuf,
}

#[derive(Clone, Debug)]
pub struct PipelineReport {
    pub paths: Paths,
    pub manifest_path: PathBuf,
    pub lookaheads: Vec<LookaheadReport>,
    /// Present only when every model converged and benchmarking was requested.
    pub bench: Option<Vec<BenchResult>>,
}

impl PipelineReport {
    pub fn all_converged(&self) -> bool {
        self.lookaheads.iter().all(|r| r.epochs.is_some())
    }
}

/// Trains one lookahead and writes its curve, plus the checkpoint when it converged.
pub fn train_lookahead(
    ds: &PairDataset,
    train: &TrainConfig,
    model_path: &Path,
    curve_path: &Path,
    observe: impl FnMut(&CurvePoint),
) -> Result<Option<u64>> {
    let cfg = TrainConfig { lookahead_n: ds.lookahead_n, ..*train };
    match train_observed(ds, &cfg, observe) {
        Ok(out) => {
            out.curve.write_csv(curve_path)?;
            out.model.save(model_path)?;
            Ok(Some(out.epochs))
        }
        Err(Error::DidNotConverge { curve, .. }) => {
            curve.write_csv(curve_path)?;
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Runs the whole pipeline under `root`. `observe` sees `(lookahead, point)` for
/// every evaluation.
pub fn run_pipeline(
    cfg: &RunConfig,
    root: &Path,
    with_bench: bool,
    mut observe: impl FnMut(u32, &CurvePoint),
) -> Result<PipelineReport> {
    cfg.validate()?;
    let paths = cfg.paths.resolve(root);
    for dir in [&paths.corpus_dir, &paths.dataset_dir, &paths.model_dir, &paths.curve_dir] {
        fs::create_dir_all(dir)?;
    }

    generate_corpus(&cfg.gen, &paths.corpus_dir)?;
    let manifest_path = paths.corpus_dir.join(MANIFEST_FILE);

    let mut lookaheads = Vec::new();
    for &n in &cfg.dataset.lookaheads {
        let ds = make_dataset(&manifest_path, cfg.dataset.runs, cfg.dataset.select_seed, n, cfg.dataset.stride)?;
        write_pairs(&paths.dataset_dir.join(pairs_file_name(n)), &ds)?;
        let model_path = checkpoint_path(&paths.model_dir, n);
        let curve_path = paths.curve_dir.join(curve_file_name(n));
        let epochs = train_lookahead(&ds, &cfg.train, &model_path, &curve_path, |p| observe(n, p))?;
        let curve = TrainingCurve::read_csv(&curve_path)?;
        lookaheads.push(LookaheadReport { lookahead_n: n, epochs, curve, model_path, curve_path });
    }

    let mut report = PipelineReport { paths, manifest_path, lookaheads, bench: None };
    if with_bench && report.all_converged() {
        let manifest = CorpusManifest::load(&report.manifest_path)?;
        let results = bench_table(&report.paths.model_dir, &manifest, &cfg.bench.lookaheads, &cfg.bench.options)?;
        write_bench_csv(&report.paths.bench_csv, &results)?;
        report.bench = Some(results);
    }
    Ok(report)
}
