//! Epoch loop: sample → forward → summed MSE → backward → clip → Adam, with a
//! relative-error check on a fresh test draw every `eval_every` epochs.
//!
//! Relative normed error is the Frobenius ratio `‖pred − target‖ / ‖target‖`
//! over the whole evaluation batch.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{sample_batch, Batch, PairDataset, Purpose, SamplerConfig};
use crate::error::{Error, Result};
use crate::lstm::{CellState, LstmDims, LstmModel, LstmParams};
use crate::optim::{adam_step, clip_gradients, summed_mse, AdamConfig, AdamState, ClipConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lookahead_n: u32,
    pub target_rel_error: f64,
    pub max_epochs: u64,
    pub eval_every: u64,
    pub steps_per_epoch: u32,
    /// Weight-initialization seed.
    pub seed: u64,
    pub hidden_dim: usize,
    pub sampler: SamplerConfig,
    pub clip: ClipConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lookahead_n: 25,
            target_rel_error: 0.03,
            max_epochs: 2_000_000,
            eval_every: 100,
            steps_per_epoch: 1,
            seed: 0,
            hidden_dim: 50,
            sampler: SamplerConfig::default(),
            clip: ClipConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_rel_error > 0.0 && self.target_rel_error <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target_rel_error must lie in (0, 1], got {}",
                self.target_rel_error
            )));
        }
        if self.max_epochs == 0 || self.eval_every == 0 || self.steps_per_epoch == 0 {
            return Err(Error::InvalidConfig("max_epochs, eval_every and steps_per_epoch must be positive".into()));
        }
        if self.hidden_dim == 0 || self.sampler.batch_size == 0 || self.sampler.test_batch_size == 0 {
            return Err(Error::InvalidConfig("hidden_dim and batch sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: u64,
    pub rel_error: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

pub const CURVE_HEADER: &str = "epoch,rel_error,loss";

impl TrainingCurve {
    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{CURVE_HEADER}")?;
        for p in &self.points {
            writeln!(w, "{},{:.16e},{:.16e}", p.epoch, p.rel_error, p.loss)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().transpose()?;
        if header.as_deref().map(str::trim_end) != Some(CURVE_HEADER) {
            return Err(Error::SchemaMismatch {
                path: path.to_path_buf(),
                detail: format!("expected header `{CURVE_HEADER}`"),
            });
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |detail: String| Error::Parse { path: path.to_path_buf(), line: i + 2, detail };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(err(format!("expected 3 columns, got {}", cols.len())));
            }
            points.push(CurvePoint {
                epoch: cols[0].parse().map_err(|e| err(format!("{e}")))?,
                rel_error: cols[1].parse().map_err(|e| err(format!("{e}")))?,
                loss: cols[2].parse().map_err(|e| err(format!("{e}")))?,
            });
        }
        Ok(Self { points })
    }
}

/// `‖pred − target‖_F / ‖target‖_F` over the whole batch.
pub fn relative_normed_error(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() {
            return Err(Error::ShapeMismatch(format!("row of {} vs row of {}", p.len(), t.len())));
        }
        for (pv, tv) in p.iter().zip(t) {
            diff += (pv - tv) * (pv - tv);
            norm += tv * tv;
        }
    }
    if norm == 0.0 {
        return Err(Error::ZeroTargetNorm);
    }
    Ok((diff / norm).sqrt())
}

fn targets_of(batch: &Batch) -> Vec<Vec<f64>> {
    batch.targets.iter().map(|t| t.to_array().to_vec()).collect()
}

pub fn predict_batch(model: &LstmModel, batch: &Batch) -> Result<Vec<Vec<f64>>> {
    let mut scratch = model.scratch();
    batch
        .inputs
        .iter()
        .map(|x| {
            let mut y = vec![0.0; model.dims().output_dim];
            model.predict_into(&x.to_array(), &mut scratch, &mut y)?;
            Ok(y)
        })
        .collect()
}

/// Relative normed error of `model` on a batch.
pub fn batch_error(model: &LstmModel, batch: &Batch) -> Result<f64> {
    relative_normed_error(&predict_batch(model, batch)?, &targets_of(batch))
}

/// Error on a test draw of `n_pairs`, keyed by `(seed, draw)`.
pub fn evaluate(model: &LstmModel, ds: &PairDataset, n_pairs: usize, seed: u64, draw: u64) -> Result<f64> {
    let cfg = SamplerConfig { epoch_seed: seed, batch_size: n_pairs, test_batch_size: n_pairs };
    batch_error(model, &sample_batch(ds, &cfg, draw, Purpose::Test)?)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: LstmModel,
    pub curve: TrainingCurve,
    /// Epoch at which the test error first fell below the target.
    pub epochs: u64,
}

/// One optimizer step on one training batch; returns the batch loss.
fn train_step(
    model: &mut LstmModel,
    adam: &mut AdamState,
    grads: &mut LstmParams,
    batch: &Batch,
    clip: &ClipConfig,
) -> Result<f64> {
    let hidden = model.dims().hidden_dim;
    let zero = CellState::zeros(hidden);
    let mut preds = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for x in &batch.inputs {
        let (y, _, cache) = model.forward(&x.to_array(), &zero)?;
        preds.push(y);
        caches.push(cache);
    }
    let (loss, dy) = summed_mse(&preds, &targets_of(batch))?;

    grads.fill(0.0);
    for (cache, dy) in caches.iter().zip(&dy) {
        model.backward_accumulate(cache, dy, grads)?;
    }
    clip_gradients(grads, clip)?;
    adam_step(&mut model.params, grads, adam)?;
    Ok(loss)
}

pub fn train(ds: &PairDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(ds, cfg, |_| {})
}

/// [`train`], calling `observe` after every evaluation.
pub fn train_observed(
    ds: &PairDataset,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&CurvePoint),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut model = LstmModel::new(LstmDims::with_hidden(cfg.hidden_dim), cfg.seed);
    let mut adam = AdamState::new(cfg.adam, &model.params);
    let mut grads = LstmParams::zeros(&model.dims());
    let mut curve = TrainingCurve::default();

    let steps = u64::from(cfg.steps_per_epoch);
    for epoch in 1..=cfg.max_epochs {
        let mut loss = 0.0;
        for s in 0..steps {
            let batch = sample_batch(ds, &cfg.sampler, (epoch - 1) * steps + s, Purpose::Train)?;
            loss = train_step(&mut model, &mut adam, &mut grads, &batch, &cfg.clip).map_err(|e| match e {
                Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { epoch: Some(epoch) },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteGradient { epoch: Some(epoch) });
            }
        }

        if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            let rel_error = test_error(&model, ds, &cfg.sampler, epoch)?;
            let point = CurvePoint { epoch, rel_error, loss };
            observe(&point);
            curve.points.push(point);
            if rel_error < cfg.target_rel_error {
                return Ok(TrainOutcome { model, curve, epochs: epoch });
            }
        }
    }
    Err(Error::DidNotConverge { max_epochs: cfg.max_epochs, curve: Box::new(curve) })
}

/// Test error at `epoch`, redrawing if the batch happens to have zero norm.
fn test_error(model: &LstmModel, ds: &PairDataset, sampler: &SamplerConfig, epoch: u64) -> Result<f64> {
    const REDRAWS: u64 = 8;
    for attempt in 0..REDRAWS {
        let key = epoch ^ (attempt << 48);
        match batch_error(model, &sample_batch(ds, sampler, key, Purpose::Test)?) {
            Err(Error::ZeroTargetNorm) => continue,
            other => return other,
        }
    }
    Err(Error::ZeroTargetNorm)
}
