//! Summed squared-error loss, global-norm clipping and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::LstmParams;

/// `Σ_batch Σ_dims (pred − target)²` and its gradient `2(pred − target)`.
pub fn summed_mse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() {
            return Err(Error::ShapeMismatch(format!("row of {} vs row of {}", p.len(), t.len())));
        }
        let row: Vec<f64> = p.iter().zip(t).map(|(p, t)| p - t).collect();
        loss += row.iter().map(|d| d * d).sum::<f64>();
        grad.push(row.into_iter().map(|d| 2.0 * d).collect());
    }
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipConfig {
    pub max_norm: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { max_norm: 1.0 }
    }
}

pub fn global_norm(grads: &LstmParams) -> f64 {
    grads.values().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut LstmParams, cfg: &ClipConfig) -> Result<f64> {
    if !(cfg.max_norm > 0.0 && cfg.max_norm.is_finite()) {
        return Err(Error::InvalidConfig(format!("max_norm must be positive, got {}", cfg.max_norm)));
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient { epoch: None });
    }
    let norm = global_norm(grads);
    if norm > cfg.max_norm {
        let scale = cfg.max_norm / norm;
        for block in grads.blocks_mut() {
            for g in block.iter_mut() {
                *g *= scale;
            }
        }
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: LstmParams,
    pub v: LstmParams,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, like: &LstmParams) -> Self {
        let mut m = like.clone();
        m.fill(0.0);
        Self { cfg, t: 0, v: m.clone(), m }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut LstmParams, grads: &LstmParams, state: &mut AdamState) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::ShapeMismatch("parameters, gradients and moments differ in shape".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient { epoch: None });
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.cfg;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    let blocks = params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut());
    for (((p, g), m), v) in blocks {
        for k in 0..p.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::LstmDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64, scale: f64) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::zeros(&LstmDims::with_hidden(3));
        for b in p.blocks_mut() {
            for v in b.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        p
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect()
    }

    #[test]
    fn mse_identical_is_zero() {
        let rows = vec![vec![0.5; 6]; 4];
        let (loss, grad) = summed_mse(&rows, &rows).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_unit_offset() {
        let pred = vec![vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        let (loss, grad) = summed_mse(&pred, &[vec![0.0; 6]]).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad[0], vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn mse_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pred, target) = (random_rows(&mut rng, 30), random_rows(&mut rng, 30));
        let mut oracle = 0.0;
        for b in 0..30 {
            for d in 0..6 {
                oracle += (pred[b][d] - target[b][d]).powi(2);
            }
        }
        let (loss, _) = summed_mse(&pred, &target).unwrap();
        assert!((loss - oracle).abs() < 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (pred, target) = (random_rows(&mut rng, 5), random_rows(&mut rng, 5));
        let (_, grad) = summed_mse(&pred, &target).unwrap();
        let eps = 1e-6;
        for b in 0..5 {
            for d in 0..6 {
                let mut plus = pred.clone();
                plus[b][d] += eps;
                let mut minus = pred.clone();
                minus[b][d] -= eps;
                let fd = (summed_mse(&plus, &target).unwrap().0 - summed_mse(&minus, &target).unwrap().0) / (2.0 * eps);
                assert!((fd - grad[b][d]).abs() <= 1e-6 * grad[b][d].abs().max(1.0), "{fd} vs {}", grad[b][d]);
            }
        }
    }

    #[test]
    fn mse_shape_mismatch() {
        assert!(summed_mse(&[vec![0.0; 6]], &[]).is_err());
        assert!(summed_mse(&[vec![0.0; 6]], &[vec![0.0; 5]]).is_err());
    }

    #[test]
    fn clip_leaves_small_norm_alone() {
        let mut g = LstmParams::zeros(&LstmDims::with_hidden(3));
        g.b_fc[0] = 0.3;
        g.w_ih[0] = 0.4;
        let before = g.clone();
        let n = clip_gradients(&mut g, &ClipConfig::default()).unwrap();
        assert!((n - 0.5).abs() < 1e-15);
        assert_eq!(g, before);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = LstmParams::zeros(&LstmDims::with_hidden(3));
        g.b_fc[0] = 6.0;
        g.w_fc[1] = 8.0;
        let n = clip_gradients(&mut g, &ClipConfig { max_norm: 1.0 }).unwrap();
        assert_eq!(n, 10.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        assert!((g.b_fc[0] - 0.6).abs() < 1e-15 && (g.w_fc[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_rejects_non_finite() {
        let mut g = LstmParams::zeros(&LstmDims::with_hidden(3));
        g.b_hh[2] = f64::NAN;
        assert!(matches!(clip_gradients(&mut g, &ClipConfig::default()), Err(Error::NonFiniteGradient { .. })));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = random_params(1, 1.0);
        let before = p.clone();
        let zeros = LstmParams::zeros(&LstmDims::with_hidden(3));
        let mut st = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &zeros, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // t = 1: m̂ = g, v̂ = g², so Δ = lr·g/(|g| + eps).
        let mut p = LstmParams::zeros(&LstmDims::with_hidden(3));
        let mut g = p.clone();
        g.b_fc[0] = 4.0;
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut st = AdamState::new(cfg, &p);
        adam_step(&mut p, &g, &mut st).unwrap();
        let expected = -0.1 * 4.0 / (4.0 + 1e-8);
        assert!((p.b_fc[0] - expected).abs() < 1e-15);
        assert!((p.b_fc[0] + 0.1).abs() < 1e-9);
    }

    /// Straight transcription of the Adam recurrences over a flat vector.
    fn reference_adam(theta: &mut [f64], grads: &[&[f64]], cfg: AdamConfig) {
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        for (step, g) in grads.iter().enumerate() {
            let t = (step + 1) as i32;
            for k in 0..theta.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let mh = m[k] / (1.0 - cfg.beta1.powi(t));
                let vh = v[k] / (1.0 - cfg.beta2.powi(t));
                theta[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }

    #[test]
    fn adam_two_steps_match_reference() {
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut p = random_params(5, 1.0);
        let (g1, g2) = (random_params(6, 2.0), random_params(7, 2.0));
        let mut flat: Vec<f64> = p.values().collect();
        let f1: Vec<f64> = g1.values().collect();
        let f2: Vec<f64> = g2.values().collect();
        reference_adam(&mut flat, &[&f1, &f2], cfg);

        let mut st = AdamState::new(cfg, &p);
        adam_step(&mut p, &g1, &mut st).unwrap();
        adam_step(&mut p, &g2, &mut st).unwrap();
        for (a, b) in p.values().zip(flat) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let g = random_params(8, 1.0);
        let run = || {
            let mut p = random_params(9, 1.0);
            let mut st = AdamState::new(AdamConfig::default(), &p);
            adam_step(&mut p, &g, &mut st).unwrap();
            (p, st)
        };
        let (a, b) = (run(), run());
        assert!(a.0.values().zip(b.0.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut p = random_params(1, 1.0);
        let mut g = p.clone();
        g.w_hh[0] = f64::INFINITY;
        let mut st = AdamState::new(AdamConfig::default(), &p);
        assert!(adam_step(&mut p, &g, &mut st).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn clip_never_grows_and_keeps_direction(seed in any::<u64>(), scale in 0.01f64..10.0, max_norm in 0.1f64..5.0) {
                let mut g = random_params(seed, scale);
                let before = g.clone();
                let n = clip_gradients(&mut g, &ClipConfig { max_norm }).unwrap();
                let after = global_norm(&g);
                prop_assert!((after - n.min(max_norm)).abs() <= 1e-10);
                prop_assert!(after <= n + 1e-12);
                let dot: f64 = g.values().zip(before.values()).map(|(a, b)| a * b).sum();
                if n > 0.0 && after > 0.0 {
                    let cos = dot / (n * after);
                    prop_assert!((cos - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
