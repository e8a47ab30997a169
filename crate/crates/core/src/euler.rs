//! Fixed-step forward Euler.

use serde::{Deserialize, Serialize};

use crate::circuit::{derivative, ParameterSet, StateVector, N_SPECIES};
use crate::error::{Error, Result};

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_N_STEPS: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Step size in minutes.
    pub dt: f64,
    pub n_steps: usize,
    /// Use `−γ_CRNA·C_RNA` instead of `−γ_CRNA·C_p` for the C_RNA decay.
    #[serde(default)]
    pub eq3_decay_on_crna: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, n_steps: DEFAULT_N_STEPS, eq3_decay_on_crna: false }
    }
}

impl SolverConfig {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        Self { dt, n_steps, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Solution matrix of one run. Row `k` is the state at `t = k·dt`; row 0 is the
/// initial condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dt: f64,
    states: Vec<StateVector>,
}

impl Trajectory {
    pub fn new(dt: f64, states: Vec<StateVector>) -> Self {
        Self { dt, states }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_rows(&self) -> usize {
        self.states.len()
    }

    pub fn time(&self, row: usize) -> f64 {
        row as f64 * self.dt
    }

    pub fn state(&self, row: usize) -> &StateVector {
        &self.states[row]
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn last(&self) -> &StateVector {
        self.states.last().expect("trajectory has at least one row")
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, &StateVector)> + '_ {
        self.states.iter().enumerate().map(|(k, s)| (self.time(k), s))
    }
}

#[inline(always)]
fn step(
    x: &mut [f64; N_SPECIES],
    params: &ParameterSet,
    dt: f64,
    eq3_decay_on_crna: bool,
) -> Result<()> {
    let d = derivative(x, params, eq3_decay_on_crna)?;
    for (xi, di) in x.iter_mut().zip(d) {
        *xi += dt * di;
    }
    Ok(())
}

fn check_finite(x: &[f64; N_SPECIES], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step })
    }
}

pub fn integrate(init: &StateVector, params: &ParameterSet, cfg: &SolverConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut x = init.to_array();
    check_finite(&x, 0)?;

    let mut states = Vec::with_capacity(cfg.n_steps + 1);
    states.push(*init);
    for k in 1..=cfg.n_steps {
        step(&mut x, params, cfg.dt, cfg.eq3_decay_on_crna)?;
        check_finite(&x, k)?;
        states.push(StateVector::from_array(x));
    }
    Ok(Trajectory::new(cfg.dt, states))
}

/// State after `k` Euler steps of size `dt`, without storing the trajectory.
/// Bit-identical to row `k` of [`integrate`].
pub fn advance(state: &StateVector, params: &ParameterSet, dt: f64, k: usize) -> Result<StateVector> {
    advance_with(state, params, dt, k, false)
}

pub fn advance_with(
    state: &StateVector,
    params: &ParameterSet,
    dt: f64,
    k: usize,
    eq3_decay_on_crna: bool,
) -> Result<StateVector> {
    if k == 0 {
        return Err(Error::InvalidConfig("advance needs at least one step".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let mut x = state.to_array();
    check_finite(&x, 0)?;
    for s in 1..=k {
        step(&mut x, params, dt, eq3_decay_on_crna)?;
        check_finite(&x, s)?;
    }
    Ok(StateVector::from_array(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b_decay_params() -> ParameterSet {
        ParameterSet { gamma_b: 1.0, v_b: 0.0, kappa_a: 1.0, ..ParameterSet::default() }
    }

    fn some_params() -> ParameterSet {
        ParameterSet::from_array([
            0.11, 0.23, 0.37, 0.41, 0.53, 0.67, 0.71, 0.83, 0.97, 0.29, 0.61, 0.19, 0.47,
        ])
    }

    fn some_state() -> StateVector {
        StateVector::from_array([0.3, 0.7, 0.2, 0.45, 0.15, 0.6])
    }

    fn steady_state(p: &ParameterSet) -> StateVector {
        let a = p.v_m / (p.gamma_a * (p.kappa_a + 1.0));
        let b = p.v_b / (p.gamma_b * (p.kappa_b + 1.0));
        let hill = p.kappa_a * a / (1.0 + p.kappa_a * a + p.kappa_b * b);
        let c_p = p.tau_prc * hill / p.gamma_crna;
        let c_rna = p.gamma_cp * c_p / (p.tau_lrc * p.kappa_a);
        let z_rna = p.v_m * c_p / (p.kappa_a + c_p) / p.gamma_zrna;
        let z_p = p.tau_lrz * z_rna / p.gamma_zp;
        StateVector { a, b, c_rna, c_p, z_rna, z_p }
    }

    #[test]
    fn decoupled_b_matches_euler_recurrence() {
        let init = StateVector { b: 1.0, ..StateVector::ZERO };
        let traj = integrate(&init, &b_decay_params(), &SolverConfig::new(0.01, 100)).unwrap();
        let b = traj.last().b;
        assert!((b - 0.99f64.powi(100)).abs() < 1e-12);
        assert!((b - 0.36603).abs() < 1e-5);
        assert!((b - (-1.0f64).exp()).abs() < 2e-3);
    }

    #[test]
    fn convergence_is_first_order() {
        let init = StateVector { b: 1.0, ..StateVector::ZERO };
        let exact = (-1.0f64).exp();
        let err = |dt: f64| {
            let n = (1.0 / dt).round() as usize;
            let t = integrate(&init, &b_decay_params(), &SolverConfig::new(dt, n)).unwrap();
            (t.last().b - exact).abs()
        };
        let (e1, e2, e3) = (err(0.02), err(0.01), err(0.005));
        for r in [e1 / e2, e2 / e3] {
            assert!((1.8..=2.2).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn one_step_is_definition() {
        let (s, p) = (some_state(), some_params());
        let traj = integrate(&s, &p, &SolverConfig::new(0.01, 1)).unwrap();
        let d = crate::circuit::rhs(&s, &p).unwrap().to_array();
        let expected: Vec<f64> = s.to_array().iter().zip(d).map(|(x, d)| x + 0.01 * d).collect();
        assert_eq!(traj.state(1).to_array().to_vec(), expected);
        assert_eq!(advance(&s, &p, 0.01, 1).unwrap(), *traj.state(1));
    }

    #[test]
    fn advance_matches_integrate() {
        let (s, p) = (some_state(), some_params());
        let traj = integrate(&s, &p, &SolverConfig::new(0.01, 625)).unwrap();
        let adv = advance(&s, &p, 0.01, 625).unwrap();
        assert_eq!(adv.to_array().map(f64::to_bits), traj.last().to_array().map(f64::to_bits));
    }

    #[test]
    fn fixed_point_is_preserved() {
        let init = steady_state(&some_params());
        let p = some_params();
        let traj = integrate(&init, &p, &SolverConfig::new(0.01, 500)).unwrap();
        for s in traj.states() {
            for (x, y) in s.to_array().iter().zip(init.to_array()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
        let adv = advance(&init, &p, 0.01, 12345).unwrap();
        for (x, y) in adv.to_array().iter().zip(init.to_array()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn time_column_is_exact_multiple_of_dt() {
        let traj = integrate(&some_state(), &some_params(), &SolverConfig::new(0.01, 1000)).unwrap();
        assert_eq!(traj.n_rows(), 1001);
        assert_eq!(traj.time(0), 0.0);
        for k in 1..traj.n_rows() {
            let spacing = traj.time(k) - traj.time(k - 1);
            assert!((spacing - 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn blow_up_reports_step() {
        let p = ParameterSet { gamma_a: 1e300, ..some_params() };
        let init = StateVector { a: 1e300, ..StateVector::ZERO };
        match integrate(&init, &p, &SolverConfig::new(0.01, 10)) {
            Err(Error::NonFiniteState { step }) => assert!(step >= 1),
            other => panic!("expected blow-up, got {other:?}"),
        }
        assert!(matches!(
            advance(&StateVector::splat(f64::NAN), &p, 0.01, 3),
            Err(Error::NonFiniteState { step: 0 })
        ));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SolverConfig::new(0.0, 10).validate().is_err());
        assert!(SolverConfig::new(0.01, 0).validate().is_err());
        assert!(advance(&some_state(), &some_params(), 0.01, 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn advance_composes(a in 1usize..200, b in 1usize..200,
                                x in prop::array::uniform6(0.0f64..1.0),
                                p in prop::array::uniform13(0.0f64..1.0)) {
                let (s, p) = (StateVector::from_array(x), ParameterSet::from_array(p));
                if let Ok(direct) = advance(&s, &p, 0.01, a + b) {
                    let mid = advance(&s, &p, 0.01, a).unwrap();
                    let composed = advance(&mid, &p, 0.01, b).unwrap();
                    prop_assert_eq!(direct.to_array().map(f64::to_bits), composed.to_array().map(f64::to_bits));
                }
            }
        }
    }
}
