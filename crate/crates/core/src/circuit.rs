//! Right-hand side of the six-species light-regulated gene circuit.
//!
//! Species order is fixed everywhere (files, network input and output):
//! `[A, B, C_RNA, C_p, Z_RNA, Z_p]`.
//!
//! ```text
//! dA/dt     = V_m / (κ_A + 1) − γ_A·A
//! dB/dt     = V_B / (κ_B + 1) − γ_B·B
//! dC_RNA/dt = τ_prc·κ_A·A / (1 + κ_A·A + κ_B·B) − γ_CRNA·C_p
//! dC_p/dt   = τ_lrc·κ_A·C_RNA − γ_CP·C_p
//! dZ_RNA/dt = V_m·C_p / (κ_A + C_p) − γ_ZRNA·Z_RNA
//! dZ_p/dt   = τ_lrz·Z_RNA − γ_ZP·Z_p
//! ```
//!
//! The C_RNA decay term multiplies C_p. Setting `eq3_decay_on_crna` switches it
//! to the mass-action form `−γ_CRNA·C_RNA`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_SPECIES: usize = 6;
pub const N_PARAMS: usize = 13;

pub const SPECIES_NAMES: [&str; N_SPECIES] = ["A", "B", "C_RNA", "C_p", "Z_RNA", "Z_p"];

pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "gamma_A",
    "gamma_B",
    "gamma_CRNA",
    "gamma_CP",
    "gamma_ZRNA",
    "gamma_ZP",
    "tau_prc",
    "tau_lrc",
    "tau_lrz",
    "V_m",
    "V_B",
    "kappa_A",
    "kappa_B",
];

/// Concentrations of the six species, dimensionless.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateVector {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C_RNA")]
    pub c_rna: f64,
    #[serde(rename = "C_p")]
    pub c_p: f64,
    #[serde(rename = "Z_RNA")]
    pub z_rna: f64,
    #[serde(rename = "Z_p")]
    pub z_p: f64,
}

impl StateVector {
    pub const ZERO: StateVector = StateVector::splat(0.0);

    pub const fn splat(v: f64) -> Self {
        Self { a: v, b: v, c_rna: v, c_p: v, z_rna: v, z_p: v }
    }

    pub const fn from_array(x: [f64; N_SPECIES]) -> Self {
        Self { a: x[0], b: x[1], c_rna: x[2], c_p: x[3], z_rna: x[4], z_p: x[5] }
    }

    pub const fn to_array(self) -> [f64; N_SPECIES] {
        [self.a, self.b, self.c_rna, self.c_p, self.z_rna, self.z_p]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl From<[f64; N_SPECIES]> for StateVector {
    fn from(x: [f64; N_SPECIES]) -> Self {
        Self::from_array(x)
    }
}

impl From<StateVector> for [f64; N_SPECIES] {
    fn from(s: StateVector) -> Self {
        s.to_array()
    }
}

/// Rate and affinity constants of the circuit.
///
/// γ are decay rates and τ conversion rates (1/min), `v_m`/`v_b` are the
/// blue/green light activation factors, κ are the conversion-rate controllers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSet {
    #[serde(rename = "gamma_A")]
    pub gamma_a: f64,
    #[serde(rename = "gamma_B")]
    pub gamma_b: f64,
    #[serde(rename = "gamma_CRNA")]
    pub gamma_crna: f64,
    #[serde(rename = "gamma_CP")]
    pub gamma_cp: f64,
    #[serde(rename = "gamma_ZRNA")]
    pub gamma_zrna: f64,
    #[serde(rename = "gamma_ZP")]
    pub gamma_zp: f64,
    pub tau_prc: f64,
    pub tau_lrc: f64,
    pub tau_lrz: f64,
    #[serde(rename = "V_m")]
    pub v_m: f64,
    #[serde(rename = "V_B")]
    pub v_b: f64,
    #[serde(rename = "kappa_A")]
    pub kappa_a: f64,
    #[serde(rename = "kappa_B")]
    pub kappa_b: f64,
}

impl ParameterSet {
    pub const fn splat(v: f64) -> Self {
        Self::from_array([v; N_PARAMS])
    }

    pub const fn from_array(p: [f64; N_PARAMS]) -> Self {
        Self {
            gamma_a: p[0],
            gamma_b: p[1],
            gamma_crna: p[2],
            gamma_cp: p[3],
            gamma_zrna: p[4],
            gamma_zp: p[5],
            tau_prc: p[6],
            tau_lrc: p[7],
            tau_lrz: p[8],
            v_m: p[9],
            v_b: p[10],
            kappa_a: p[11],
            kappa_b: p[12],
        }
    }

    pub const fn to_array(self) -> [f64; N_PARAMS] {
        [
            self.gamma_a,
            self.gamma_b,
            self.gamma_crna,
            self.gamma_cp,
            self.gamma_zrna,
            self.gamma_zp,
            self.tau_prc,
            self.tau_lrc,
            self.tau_lrz,
            self.v_m,
            self.v_b,
            self.kappa_a,
            self.kappa_b,
        ]
    }

    /// Sets a parameter by its serialized name (`gamma_A`, `tau_prc`, `V_m`, ...).
    pub fn set_by_name(&mut self, name: &str, value: f64) -> Result<()> {
        let idx = PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter `{name}`")))?;
        let mut arr = self.to_array();
        arr[idx] = value;
        *self = Self::from_array(arr);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in PARAM_NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "parameter {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Time derivative of `state` under `params`, with the C_RNA decay term as printed.
pub fn rhs(state: &StateVector, params: &ParameterSet) -> Result<StateVector> {
    derivative(&state.to_array(), params, false).map(StateVector::from_array)
}

/// Like [`rhs`], selecting the C_RNA decay variant.
pub fn rhs_with(
    state: &StateVector,
    params: &ParameterSet,
    eq3_decay_on_crna: bool,
) -> Result<StateVector> {
    derivative(&state.to_array(), params, eq3_decay_on_crna).map(StateVector::from_array)
}

#[inline(always)]
pub(crate) fn derivative(
    x: &[f64; N_SPECIES],
    p: &ParameterSet,
    eq3_decay_on_crna: bool,
) -> Result<[f64; N_SPECIES]> {
    let [a, b, c_rna, c_p, z_rna, z_p] = *x;

    let hill_den = 1.0 + p.kappa_a * a + p.kappa_b * b;
    if hill_den == 0.0 {
        return Err(Error::DegenerateDenominator { equation: "C_RNA" });
    }
    let z_den = p.kappa_a + c_p;
    if z_den == 0.0 {
        return Err(Error::DegenerateDenominator { equation: "Z_RNA" });
    }
    let crna_decay = if eq3_decay_on_crna { c_rna } else { c_p };

    Ok([
        p.v_m / (p.kappa_a + 1.0) - p.gamma_a * a,
        p.v_b / (p.kappa_b + 1.0) - p.gamma_b * b,
        p.tau_prc * (p.kappa_a * a / hill_den) - p.gamma_crna * crna_decay,
        p.tau_lrc * p.kappa_a * c_rna - p.gamma_cp * c_p,
        p.v_m * c_p / z_den - p.gamma_zrna * z_rna,
        p.tau_lrz * z_rna - p.gamma_zp * z_p,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params() -> ParameterSet {
        ParameterSet::splat(1.0)
    }

    fn general_point() -> (StateVector, ParameterSet) {
        let state = StateVector::from_array([0.3, 0.7, 0.2, 0.45, 0.15, 0.6]);
        let params = ParameterSet::from_array([
            0.11, 0.23, 0.37, 0.41, 0.53, 0.67, 0.71, 0.83, 0.97, 0.29, 0.61, 0.19, 0.47,
        ]);
        (state, params)
    }

    #[test]
    fn zero_state_gives_constant_hill_terms() {
        let d = rhs(&StateVector::ZERO, &unit_params()).unwrap();
        assert_eq!(d.to_array(), [0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn first_two_species_fixed_point() {
        let p = ParameterSet { gamma_a: 0.4, gamma_b: 0.8, v_m: 0.9, v_b: 0.3, kappa_a: 0.25, kappa_b: 0.5, ..unit_params() };
        let a_star = p.v_m / (p.gamma_a * (p.kappa_a + 1.0));
        let b_star = p.v_b / (p.gamma_b * (p.kappa_b + 1.0));
        let s = StateVector { a: a_star, b: b_star, ..StateVector::ZERO };
        let d = rhs(&s, &p).unwrap();
        assert!(d.a.abs() < 1e-15, "{}", d.a);
        assert!(d.b.abs() < 1e-15, "{}", d.b);
    }

    // Evaluated independently with mpmath at 50 digits, then rounded.
    #[test]
    fn general_point_regression() {
        let (s, p) = general_point();
        let d = rhs(&s, &p).unwrap().to_array();
        let expected = [
            0.21069747899159663866,
            0.25396598639455782313,
            -0.13730086580086580087,
            -0.15296,
            0.12440625,
            -0.2565,
        ];
        for (got, want) in d.iter().zip(expected) {
            assert!((got - want).abs() <= 1e-14 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn eq3_variant_changes_only_crna() {
        let (s, p) = general_point();
        let printed = rhs(&s, &p).unwrap().to_array();
        let conventional = rhs_with(&s, &p, true).unwrap().to_array();
        for i in [0, 1, 3, 4, 5] {
            assert_eq!(printed[i].to_bits(), conventional[i].to_bits());
        }
        let hill = p.tau_prc * (p.kappa_a * s.a / (1.0 + p.kappa_a * s.a + p.kappa_b * s.b));
        assert!((conventional[2] - (hill - p.gamma_crna * s.c_rna)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_z_denominator() {
        let p = ParameterSet { kappa_a: 0.5, ..unit_params() };
        let s = StateVector { c_p: -0.5, ..StateVector::ZERO };
        assert!(matches!(rhs(&s, &p), Err(Error::DegenerateDenominator { equation: "Z_RNA" })));
    }

    #[test]
    fn negative_states_are_not_clamped() {
        let s = StateVector::splat(-0.1);
        let d = rhs(&s, &unit_params()).unwrap();
        assert!(d.is_finite());
        assert!((d.a - (0.5 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn set_by_name_round_trips() {
        let mut p = ParameterSet::default();
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            p.set_by_name(name, i as f64 + 1.0).unwrap();
        }
        let expected: Vec<f64> = (1..=N_PARAMS).map(|i| i as f64).collect();
        assert_eq!(p.to_array().to_vec(), expected);
        assert!(p.set_by_name("gamma_Q", 1.0).is_err());
    }

    #[test]
    fn dadt_is_linear_in_a_with_slope_minus_gamma() {
        let (s, p) = general_point();
        let eps = 1e-6;
        let plus = rhs(&StateVector { a: s.a + eps, ..s }, &p).unwrap().a;
        let minus = rhs(&StateVector { a: s.a - eps, ..s }, &p).unwrap().a;
        let slope = (plus - minus) / (2.0 * eps);
        assert!(((slope + p.gamma_a) / p.gamma_a).abs() < 1e-8, "{slope}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn state() -> impl Strategy<Value = StateVector> {
            prop::array::uniform6(-2.0f64..2.0).prop_map(StateVector::from_array)
        }

        fn params() -> impl Strategy<Value = ParameterSet> {
            prop::array::uniform13(0.0f64..1.0).prop_map(ParameterSet::from_array)
        }

        proptest! {
            #[test]
            fn deterministic(s in state(), p in params()) {
                let (a, b) = (rhs(&s, &p), rhs(&s, &p));
                match (a, b) {
                    (Ok(a), Ok(b)) => prop_assert_eq!(a.to_array().map(f64::to_bits), b.to_array().map(f64::to_bits)),
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false),
                }
            }

            #[test]
            fn db_depends_only_on_b(s in state(), p in params(), idx in 0usize..6, delta in -1.0f64..1.0) {
                prop_assume!(idx != 1);
                let mut x = s.to_array();
                x[idx] += delta;
                let base = rhs(&s, &p);
                let moved = rhs(&StateVector::from_array(x), &p);
                if let (Ok(base), Ok(moved)) = (base, moved) {
                    prop_assert_eq!(base.b.to_bits(), moved.b.to_bits());
                }
            }
        }
    }
}
