//! Branch-free `exp`, logistic sigmoid and `tanh` built only from IEEE add,
//! multiply and divide, so results are identical on every platform and the
//! slice versions vectorize.

const LOG2_E: f64 = std::f64::consts::LOG2_E;
// ln 2 split so that n·LN2_HI is exact for |n| < 2^11.
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
// 1.5·2^52: adding it rounds to an integer held in the low mantissa bits.
const SHIFTER: f64 = 6_755_399_441_055_744.0;
const MIN_ARG: f64 = -708.0;
const MAX_ARG: f64 = 709.0;

// 1/k! for k = 0..=13; the Taylor tail on |r| <= ln2/2 is below 1e-17.
const COEFFS: [f64; 14] = [
    1.0,
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
    1.0 / 362880.0,
    1.0 / 3628800.0,
    1.0 / 39916800.0,
    1.0 / 479001600.0,
    1.0 / 6227020800.0,
];

/// `e^x`, accurate to a few ulp. Arguments are clamped to `[-708, 709]`.
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    let x = x.clamp(MIN_ARG, MAX_ARG);
    let t = x * LOG2_E + SHIFTER;
    let n = t - SHIFTER;
    let r = (x - n * LN2_HI) - n * LN2_LO;

    // Estrin's scheme: shorter dependency chains than Horner.
    let c = &COEFFS;
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let p01 = c[0] + c[1] * r;
    let p23 = c[2] + c[3] * r;
    let p45 = c[4] + c[5] * r;
    let p67 = c[6] + c[7] * r;
    let p89 = c[8] + c[9] * r;
    let p1011 = c[10] + c[11] * r;
    let p1213 = c[12] + c[13] * r;
    let p03 = p01 + p23 * r2;
    let p47 = p45 + p67 * r2;
    let p811 = p89 + p1011 * r2;
    let p07 = p03 + p47 * r4;
    let p813 = p811 + p1213 * r4;
    let p = p07 + p813 * r8;
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    p * scale
}

#[inline(always)]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / (exp(2.0 * x) + 1.0)
}

pub fn sigmoid_in_place(xs: &mut [f64]) {
    for x in xs {
        *x = sigmoid(*x);
    }
}

pub fn tanh_in_place(xs: &mut [f64]) {
    for x in xs {
        *x = tanh(*x);
    }
}
