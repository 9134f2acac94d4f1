//! Real-argument special functions: Γ, Kummer's confluent hypergeometric
//! function ₁F₁ and the Hermite function of real order.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const MAX_TERMS: usize = 10_000;
const KUMMER_X_LIMIT: f64 = 700.0;
const HERMITE_X_LIMIT: f64 = 25.0;

/// A special-function value with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecialFnResult {
    pub value: f64,
    pub est_error: f64,
    pub terms_used: usize,
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.floor()
}

/// Γ(x); poles at the nonpositive integers are errors.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("gamma of non-finite {x}")));
    }
    if is_nonpositive_integer(x) {
        return Err(Error::Pole(x));
    }
    Ok(gamma_unchecked(x))
}

fn gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma_unchecked(1.0 - x));
    }
    // exact for small positive integers
    if x == x.floor() && x <= 23.0 {
        return (1..x as u64).fold(1.0, |acc, k| acc * k as f64);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (k, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + k as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * acc * ((z + 0.5) * t.ln() - t).exp()
}

/// 1/Γ(x), exactly zero at the poles.
pub fn recip_gamma(x: f64) -> f64 {
    if is_nonpositive_integer(x) {
        0.0
    } else {
        1.0 / gamma_unchecked(x)
    }
}

/// Kummer's function ₁F₁(a; b; x).
///
/// Direct ascending series for `x ≥ 0` (or when `a` is a nonpositive integer
/// and the series terminates); Kummer's transformation
/// `₁F₁(a; b; x) = eˣ ₁F₁(b − a; b; −x)` otherwise.
pub fn kummer_1f1(a: f64, b: f64, x: f64) -> Result<SpecialFnResult> {
    if !a.is_finite() || !b.is_finite() || !x.is_finite() {
        return Err(Error::domain("non-finite argument to 1F1"));
    }
    if is_nonpositive_integer(b) {
        return Err(Error::domain(format!("1F1 undefined for b={b}")));
    }
    if x.abs() > KUMMER_X_LIMIT {
        return Err(Error::domain(format!("|x|={} exceeds the 1F1 overflow guard", x.abs())));
    }
    if x == 0.0 {
        return Ok(SpecialFnResult {
            value: 1.0,
            est_error: 0.0,
            terms_used: 1,
        });
    }
    if x > 0.0 || is_nonpositive_integer(a) {
        return ascending_series(a, b, x);
    }
    let inner = ascending_series(b - a, b, -x)?;
    let scale = x.exp();
    Ok(SpecialFnResult {
        value: scale * inner.value,
        est_error: scale * inner.est_error + 2.0 * f64::EPSILON * (scale * inner.value).abs(),
        terms_used: inner.terms_used,
    })
}

fn ascending_series(a: f64, b: f64, x: f64) -> Result<SpecialFnResult> {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut abs_sum = 1.0f64;
    let mut n = 0usize;
    loop {
        let nf = n as f64;
        let ratio = (a + nf) / (b + nf) * x / (nf + 1.0);
        term *= ratio;
        n += 1;
        if term == 0.0 {
            break;
        }
        sum += term;
        abs_sum += term.abs();
        if !sum.is_finite() {
            return Err(Error::SeriesFailure { terms: n });
        }
        // stop once terms are negligible and shrinking for good
        let next_ratio = ((a + nf + 1.0) / (b + nf + 1.0) * x / (nf + 2.0)).abs();
        if term.abs() <= f64::EPSILON * 0.25 * sum.abs() && next_ratio < 0.5 {
            break;
        }
        if n >= MAX_TERMS {
            return Err(Error::SeriesFailure { terms: n });
        }
    }
    Ok(SpecialFnResult {
        value: sum,
        est_error: 2.0 * f64::EPSILON * abs_sum + term.abs(),
        terms_used: n + 1,
    })
}

/// Physicists' Hermite function of real order,
/// `H_ν(x) = 2^ν √π [ ₁F₁(−ν/2; ½; x²)/Γ((1−ν)/2) − 2x ₁F₁((1−ν)/2; 3/2; x²)/Γ(−ν/2) ]`.
///
/// Reduces to the Hermite polynomial for nonnegative integer `ν`.
pub fn hermite_fn(nu: f64, x: f64) -> Result<SpecialFnResult> {
    if !nu.is_finite() || !x.is_finite() {
        return Err(Error::domain("non-finite argument to Hermite function"));
    }
    if x.abs() > HERMITE_X_LIMIT {
        return Err(Error::domain(format!("|x|={} exceeds the Hermite guard", x.abs())));
    }
    let x2 = x * x;
    let w_even = recip_gamma(0.5 * (1.0 - nu));
    let w_odd = recip_gamma(-0.5 * nu);
    let prefactor = 2f64.powf(nu) * PI.sqrt();

    let mut value = 0.0;
    let mut err = 0.0;
    let mut terms = 0;
    if w_even != 0.0 {
        let m = kummer_1f1(-0.5 * nu, 0.5, x2)?;
        value += w_even * m.value;
        err += (w_even * m.est_error).abs();
        terms += m.terms_used;
    }
    if w_odd != 0.0 {
        let m = kummer_1f1(0.5 * (1.0 - nu), 1.5, x2)?;
        let part = 2.0 * x * w_odd * m.value;
        value -= part;
        err += (2.0 * x * w_odd * m.est_error).abs() + 4.0 * f64::EPSILON * part.abs();
        terms += m.terms_used;
    }
    Ok(SpecialFnResult {
        value: prefactor * value,
        est_error: prefactor * err,
        terms_used: terms.max(1),
    })
}
