//! Time-dependent market parameters: volatility, interest rate, dividend
//! yield and physical drift.
//!
//! Every curve lives on `[0, T]` and every antiderivative is anchored at
//! `t = 0`, so integration constants are never ambiguous.

use crate::error::{Error, Result};
use crate::numerics::integrate_piecewise;

/// Relative slack allowed when a time lands an ulp or two outside `[0, T]`.
const DOMAIN_SLACK: f64 = 1e-12;
const QUAD_TOL: f64 = 1e-12;

/// What a curve represents; volatility curves are checked for positivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveRole {
    Volatility,
    Rate,
    Yield,
    Drift,
}

/// Pointwise map applied before integrating a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Square,
    InverseSquare,
}

impl Transform {
    fn apply(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Square => v * v,
            Transform::InverseSquare => 1.0 / (v * v),
        }
    }
}

/// Side from which a one-sided derivative is taken at a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurveKind {
    Constant { value: f64 },
    /// Right-continuous steps: `values[k]` holds on `[times[k], times[k+1])`.
    PiecewiseConstant { times: Vec<f64>, values: Vec<f64> },
    /// Linear between knots, flat after the last knot.
    PiecewiseLinear { times: Vec<f64>, values: Vec<f64> },
    /// `base * exp(rate * t)`.
    Exponential { base: f64, rate: f64 },
    /// Monotone cubic (Fritsch–Carlson) through the samples, flat after the last one.
    Sampled { times: Vec<f64>, values: Vec<f64>, slopes: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientCurve {
    kind: CurveKind,
    horizon: f64,
}

fn check_knots(times: &[f64], values: &[f64], horizon: f64, min_len: usize) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::invalid(format!(
            "{} breakpoint times but {} values",
            times.len(),
            values.len()
        )));
    }
    if times.len() < min_len {
        return Err(Error::invalid(format!("need at least {min_len} knots, got {}", times.len())));
    }
    if times[0] != 0.0 {
        return Err(Error::invalid(format!("breakpoint times must start at 0, got {}", times[0])));
    }
    if let Some(w) = times.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(Error::invalid(format!(
            "breakpoint times must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    if let Some(&t) = times.iter().find(|&&t| t > horizon) {
        return Err(Error::invalid(format!("breakpoint {t} beyond horizon {horizon}")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite curve value {v}")));
    }
    Ok(())
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid(format!("curve horizon must be positive, got {horizon}")));
    }
    Ok(())
}

/// Fritsch–Carlson slopes for a monotone cubic through `(times, values)`.
fn monotone_slopes(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = times.len();
    let secants: Vec<f64> = (0..n - 1)
        .map(|k| (values[k + 1] - values[k]) / (times[k + 1] - times[k]))
        .collect();
    let mut m = vec![0.0; n];
    m[0] = secants[0];
    m[n - 1] = secants[n - 2];
    for k in 1..n - 1 {
        m[k] = if secants[k - 1] * secants[k] <= 0.0 {
            0.0
        } else {
            0.5 * (secants[k - 1] + secants[k])
        };
    }
    for k in 0..n - 1 {
        let d = secants[k];
        if d == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        let a = m[k] / d;
        let b = m[k + 1] / d;
        if a < 0.0 {
            m[k] = 0.0;
        }
        if b < 0.0 {
            m[k + 1] = 0.0;
        }
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            m[k] = tau * a * d;
            m[k + 1] = tau * b * d;
        }
    }
    m
}

impl CoefficientCurve {
    pub fn constant(value: f64, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        if !value.is_finite() {
            return Err(Error::invalid(format!("non-finite constant {value}")));
        }
        Ok(CoefficientCurve {
            kind: CurveKind::Constant { value },
            horizon,
        })
    }

    pub fn piecewise_constant(times: Vec<f64>, values: Vec<f64>, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        check_knots(&times, &values, horizon, 1)?;
        Ok(CoefficientCurve {
            kind: CurveKind::PiecewiseConstant { times, values },
            horizon,
        })
    }

    pub fn piecewise_linear(times: Vec<f64>, values: Vec<f64>, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        check_knots(&times, &values, horizon, 1)?;
        Ok(CoefficientCurve {
            kind: CurveKind::PiecewiseLinear { times, values },
            horizon,
        })
    }

    pub fn exponential(base: f64, rate: f64, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        if !base.is_finite() || !rate.is_finite() {
            return Err(Error::invalid("exponential curve needs finite base and rate"));
        }
        Ok(CoefficientCurve {
            kind: CurveKind::Exponential { base, rate },
            horizon,
        })
    }

    pub fn sampled(times: Vec<f64>, values: Vec<f64>, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        check_knots(&times, &values, horizon, 2)?;
        let slopes = monotone_slopes(&times, &values);
        Ok(CoefficientCurve {
            kind: CurveKind::Sampled { times, values, slopes },
            horizon,
        })
    }

    pub fn kind(&self) -> &CurveKind {
        &self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_constant(&self) -> bool {
        match &self.kind {
            CurveKind::Constant { .. } => true,
            CurveKind::Exponential { rate, .. } => *rate == 0.0,
            CurveKind::PiecewiseConstant { values, .. }
            | CurveKind::PiecewiseLinear { values, .. }
            | CurveKind::Sampled { values, .. } => values.iter().all(|v| *v == values[0]),
        }
    }

    /// Same curve shape on a different horizon (knots beyond it are rejected).
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        if let Some(&t) = self.knot_times().iter().find(|&&t| t > horizon) {
            return Err(Error::invalid(format!("breakpoint {t} beyond horizon {horizon}")));
        }
        Ok(CoefficientCurve {
            kind: self.kind.clone(),
            horizon,
        })
    }

    fn knot_times(&self) -> &[f64] {
        match &self.kind {
            CurveKind::Constant { .. } | CurveKind::Exponential { .. } => &[],
            CurveKind::PiecewiseConstant { times, .. }
            | CurveKind::PiecewiseLinear { times, .. }
            | CurveKind::Sampled { times, .. } => times,
        }
    }

    /// Interior times where the curve is not twice differentiable.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.knot_times()
            .iter()
            .copied()
            .filter(|&t| t > 0.0 && t < self.horizon)
            .collect()
    }

    fn clamp_time(&self, t: f64) -> Result<f64> {
        let slack = DOMAIN_SLACK * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::domain(format!("t={t} outside [0, {}]", self.horizon)));
        }
        Ok(t.clamp(0.0, self.horizon))
    }

    /// Segment index `k` with `times[k] <= t < times[k+1]` (last segment is open-ended).
    fn segment(times: &[f64], t: f64) -> usize {
        times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let t = self.clamp_time(t)?;
        Ok(self.eval_unchecked(t))
    }

    fn eval_unchecked(&self, t: f64) -> f64 {
        match &self.kind {
            CurveKind::Constant { value } => *value,
            CurveKind::Exponential { base, rate } => base * (rate * t).exp(),
            CurveKind::PiecewiseConstant { times, values } => values[Self::segment(times, t)],
            CurveKind::PiecewiseLinear { times, values } => {
                let k = Self::segment(times, t);
                if k + 1 == times.len() {
                    values[k]
                } else {
                    let w = (t - times[k]) / (times[k + 1] - times[k]);
                    values[k] + w * (values[k + 1] - values[k])
                }
            }
            CurveKind::Sampled { times, values, slopes } => {
                let k = Self::segment(times, t);
                if k + 1 == times.len() {
                    values[k]
                } else {
                    let h = times[k + 1] - times[k];
                    let s = (t - times[k]) / h;
                    let (s2, s3) = (s * s, s * s * s);
                    (2.0 * s3 - 3.0 * s2 + 1.0) * values[k]
                        + (s3 - 2.0 * s2 + s) * h * slopes[k]
                        + (-2.0 * s3 + 3.0 * s2) * values[k + 1]
                        + (s3 - s2) * h * slopes[k + 1]
                }
            }
        }
    }

    fn is_kink(&self, t: f64, order: u8) -> bool {
        match &self.kind {
            CurveKind::Constant { .. } | CurveKind::Exponential { .. } => false,
            // monotone cubic is C¹ at its knots
            CurveKind::Sampled { .. } if order == 1 => {
                let last = *self.knot_times().last().expect("knots");
                t == last && last > 0.0 && last < self.horizon
            }
            _ => self.breakpoints().contains(&t),
        }
    }

    /// Analytic derivative of order 1 or 2; rejected at kinks and jumps.
    pub fn derivative(&self, t: f64, order: u8) -> Result<f64> {
        let t = self.clamp_time(t)?;
        if self.is_kink(t, order) {
            return Err(Error::NonDifferentiable { at: t });
        }
        self.derivative_one_sided(t, order, Side::Right)
    }

    /// Derivative taken from one side; at smooth points both sides agree.
    /// The symmetry integrator uses this to step through curve breakpoints.
    pub fn derivative_one_sided(&self, t: f64, order: u8, side: Side) -> Result<f64> {
        if order != 1 && order != 2 {
            return Err(Error::invalid(format!("derivative order must be 1 or 2, got {order}")));
        }
        let t = self.clamp_time(t)?;
        let pick = |times: &[f64]| -> usize {
            let k = Self::segment(times, t);
            if side == Side::Left && k > 0 && times[k] == t {
                k - 1
            } else {
                k
            }
        };
        Ok(match &self.kind {
            CurveKind::Constant { .. } | CurveKind::PiecewiseConstant { .. } => 0.0,
            CurveKind::Exponential { base, rate } => base * rate.powi(order as i32) * (rate * t).exp(),
            CurveKind::PiecewiseLinear { times, values } => {
                let k = pick(times);
                if order == 2 || k + 1 == times.len() {
                    0.0
                } else {
                    (values[k + 1] - values[k]) / (times[k + 1] - times[k])
                }
            }
            CurveKind::Sampled { times, values, slopes } => {
                let k = pick(times);
                if k + 1 == times.len() {
                    0.0
                } else {
                    let h = times[k + 1] - times[k];
                    let s = (t - times[k]) / h;
                    let (y0, y1, m0, m1) = (values[k], values[k + 1], slopes[k], slopes[k + 1]);
                    if order == 1 {
                        ((6.0 * s * s - 6.0 * s) * (y0 - y1)) / h
                            + (3.0 * s * s - 4.0 * s + 1.0) * m0
                            + (3.0 * s * s - 2.0 * s) * m1
                    } else {
                        ((12.0 * s - 6.0) * (y0 - y1)) / (h * h) + ((6.0 * s - 4.0) * m0 + (6.0 * s - 2.0) * m1) / h
                    }
                }
            }
        })
    }

    /// `∫₀ᵗ transform(curve(s)) ds`.
    pub fn antiderivative(&self, transform: Transform, t: f64) -> Result<f64> {
        let t = self.clamp_time(t)?;
        if t == 0.0 {
            return Ok(0.0);
        }
        match &self.kind {
            CurveKind::Constant { value } => Ok(t * transform.apply(*value)),
            CurveKind::Exponential { base, rate } => Ok(exp_antiderivative(*base, *rate, transform, t)),
            CurveKind::PiecewiseConstant { times, values } => {
                let mut acc = 0.0;
                for k in 0..times.len() {
                    let lo = times[k];
                    if lo >= t {
                        break;
                    }
                    let hi = times.get(k + 1).copied().unwrap_or(f64::INFINITY).min(t);
                    acc += (hi - lo) * transform.apply(values[k]);
                }
                Ok(acc)
            }
            CurveKind::PiecewiseLinear { times, values } => {
                let mut acc = 0.0;
                for k in 0..times.len() {
                    let lo = times[k];
                    if lo >= t {
                        break;
                    }
                    let (hi, slope) = match times.get(k + 1) {
                        Some(&next) => (next.min(t), (values[k + 1] - values[k]) / (next - lo)),
                        None => (t, 0.0),
                    };
                    acc += linear_segment_integral(values[k], slope, hi - lo, transform)?;
                }
                Ok(acc)
            }
            CurveKind::Sampled { times, .. } => match transform {
                Transform::Identity => Ok(self.sampled_identity_integral(t)),
                _ => integrate_piecewise(|s| transform.apply(self.eval_unchecked(s)), 0.0, t, times, QUAD_TOL),
            },
        }
    }

    fn sampled_identity_integral(&self, t: f64) -> f64 {
        let CurveKind::Sampled { times, values, slopes } = &self.kind else {
            unreachable!("sampled curve")
        };
        let mut acc = 0.0;
        for k in 0..times.len() {
            let lo = times[k];
            if lo >= t {
                break;
            }
            if k + 1 == times.len() {
                acc += (t - lo) * values[k];
                break;
            }
            let h = times[k + 1] - lo;
            let s = ((t - lo) / h).min(1.0);
            // integrals of the cubic Hermite basis from 0 to s
            let (s2, s3, s4) = (s * s, s * s * s, s * s * s * s);
            let i00 = 0.5 * s4 - s3 + s;
            let i10 = 0.25 * s4 - 2.0 / 3.0 * s3 + 0.5 * s2;
            let i01 = -0.5 * s4 + s3;
            let i11 = 0.25 * s4 - s3 / 3.0;
            acc += h * (i00 * values[k] + i10 * h * slopes[k] + i01 * values[k + 1] + i11 * h * slopes[k + 1]);
        }
        acc
    }

    /// `∫ₐᵇ transform(curve(s)) ds`.
    pub fn integral(&self, transform: Transform, a: f64, b: f64) -> Result<f64> {
        Ok(self.antiderivative(transform, b)? - self.antiderivative(transform, a)?)
    }

    /// Exact minimum over `[0, T]` (monotone interpolation keeps samples as extrema).
    pub fn min_value(&self) -> f64 {
        match &self.kind {
            CurveKind::Constant { value } => *value,
            CurveKind::Exponential { base, rate } => base.min(base * (rate * self.horizon).exp()),
            CurveKind::PiecewiseConstant { values, .. }
            | CurveKind::PiecewiseLinear { values, .. }
            | CurveKind::Sampled { values, .. } => values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max_value(&self) -> f64 {
        match &self.kind {
            CurveKind::Constant { value } => *value,
            CurveKind::Exponential { base, rate } => base.max(base * (rate * self.horizon).exp()),
            CurveKind::PiecewiseConstant { values, .. }
            | CurveKind::PiecewiseLinear { values, .. }
            | CurveKind::Sampled { values, .. } => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Checks the invariants tied to `role`. Volatility must stay strictly positive.
    pub fn validate_role(&self, role: CurveRole) -> Result<()> {
        if role == CurveRole::Volatility && !(self.min_value() > 0.0) {
            return Err(Error::invalid(format!(
                "volatility must stay positive on [0, {}], minimum is {}",
                self.horizon,
                self.min_value()
            )));
        }
        Ok(())
    }
}

fn exp_antiderivative(base: f64, rate: f64, transform: Transform, t: f64) -> f64 {
    // (e^{kt} - 1) / k, continuous at k = 0
    let grow = |k: f64| if k == 0.0 { t } else { (k * t).exp_m1() / k };
    match transform {
        Transform::Identity => base * grow(rate),
        Transform::Square => base * base * grow(2.0 * rate),
        Transform::InverseSquare => grow(-2.0 * rate) / (base * base),
    }
}

/// `∫₀ʰ transform(a + b s) ds`.
fn linear_segment_integral(a: f64, b: f64, h: f64, transform: Transform) -> Result<f64> {
    match transform {
        Transform::Identity => Ok(a * h + 0.5 * b * h * h),
        Transform::Square => Ok(a * a * h + a * b * h * h + b * b * h * h * h / 3.0),
        Transform::InverseSquare => {
            let end = a + b * h;
            if a == 0.0 || end == 0.0 || a.signum() != end.signum() {
                return Err(Error::domain("inverse-square integral through a zero of the curve"));
            }
            Ok(h / (a * end))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{differentiate, Order};
    use proptest::prelude::*;

    fn pc() -> CoefficientCurve {
        CoefficientCurve::piecewise_constant(vec![0.0, 0.5], vec![0.2, 0.3], 1.0).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(CoefficientCurve::constant(0.2, 1.0).unwrap().eval(0.7).unwrap(), 0.2);
        let r = CoefficientCurve::piecewise_constant(vec![0.0, 0.5], vec![0.05, 0.06], 1.0).unwrap();
        assert_eq!(r.eval(0.5).unwrap(), 0.06);
        assert_eq!(r.eval(0.4999).unwrap(), 0.05);
        let e = CoefficientCurve::exponential(0.2, 0.1, 1.0).unwrap();
        assert!((e.eval(1.0).unwrap() - 0.2 * 0.1f64.exp()).abs() < 1e-16);
        assert!((e.eval(1.0).unwrap() - 0.22103).abs() < 1e-5);
    }

    #[test]
    fn eval_outside_domain() {
        let c = CoefficientCurve::constant(0.2, 1.0).unwrap();
        assert!(matches!(c.eval(1.5), Err(Error::Domain(_))));
        assert!(matches!(c.eval(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn derivative_examples() {
        let c = CoefficientCurve::constant(0.2, 1.0).unwrap();
        assert_eq!(c.derivative(0.3, 1).unwrap(), 0.0);
        assert_eq!(c.derivative(0.3, 2).unwrap(), 0.0);
        let e = CoefficientCurve::exponential(0.2, 0.1, 1.0).unwrap();
        assert!((e.derivative(0.0, 1).unwrap() - 0.02).abs() < 1e-17);
        let pl = CoefficientCurve::piecewise_linear(vec![0.0, 0.5, 1.0], vec![0.2, 0.3, 0.25], 1.0).unwrap();
        assert!((pl.derivative(0.25, 1).unwrap() - 0.2).abs() < 1e-14);
        assert!((pl.derivative(0.75, 1).unwrap() + 0.1).abs() < 1e-14);
    }

    #[test]
    fn derivative_rejected_at_kinks() {
        let pl = CoefficientCurve::piecewise_linear(vec![0.0, 0.5], vec![0.2, 0.3], 1.0).unwrap();
        assert_eq!(pl.derivative(0.5, 1), Err(Error::NonDifferentiable { at: 0.5 }));
        assert_eq!(pc().derivative(0.5, 2), Err(Error::NonDifferentiable { at: 0.5 }));
        assert!((pl.derivative_one_sided(0.5, 1, Side::Left).unwrap() - 0.2).abs() < 1e-14);
        assert_eq!(pl.derivative_one_sided(0.5, 1, Side::Right).unwrap(), 0.0);
    }

    #[test]
    fn antiderivative_examples() {
        let c = CoefficientCurve::constant(0.2, 1.0).unwrap();
        assert!((c.antiderivative(Transform::Square, 1.0).unwrap() - 0.04).abs() < 1e-17);
        assert!((pc().antiderivative(Transform::Square, 1.0).unwrap() - 0.065).abs() < 1e-16);
        let e = CoefficientCurve::exponential(0.2, 0.1, 1.0).unwrap();
        let expected = 0.2 * (0.2f64.exp() - 1.0);
        assert!((e.antiderivative(Transform::Square, 1.0).unwrap() - expected).abs() < 1e-16);
        assert!((expected - 0.044281).abs() < 1e-6);
        assert_eq!(e.antiderivative(Transform::Identity, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_antiderivatives_are_linear() {
        let c = CoefficientCurve::constant(0.25, 2.0).unwrap();
        for t in [0.1, 0.7, 1.9] {
            assert_eq!(c.antiderivative(Transform::Identity, t).unwrap(), t * 0.25);
            assert_eq!(c.antiderivative(Transform::Square, t).unwrap(), t * 0.0625);
            assert_eq!(c.antiderivative(Transform::InverseSquare, t).unwrap(), t * 16.0);
        }
    }

    #[test]
    fn sampled_curve_is_monotone_and_integrates() {
        let c = CoefficientCurve::sampled(vec![0.0, 0.3, 0.6, 1.0], vec![0.2, 0.25, 0.26, 0.3], 1.0).unwrap();
        let mut prev = c.eval(0.0).unwrap();
        for i in 1..=200 {
            let v = c.eval(i as f64 / 200.0).unwrap();
            assert!(v >= prev - 1e-15);
            prev = v;
        }
        let exact = c.antiderivative(Transform::Identity, 0.8).unwrap();
        let quad = integrate_piecewise(|s| c.eval(s).unwrap(), 0.0, 0.8, &[0.3, 0.6], 1e-13).unwrap();
        assert!((exact - quad).abs() < 1e-13);
        assert!(c.derivative(0.3, 1).is_ok());
        assert!(c.derivative(0.3, 2).is_err());
    }

    #[test]
    fn volatility_role() {
        assert!(CoefficientCurve::constant(0.0, 1.0).unwrap().validate_role(CurveRole::Volatility).is_err());
        assert!(CoefficientCurve::constant(-0.01, 1.0).unwrap().validate_role(CurveRole::Rate).is_ok());
        assert!(CoefficientCurve::piecewise_constant(vec![0.0, 2.0], vec![0.1, 0.2], 1.0).is_err());
        assert!(CoefficientCurve::piecewise_constant(vec![0.1], vec![0.1], 1.0).is_err());
        assert!(CoefficientCurve::piecewise_constant(vec![0.0, 0.5, 0.5], vec![0.1, 0.2, 0.3], 1.0).is_err());
    }

    fn curves() -> Vec<CoefficientCurve> {
        vec![
            CoefficientCurve::constant(0.2, 2.0).unwrap(),
            CoefficientCurve::exponential(0.2, 0.1, 2.0).unwrap(),
            CoefficientCurve::exponential(0.3, -0.4, 2.0).unwrap(),
            CoefficientCurve::piecewise_constant(vec![0.0, 0.5, 1.2], vec![0.2, 0.3, 0.15], 2.0).unwrap(),
            CoefficientCurve::piecewise_linear(vec![0.0, 0.7, 1.5], vec![0.2, 0.35, 0.25], 2.0).unwrap(),
            CoefficientCurve::sampled(vec![0.0, 0.4, 1.1, 2.0], vec![0.3, 0.22, 0.25, 0.4], 2.0).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn antiderivative_derivative_is_square(t in 0.01f64..1.99, which in 0usize..6) {
            let c = &curves()[which];
            prop_assume!(c.breakpoints().iter().all(|b| (b - t).abs() > 1e-3));
            let h = 1e-4;
            let d = differentiate(|s| c.antiderivative(Transform::Square, s).unwrap(), t, Order::First, h);
            let v = c.eval(t).unwrap().powi(2);
            prop_assert!((d - v).abs() <= 1e-6 * v.abs());
        }

        #[test]
        fn antiderivative_is_additive(a in 0.0f64..2.0, b in 0.0f64..2.0, which in 0usize..6, tr in 0usize..3) {
            let c = &curves()[which];
            let transform = [Transform::Identity, Transform::Square, Transform::InverseSquare][tr];
            let piece = c.integral(transform, a, b).unwrap();
            let cuts = c.breakpoints();
            let quad = integrate_piecewise(|s| transform.apply(c.eval(s).unwrap()), a, b, &cuts, 1e-13).unwrap();
            prop_assert!((piece - quad).abs() <= 1e-11 * quad.abs().max(1.0));
        }
    }
}
