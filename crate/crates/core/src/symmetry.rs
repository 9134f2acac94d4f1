//! Symmetry functions θ(t), γ(t), α(t) of the pricing PDE.
//!
//! The generator acts on `(t, x, V)` with `x = log U`:
//!
//! ```text
//! G = θ ∂_t + (γ + xθ̇/2 + xẊθ/(2X)) ∂_x
//!       + V [α + (Żθx + Zθ̇x − α̇x + (Yx² − X²x² − 2Xx)k₁)/(Y − X)] ∂_V
//! ```
//!
//! and is a symmetry when θ, γ, α satisfy the three determining equations
//! checked by [`determining_residuals`]. Two backends produce the functions:
//! direct integration of the determining equations (normative) and the
//! nested-quadrature closed forms, kept as a cross-check.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::coefficients::{Side, Transform};
use crate::error::{Error, Result};
use crate::model::{CoefficientJet, MarketScenario};
use crate::numerics::{solve_ivp_with, IvpOptions, Trajectory};
use crate::oracles::fd_price;

const IVP_TOL: f64 = 1e-12;
const MAX_STEPS_PER_HORIZON: f64 = 2048.0;
const SINGULAR_GAP: f64 = 1e-10;

/// The six integration constants `θ₁, θ₂, γ₁, γ₂, α₁, k₁`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymmetryConstants {
    pub theta1: f64,
    pub theta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub alpha1: f64,
    pub k1: f64,
}

impl SymmetryConstants {
    pub fn new(theta1: f64, theta2: f64, gamma1: f64, gamma2: f64, alpha1: f64, k1: f64) -> Result<Self> {
        let c = SymmetryConstants {
            theta1,
            theta2,
            gamma1,
            gamma2,
            alpha1,
            k1,
        };
        if c.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("symmetry constants must be finite"));
        }
        Ok(c)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.theta1, self.theta2, self.gamma1, self.gamma2, self.alpha1, self.k1]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        SymmetryConstants {
            theta1: a[0],
            theta2: a[1],
            gamma1: a[2],
            gamma2: a[3],
            alpha1: a[4],
            k1: a[5],
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_array(self.to_array().map(|v| c * v))
    }

    pub fn plus(&self, other: &Self) -> Self {
        let (a, b) = (self.to_array(), other.to_array());
        Self::from_array(std::array::from_fn(|i| a[i] + b[i]))
    }
}

const CONSTANT_KEYS: [&str; 6] = ["theta1", "theta2", "gamma1", "gamma2", "alpha1", "k1"];

impl FromStr for SymmetryConstants {
    type Err = Error;

    /// Parses `theta1=..,theta2=..,...`; omitted keys are zero.
    fn from_str(s: &str) -> Result<Self> {
        let mut vals = [0.0; 6];
        let mut seen = [false; 6];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value in constants, got `{part}`")))?;
            let key = key.trim();
            let idx = CONSTANT_KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| Error::invalid(format!("unknown constant `{key}`")))?;
            if seen[idx] {
                return Err(Error::invalid(format!("constant `{key}` given twice")));
            }
            seen[idx] = true;
            vals[idx] = value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("constant `{key}` is not a number: `{}`", value.trim())))?;
        }
        let c = Self::from_array(vals);
        Self::new(c.theta1, c.theta2, c.gamma1, c.gamma2, c.alpha1, c.k1)
    }
}

impl fmt::Display for SymmetryConstants {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = CONSTANT_KEYS
            .iter()
            .zip(self.to_array())
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        f.write_str(&parts.join(","))
    }
}

/// Where a [`SymmetryFunctions`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Ode,
    ClosedForm,
    Custom,
}

/// Values with first and second time derivatives: `[f, ḟ, f̈]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymmetryJet {
    pub theta: [f64; 3],
    pub gamma: [f64; 3],
    pub alpha: [f64; 3],
}

type JetFn = dyn Fn(f64) -> Result<SymmetryJet> + Send + Sync;

#[derive(Clone)]
enum Repr {
    /// State `[θ, θ̇, γ, γ̇, α]` per smooth segment.
    Ode { segments: Vec<Segment> },
    /// State `[J, γ, α]` per segment, θ analytic.
    ClosedForm { segments: Vec<Segment> },
    Custom(Arc<JetFn>),
}

/// Dense solution on one smooth piece `[lo, hi]` of the time axis.
#[derive(Clone)]
pub(crate) struct Segment {
    pub(crate) lo: f64,
    pub(crate) hi: f64,
    pub(crate) traj: Trajectory,
}

/// θ, γ, α on `[0, T]` with derivative access. Immutable and thread-safe.
#[derive(Clone)]
pub struct SymmetryFunctions {
    backend: Backend,
    constants: SymmetryConstants,
    scenario: Option<MarketScenario>,
    horizon: f64,
    repr: Repr,
}

impl fmt::Debug for SymmetryFunctions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetryFunctions")
            .field("backend", &self.backend)
            .field("constants", &self.constants)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl SymmetryFunctions {
    /// Wraps user-supplied functions, e.g. deliberately wrong ones for
    /// negative controls.
    pub fn custom<F>(constants: SymmetryConstants, horizon: f64, jet: F) -> Self
    where
        F: Fn(f64) -> Result<SymmetryJet> + Send + Sync + 'static,
    {
        SymmetryFunctions {
            backend: Backend::Custom,
            constants,
            scenario: None,
            horizon,
            repr: Repr::Custom(Arc::new(jet)),
        }
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn constants(&self) -> &SymmetryConstants {
        &self.constants
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn theta(&self, t: f64) -> Result<f64> {
        Ok(self.jet(t)?.theta[0])
    }

    pub fn gamma(&self, t: f64) -> Result<f64> {
        Ok(self.jet(t)?.gamma[0])
    }

    pub fn alpha(&self, t: f64) -> Result<f64> {
        Ok(self.jet(t)?.alpha[0])
    }

    /// θ, γ, α with their first two derivatives at `t`.
    pub fn jet(&self, t: f64) -> Result<SymmetryJet> {
        match &self.repr {
            Repr::Custom(f) => f(t),
            Repr::Ode { segments } => {
                let sc = self.scenario.as_ref().expect("ode backend keeps its scenario");
                let seg = locate(segments, t)?;
                let k1 = self.constants.k1;
                // α̇ from the α equation along the dense state
                let alpha_rate = |s: f64| -> Result<f64> {
                    let y = seg.traj.eval(s)?;
                    let cj = sc.coefficient_jet(s, Some(side_within(seg, s)))?;
                    let mut dy = [0.0; 5];
                    ode_rhs(&cj, k1, &y, &mut dy);
                    Ok(dy[4])
                };
                let y = seg.traj.eval(t)?;
                let slope = seg.traj.eval_slope(t)?;
                let alpha_dd = derivative_in_segment(seg, t, alpha_rate)?;
                Ok(SymmetryJet {
                    theta: [y[0], y[1], slope[1]],
                    gamma: [y[2], y[3], slope[3]],
                    alpha: [y[4], slope[4], alpha_dd],
                })
            }
            Repr::ClosedForm { segments } => {
                let sc = self.scenario.as_ref().expect("closed-form backend keeps its scenario");
                let seg = locate(segments, t)?;
                let c = &self.constants;
                let eval = |s: f64| -> Result<(Vec<f64>, [f64; 3], [f64; 2], f64)> {
                    let y = seg.traj.eval(s)?;
                    let side = side_within(seg, s);
                    let th = closed_form_theta(sc, c, s, side)?;
                    let (gd, gdd) = closed_form_gamma_rates(sc, c, &th, y[0], s, side)?;
                    let ad = closed_form_alpha_rate(sc, c, &th, gd, s, side)?;
                    Ok((y, th, [gd, gdd], ad))
                };
                let (y, th, g, ad) = eval(t)?;
                let alpha_dd = derivative_in_segment(seg, t, |s| Ok(eval(s)?.3))?;
                Ok(SymmetryJet {
                    theta: th,
                    gamma: [y[1], g[0], g[1]],
                    alpha: [y[2], ad, alpha_dd],
                })
            }
        }
    }
}

pub(crate) fn locate(segments: &[Segment], t: f64) -> Result<&Segment> {
    let last = segments.last().expect("at least one segment");
    let slack = 1e-12 * last.hi.max(1.0);
    if !(t >= -slack && t <= last.hi + slack) {
        return Err(Error::domain(format!("t={t} outside [0, {}]", last.hi)));
    }
    let t = t.clamp(0.0, last.hi);
    Ok(segments.iter().find(|s| t >= s.lo && t < s.hi).unwrap_or(last))
}

/// One-sided evaluation keeps curve derivatives inside the segment.
pub(crate) fn side_within(seg: &Segment, t: f64) -> Side {
    if t >= seg.hi {
        Side::Left
    } else {
        Side::Right
    }
}

/// Central difference of `f` at `t`, one-sided near the segment ends.
fn derivative_in_segment<F>(seg: &Segment, t: f64, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let t = t.clamp(seg.lo, seg.hi);
    let h = 1e-4 * (seg.hi - seg.lo).min(1.0);
    if t - h >= seg.lo && t + h <= seg.hi {
        Ok((f(t + h)? - f(t - h)?) / (2.0 * h))
    } else if t + 2.0 * h <= seg.hi {
        Ok((-3.0 * f(t)? + 4.0 * f(t + h)? - f(t + 2.0 * h)?) / (2.0 * h))
    } else {
        Ok((3.0 * f(t)? - 4.0 * f(t - h)? + f(t - 2.0 * h)?) / (2.0 * h))
    }
}

/// `[0, b₁, …, T]` split at the scenario's curve breakpoints.
fn segment_bounds(scenario: &MarketScenario) -> Vec<(f64, f64)> {
    let mut cuts = vec![0.0];
    cuts.extend(scenario.breakpoints());
    cuts.push(scenario.maturity());
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Integrates a system segment by segment, continuing the state across
/// curve breakpoints. `rhs` receives the side to use for curve derivatives.
pub(crate) fn integrate_segments<F>(scenario: &MarketScenario, y0: Vec<f64>, rhs: F) -> Result<Vec<Segment>>
where
    F: Fn(f64, Side, &[f64], &mut [f64]) -> Result<()>,
{
    let horizon = scenario.maturity();
    let opts = IvpOptions::with_tol(IVP_TOL).max_step(horizon / MAX_STEPS_PER_HORIZON);
    let mut segments = Vec::new();
    let mut y = y0;
    for (lo, hi) in segment_bounds(scenario) {
        let failure = std::cell::RefCell::new(None);
        let traj = solve_ivp_with(
            |t, state, out| {
                let side = if t >= hi { Side::Left } else { Side::Right };
                if let Err(e) = rhs(t, side, state, out) {
                    out.iter_mut().for_each(|o| *o = f64::NAN);
                    failure.borrow_mut().get_or_insert(e);
                }
            },
            lo,
            &y,
            hi,
            opts,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let traj = traj?;
        y = traj.terminal().to_vec();
        segments.push(Segment { lo, hi, traj });
    }
    Ok(segments)
}

/// θ̈, γ̈ and α̇ isolated from the determining equations.
fn ode_rhs(c: &CoefficientJet, k1: f64, y: &[f64], dy: &mut [f64]) {
    let (x, dx, ddx) = (c.x, c.dx, c.ddx);
    let (yy, dyy, ddyy) = (c.y, c.dy, c.ddy);
    let (z, dz) = (c.z, c.dz);
    let (th, dth, dga) = (y[0], y[1], y[3]);
    let x2 = x * x;
    let ddth = (8.0 * x * k1 + dx * dx * th - x * dx * dth - x * ddx * th) / x2;
    let ddga = (3.0 * x2 * dyy * dth + 2.0 * x2 * ddyy * th
        - 3.0 * x * dx * yy * dth
        - 2.0 * x * ddx * yy * th
        - 3.0 * x * dx * dyy * th
        + 2.0 * x * dx * dga
        + 3.0 * dx * dx * yy * th)
        / (2.0 * x2);
    let rest = 2.0 * x2 * yy * dth - 4.0 * x2 * z * dth - x2 * dx * th + 2.0 * x2 * dyy * th - 4.0 * x2 * dz * th
        - 2.0 * x2 * dga
        - x2 * x * dth
        + 8.0 * x2 * x * k1
        + dx * yy * yy * th
        - x * yy * yy * dth
        - 2.0 * x * yy * dyy * th
        + 2.0 * x * yy * dga;
    dy[0] = dth;
    dy[1] = ddth;
    dy[2] = dga;
    dy[3] = ddga;
    dy[4] = -rest / (4.0 * x2);
}

/// Integrates the determining equations from the constants.
///
/// Initial data follow the closed forms at `t = 0`: `θ(0) = θ₂/σ(0)²`,
/// `θ̇(0) = θ₁ − 2σ̇(0)θ₂/σ(0)³`, `γ(0) = γ₂`, `γ̇(0) = σ(0)²γ₁`, `α(0) = α₁`.
pub fn solve_symmetry_ode(scenario: &MarketScenario, constants: &SymmetryConstants) -> Result<SymmetryFunctions> {
    scenario.require_positive_volatility()?;
    let sj = scenario.curve_jet(0.0, Some(Side::Right))?;
    let [s0, ds0, _] = sj.sigma;
    let c = *constants;
    let y0 = vec![
        c.theta2 / (s0 * s0),
        c.theta1 - 2.0 * ds0 * c.theta2 / (s0 * s0 * s0),
        c.gamma2,
        s0 * s0 * c.gamma1,
        c.alpha1,
    ];
    let segments = integrate_segments(scenario, y0, |t, side, y, dy| {
        let cj = scenario.coefficient_jet(t, Some(side))?;
        ode_rhs(&cj, c.k1, y, dy);
        Ok(())
    })?;
    Ok(SymmetryFunctions {
        backend: Backend::Ode,
        constants: c,
        scenario: Some(scenario.clone()),
        horizon: scenario.maturity(),
        repr: Repr::Ode { segments },
    })
}

/// The symmetry used by the call-payoff reduction: only `θ₂` survives and
/// θ is redefined to `(θ₂/σ²)(1 − F(T)F(t))`, `F(t) = ∫₀ᵗσ²`, which is the
/// ODE solution with `θ₁ = −θ₂F(T)`.
pub fn call_payoff_symmetry(scenario: &MarketScenario, theta2: f64) -> Result<SymmetryFunctions> {
    let f_t = scenario.sigma().antiderivative(Transform::Square, scenario.maturity())?;
    let constants = SymmetryConstants::new(-theta2 * f_t, theta2, 0.0, 0.0, 0.0, 0.0)?;
    solve_symmetry_ode(scenario, &constants)
}

/// `[θ, θ̇, θ̈]` from `θ = (θ₂ + θ₁F + 2k₁β²F²)/σ²`.
fn closed_form_theta(sc: &MarketScenario, c: &SymmetryConstants, t: f64, side: Side) -> Result<[f64; 3]> {
    let b2 = sc.beta() * sc.beta();
    let f = sc.sigma().antiderivative(Transform::Square, t)?;
    let [s, ds, dds] = sc.curve_jet(t, Some(side))?.sigma;
    let g = c.theta2 + c.theta1 * f + 2.0 * c.k1 * b2 * f * f;
    let lin = c.theta1 + 4.0 * c.k1 * b2 * f;
    let dg = s * s * lin;
    let ddg = 2.0 * s * ds * lin + 4.0 * c.k1 * b2 * s.powi(4);
    let th = g / (s * s);
    let dth = dg / (s * s) - 2.0 * ds * g / s.powi(3);
    let ddth = ddg / (s * s) - 4.0 * ds * dg / s.powi(3) + (6.0 * ds * ds - 2.0 * s * dds) * g / s.powi(4);
    Ok([th, dth, ddth])
}

/// Inner integrand `j(t)` of the γ quadrature.
fn closed_form_gamma_integrand(sc: &MarketScenario, th: &[f64; 3], t: f64, side: Side) -> Result<f64> {
    let cj = sc.curve_jet(t, Some(side))?;
    let [s, ds, dds] = cj.sigma;
    let [r, dr, _] = cj.r;
    let [y, dy, ddy] = cj.y;
    let a = -1.5 * dr + 3.0 * r * ds / s - 3.0 * y * ds / s + 3.0 * dr * ds;
    let b = 3.0 * dy * ds / s - 4.0 * dr * ds * ds / (s * s) + 4.0 * y * ds * ds / (s * s) + ddy + 2.0 * r * dds / s
        - 2.0 * dy * dds / s;
    Ok(a * th[1] + b * th[0])
}

/// `(γ̇, γ̈)` given the inner antiderivative `J`.
fn closed_form_gamma_rates(
    sc: &MarketScenario,
    c: &SymmetryConstants,
    th: &[f64; 3],
    j_acc: f64,
    t: f64,
    side: Side,
) -> Result<(f64, f64)> {
    let [s, ds, _] = sc.curve_jet(t, Some(side))?.sigma;
    let inner = c.gamma1 + sc.beta() * j_acc;
    let j = closed_form_gamma_integrand(sc, th, t, side)?;
    Ok((s * s * inner, 2.0 * s * ds * inner + sc.beta() * j))
}

/// The α integrand of the closed forms.
fn closed_form_alpha_rate(
    sc: &MarketScenario,
    c: &SymmetryConstants,
    th: &[f64; 3],
    dgamma: f64,
    t: f64,
    side: Side,
) -> Result<f64> {
    let cj = sc.curve_jet(t, Some(side))?;
    let [s, ds, _] = cj.sigma;
    let [r, dr, _] = cj.r;
    let [y, dy, _] = cj.y;
    let beta = sc.beta();
    let s3 = s * s * s;
    let p1 = (r * s3 - 2.0 * r * y + r * r * s + y * y * s + y * s3 + s.powi(5) / 4.0) * th[1] / (2.0 * s3);
    let p2 = (y + 0.5 * s * s - r) * dgamma / (s * s * beta);
    let p3 = -s * s * beta * beta * c.k1;
    let p4 = (0.5 * dr * s3 - r * r * ds - y * y * ds + 2.0 * r * y * ds + r * dr * s - r * dy * s + y * dy * s - y * dr * s
        + 0.5 * dy * s3
        + 0.25 * ds * s.powi(4))
        * th[0];
    Ok(p1 + p2 + p3 + p4)
}

/// The closed-form quadratures with every antiderivative anchored at 0 and
/// the unnamed `k` read as `k₁`. The nested integrals are accumulated by
/// dense-output integration of `J' = j/σ²`, `γ' = σ²(γ₁ + βJ)`, `α' = a(t)`.
pub fn closed_form_symmetry(scenario: &MarketScenario, constants: &SymmetryConstants) -> Result<SymmetryFunctions> {
    scenario.require_positive_volatility()?;
    let c = *constants;
    let segments = integrate_segments(scenario, vec![0.0, c.gamma2, c.alpha1], |t, side, y, dy| {
        let th = closed_form_theta(scenario, &c, t, side)?;
        let s = scenario.sigma().eval(t)?;
        let (gd, _) = closed_form_gamma_rates(scenario, &c, &th, y[0], t, side)?;
        dy[0] = closed_form_gamma_integrand(scenario, &th, t, side)? / (s * s);
        dy[1] = gd;
        dy[2] = closed_form_alpha_rate(scenario, &c, &th, gd, t, side)?;
        Ok(())
    })?;
    Ok(SymmetryFunctions {
        backend: Backend::ClosedForm,
        constants: c,
        scenario: Some(scenario.clone()),
        horizon: scenario.maturity(),
        repr: Repr::ClosedForm { segments },
    })
}

/// Left-hand sides of the three determining equations with the largest
/// absolute term of each, for scale-free comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeterminingResiduals {
    pub rb: f64,
    pub rc: f64,
    pub rd: f64,
    pub scale: [f64; 3],
}

impl DeterminingResiduals {
    /// Each residual over its equation's largest term; zero when every term is.
    pub fn normalized(&self) -> [f64; 3] {
        let n = |r: f64, s: f64| if s == 0.0 { r.abs() } else { r.abs() / s };
        [n(self.rb, self.scale[0]), n(self.rc, self.scale[1]), n(self.rd, self.scale[2])]
    }

    pub fn max_normalized(&self) -> f64 {
        self.normalized().into_iter().fold(0.0, f64::max)
    }
}

fn sum_and_scale(terms: &[f64]) -> (f64, f64) {
    (terms.iter().sum(), terms.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Evaluates the determining equations at an interior time where the
/// curves are twice differentiable.
pub fn determining_residuals(scenario: &MarketScenario, sf: &SymmetryFunctions, t: f64) -> Result<DeterminingResiduals> {
    let c = scenario.coefficient_jet(t, None)?;
    let j = sf.jet(t)?;
    let k1 = sf.constants().k1;
    let (x, dx, ddx, y, dy, ddy, z, dz) = (c.x, c.dx, c.ddx, c.y, c.dy, c.ddy, c.z, c.dz);
    let [th, dth, ddth] = j.theta;
    let [_, dga, ddga] = j.gamma;
    let dal = j.alpha[1];
    let x2 = x * x;
    let (rb, sb) = sum_and_scale(&[x2 * ddth, -8.0 * x * k1, -dx * dx * th, x * dx * dth, x * ddx * th]);
    let (rc, scc) = sum_and_scale(&[
        -3.0 * x2 * dy * dth,
        -2.0 * x2 * ddy * th,
        2.0 * x2 * ddga,
        3.0 * x * dx * y * dth,
        2.0 * x * ddx * y * th,
        3.0 * x * dx * dy * th,
        -2.0 * x * dx * dga,
        -3.0 * dx * dx * y * th,
    ]);
    let (rd, sd) = sum_and_scale(&[
        2.0 * x2 * y * dth,
        -4.0 * x2 * z * dth,
        -x2 * dx * th,
        2.0 * x2 * dy * th,
        -4.0 * x2 * dz * th,
        -2.0 * x2 * dga,
        4.0 * x2 * dal,
        -x2 * x * dth,
        8.0 * x2 * x * k1,
        dx * y * y * th,
        -x * y * y * dth,
        -2.0 * x * y * dy * th,
        2.0 * x * y * dga,
    ]);
    Ok(DeterminingResiduals {
        rb,
        rc,
        rd,
        scale: [sb, scc, sd],
    })
}

/// Agreement status of the two backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyStatus {
    Pass,
    Fail,
    NotApplicable,
}

/// Largest pointwise difference between the backends, each measured
/// against the peak magnitude of the function over the sample grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyReport {
    pub status: ConsistencyStatus,
    pub theta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub tol: f64,
}

pub const BACKEND_TOL: f64 = 1e-8;

fn peak_relative(a: &[f64], b: &[f64]) -> f64 {
    let peak = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / peak).fold(0.0, f64::max)
}

/// Compares the ODE and closed-form backends at `samples` interior times.
/// Only meaningful at `k₁ = 0`; otherwise reported as not applicable.
pub fn backend_consistency(
    scenario: &MarketScenario,
    constants: &SymmetryConstants,
    samples: usize,
) -> Result<ConsistencyReport> {
    if constants.k1 != 0.0 {
        return Ok(ConsistencyReport {
            status: ConsistencyStatus::NotApplicable,
            theta: f64::NAN,
            gamma: f64::NAN,
            alpha: f64::NAN,
            tol: BACKEND_TOL,
        });
    }
    let ode = solve_symmetry_ode(scenario, constants)?;
    let cf = closed_form_symmetry(scenario, constants)?;
    let tt = scenario.maturity();
    let mut cols = [[Vec::new(), Vec::new()], [Vec::new(), Vec::new()], [Vec::new(), Vec::new()]];
    for i in 1..=samples {
        let t = tt * i as f64 / (samples + 1) as f64;
        for (k, sf) in [&ode, &cf].into_iter().enumerate() {
            let j = sf.jet(t)?;
            cols[0][k].push(j.theta[0]);
            cols[1][k].push(j.gamma[0]);
            cols[2][k].push(j.alpha[0]);
        }
    }
    let [theta, gamma, alpha] = cols.map(|[a, b]| peak_relative(&a, &b));
    let worst = theta.max(gamma).max(alpha);
    Ok(ConsistencyReport {
        status: if worst < BACKEND_TOL {
            ConsistencyStatus::Pass
        } else {
            ConsistencyStatus::Fail
        },
        theta,
        gamma,
        alpha,
        tol: BACKEND_TOL,
    })
}

/// Coefficients of the characteristic `Q = a·V − θ·V_t − ξ·V_x` at
/// `(x = log U, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicCoefficients {
    pub a: f64,
    pub theta: f64,
    pub xi: f64,
}

/// Scans `[0, T]` for the `Y = X` singularity of the generator.
pub fn require_regular_generator(scenario: &MarketScenario) -> Result<()> {
    let tt = scenario.maturity();
    let n = 1024;
    for k in 0..=n {
        let t = tt * k as f64 / n as f64;
        let side = if t >= tt { Side::Left } else { Side::Right };
        let c = scenario.coefficient_jet(t, Some(side))?;
        let gap = c.y - c.x;
        if gap.abs() < SINGULAR_GAP || (k > 0 && gap.signum() != first_gap_sign(scenario)?) {
            return Err(Error::SingularGenerator { at: t, gap });
        }
    }
    Ok(())
}

fn first_gap_sign(scenario: &MarketScenario) -> Result<f64> {
    let c = scenario.coefficient_jet(0.0, Some(Side::Right))?;
    Ok((c.y - c.x).signum())
}

pub fn characteristic_coefficients(
    scenario: &MarketScenario,
    sf: &SymmetryFunctions,
    x: f64,
    t: f64,
) -> Result<CharacteristicCoefficients> {
    let tt = scenario.maturity();
    // derivatives from inside the domain at the end points
    let side = if t >= tt { Side::Left } else { Side::Right };
    let c = scenario.coefficient_jet(t, Some(side))?;
    let gap = c.y - c.x;
    if gap.abs() < SINGULAR_GAP {
        return Err(Error::SingularGenerator { at: t, gap });
    }
    let j = sf.jet(t)?;
    let [th, dth, _] = j.theta;
    let [al, dal, _] = j.alpha;
    let k1 = sf.constants().k1;
    let xi = j.gamma[0] + 0.5 * x * dth + x * c.dx * th / (2.0 * c.x);
    let k_block = (c.y * x * x - c.x * c.x * x * x - 2.0 * c.x * x) * k1;
    let a = al + (c.dz * x * th + c.z * x * dth - x * dal + k_block) / gap;
    Ok(CharacteristicCoefficients { a, theta: th, xi })
}

/// `Q = η − θ·V_t − ξ_S·V_S` for a price function `v(S, t)`, with the
/// partials of `v` taken by central differences.
pub fn generator_characteristic<F>(scenario: &MarketScenario, sf: &SymmetryFunctions, v: F, spot: f64, t: f64) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    if !(spot > 0.0) {
        return Err(Error::domain(format!("spot must be positive, got {spot}")));
    }
    let beta = scenario.beta();
    let x = beta * spot.ln();
    let cc = characteristic_coefficients(scenario, sf, x, t)?;
    let tt = scenario.maturity();
    let hs = 1e-4 * spot;
    let v_s = (v(spot + hs, t) - v(spot - hs, t)) / (2.0 * hs);
    let ht = 1e-4 * tt;
    let v_t = if t - ht < 0.0 {
        (v(spot, t + ht) - v(spot, t)) / ht
    } else if t + ht > tt {
        (v(spot, t) - v(spot, t - ht)) / ht
    } else {
        (v(spot, t + ht) - v(spot, t - ht)) / (2.0 * ht)
    };
    // ∂_x = (S/β) ∂_S
    Ok(cc.a * v(spot, t) - cc.theta * v_t - cc.xi * spot / beta * v_s)
}

/// Grid plan for [`verify_generator`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorGrid {
    /// Cells and time steps of the coarsest level; each level doubles both.
    pub ns: usize,
    pub nt: usize,
    pub levels: usize,
    pub domain_mult: f64,
    /// Spot window as multiples of `K^{1/β}`.
    pub spot_window: (f64, f64),
    /// Time window as fractions of `T`; keeps clear of the payoff kink.
    pub time_window: (f64, f64),
}

impl Default for GeneratorGrid {
    fn default() -> Self {
        GeneratorGrid {
            ns: 100,
            nt: 50,
            levels: 3,
            domain_mult: 4.0,
            spot_window: (0.5, 2.0),
            time_window: (0.1, 0.6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLevel {
    pub ns: usize,
    pub nt: usize,
    /// `max |L[Q]|` over the window.
    pub residual: f64,
    /// `residual / max |Q|` over the window.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorReport {
    pub levels: Vec<GeneratorLevel>,
    /// Residual ratios between consecutive levels (coarse over fine).
    pub ratios: Vec<f64>,
    pub ratio_band: (f64, f64),
    pub pass: bool,
}

pub const GENERATOR_RATIO_BAND: (f64, f64) = (2.5, 6.0);

/// Applies the PDE operator to the characteristic of a finite-difference
/// solution on a sequence of refined grids.
///
/// For a true symmetry `Q` solves the PDE, so the measured `L[Q]` is pure
/// discretization error and shrinks about fourfold per refinement; for a
/// non-symmetry it converges to a nonzero function.
pub fn verify_generator(scenario: &MarketScenario, sf: &SymmetryFunctions, grid: &GeneratorGrid) -> Result<GeneratorReport> {
    if grid.levels < 2 {
        return Err(Error::invalid("generator verification needs at least two levels"));
    }
    let mut levels = Vec::with_capacity(grid.levels);
    for l in 0..grid.levels {
        let (ns, nt) = (grid.ns << l, grid.nt << l);
        let (residual, normalized) = characteristic_residual(scenario, sf, ns, nt, grid)?;
        levels.push(GeneratorLevel {
            ns,
            nt,
            residual,
            normalized,
        });
    }
    let ratios: Vec<f64> = levels.windows(2).map(|w| w[0].residual / w[1].residual).collect();
    let band = GENERATOR_RATIO_BAND;
    let pass = ratios.iter().all(|r| *r >= band.0 && *r <= band.1);
    Ok(GeneratorReport {
        levels,
        ratios,
        ratio_band: band,
        pass,
    })
}

fn characteristic_residual(
    scenario: &MarketScenario,
    sf: &SymmetryFunctions,
    ns: usize,
    nt: usize,
    grid: &GeneratorGrid,
) -> Result<(f64, f64)> {
    let surf = fd_price(scenario, ns, nt, grid.domain_mult)?;
    let beta = scenario.beta();
    let tt = scenario.maturity();
    let z: Vec<f64> = surf.s_grid.iter().map(|s| s.ln()).collect();
    let dz = (z[ns] - z[0]) / ns as f64;
    let dt = tt / nt as f64;
    let v = &surf.values;

    // Q on every node with two neighbours in each direction
    let mut q = vec![vec![f64::NAN; ns + 1]; nt + 1];
    for j in 1..nt {
        let t = surf.t_grid[j];
        for i in 1..ns {
            let cc = characteristic_coefficients(scenario, sf, beta * z[i], t)?;
            let v_t = (v[j + 1][i] - v[j - 1][i]) / (2.0 * dt);
            let v_z = (v[j][i + 1] - v[j][i - 1]) / (2.0 * dz);
            q[j][i] = cc.a * v[j][i] - cc.theta * v_t - cc.xi / beta * v_z;
        }
    }

    let kink = scenario.kink_spot();
    let (s_lo, s_hi) = (grid.spot_window.0 * kink, grid.spot_window.1 * kink);
    let (t_lo, t_hi) = (grid.time_window.0 * tt, grid.time_window.1 * tt);
    let (mut res, mut peak) = (0.0f64, 0.0f64);
    for j in 2..nt - 1 {
        let t = surf.t_grid[j];
        if t < t_lo || t > t_hi {
            continue;
        }
        let s = scenario.sigma().eval(t)?;
        let r = scenario.rate().eval(t)?;
        let y = scenario.dividend_yield().eval(t)?;
        let (diff, drift) = (0.5 * s * s, r - y - 0.5 * s * s);
        for i in 2..ns - 1 {
            let spot = surf.s_grid[i];
            if spot < s_lo || spot > s_hi {
                continue;
            }
            let q_t = (q[j + 1][i] - q[j - 1][i]) / (2.0 * dt);
            let q_z = (q[j][i + 1] - q[j][i - 1]) / (2.0 * dz);
            let q_zz = (q[j][i + 1] - 2.0 * q[j][i] + q[j][i - 1]) / (dz * dz);
            let lq = q_t + diff * q_zz + drift * q_z - r * q[j][i];
            res = res.max(lq.abs());
            peak = peak.max(q[j][i].abs());
        }
    }
    if !res.is_finite() {
        return Err(Error::Numerical("non-finite characteristic residual".into()));
    }
    Ok((res, if peak > 0.0 { res / peak } else { res }))
}
