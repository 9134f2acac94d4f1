//! Invariant-solution reductions of the pricing PDE for the two terminal
//! conditions `V(S,T) = 0` and the power call payoff.
//!
//! A reduction is a chart `(E, u)` such that every `V = E·P(u)` turns the
//! PDE into an ODE for `P`. The ODE's coefficients are extracted by probing
//! `L[E·φ(u)]` with `φ ∈ {1, u, u²}` and are checked to depend on `u` alone
//! before anything is solved.
//!
//! Coordinates: `x = log U = β log S`; chart partials are taken in `x`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::coefficients::{Side, Transform};
use crate::error::{Error, Result, StageExt};
use crate::model::{pde_residual, payoff, MarketScenario};
use crate::numerics::{solve_dense, solve_ivp_with, IvpOptions, Trajectory};
use crate::special_functions::{hermite_fn, kummer_1f1};
use crate::symmetry::{integrate_segments, locate, side_within, solve_symmetry_ode, Segment, SymmetryConstants, SymmetryFunctions};

/// Relative spread allowed between coefficient triples sharing one `u`.
pub const EXTRACTION_TOL: f64 = 1e-6;
/// Relative ODE residual a calibrated closed form must meet.
pub const CERTIFICATE_TOL: f64 = 1e-6;

const SINGULAR_GAP: f64 = 1e-10;
const CHART_SAMPLES: usize = 512;
const SOLVE_TOL: f64 = 1e-12;

/// Which terminal condition a reduction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    ZeroPayoff,
    CallPayoff,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::ZeroPayoff => "zero-payoff",
            Branch::CallPayoff => "call-payoff",
        })
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-payoff" => Ok(Branch::ZeroPayoff),
            "call-payoff" => Ok(Branch::CallPayoff),
            other => Err(Error::invalid(format!("unknown branch `{other}`"))),
        }
    }
}

/// Zeroes the constants a branch's terminal condition forbids.
pub fn apply_boundary_constraints(branch: Branch, c: &SymmetryConstants) -> SymmetryConstants {
    match branch {
        Branch::ZeroPayoff => SymmetryConstants {
            theta1: 0.0,
            theta2: 0.0,
            k1: 0.0,
            ..*c
        },
        Branch::CallPayoff => SymmetryConstants {
            theta2: c.theta2,
            ..SymmetryConstants::zero()
        },
    }
}

/// `θ¹(t) = (θ₂/σ(t)²)(1 − F(T)F(t))` with `F(t) = ∫₀ᵗσ²`.
#[derive(Debug, Clone)]
pub struct RedefinedTheta {
    scenario: MarketScenario,
    theta2: f64,
    f_maturity: f64,
}

impl RedefinedTheta {
    pub fn eval(&self, t: f64) -> Result<f64> {
        let s = self.scenario.sigma().eval(t)?;
        let f = self.scenario.sigma().antiderivative(Transform::Square, t)?;
        Ok(self.theta2 / (s * s) * (1.0 - self.f_maturity * f))
    }
}

pub fn redefine_theta_callpayoff(scenario: &MarketScenario, theta2: f64) -> Result<RedefinedTheta> {
    scenario.require_positive_volatility()?;
    if !theta2.is_finite() {
        return Err(Error::invalid("theta2 must be finite"));
    }
    Ok(RedefinedTheta {
        scenario: scenario.clone(),
        theta2,
        f_maturity: scenario.sigma().antiderivative(Transform::Square, scenario.maturity())?,
    })
}

/// Which formulas build the chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    /// The closed-form prefactor and invariant as printed.
    Printed,
    /// Prefactor and invariant integrated along the generator's
    /// characteristics, so that `E·P(u)` is invariant by construction.
    Characteristic,
}

impl fmt::Display for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChartKind::Printed => "printed",
            ChartKind::Characteristic => "characteristic",
        })
    }
}

impl FromStr for ChartKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(ChartKind::Printed),
            "characteristic" => Ok(ChartKind::Characteristic),
            other => Err(Error::invalid(format!("unknown chart `{other}`"))),
        }
    }
}

/// `log E`, `u` and their partials in `x = log U` and `t` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    pub log_e: f64,
    pub log_e_x: f64,
    pub log_e_xx: f64,
    pub log_e_t: f64,
    pub u: f64,
    pub u_x: f64,
    pub u_xx: f64,
    pub u_t: f64,
}

/// Chart partials with respect to the spot `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotPartials {
    pub e: f64,
    pub e_s: f64,
    pub e_ss: f64,
    pub e_t: f64,
    pub u: f64,
    pub u_s: f64,
    pub u_ss: f64,
    pub u_t: f64,
}

impl ChartPoint {
    pub fn prefactor(&self) -> f64 {
        self.log_e.exp()
    }

    /// Converts to `S` derivatives using `x = β log S`.
    pub fn spot_partials(&self, beta: f64, spot: f64) -> SpotPartials {
        let (b, s2) = (beta, spot * spot);
        let e = self.prefactor();
        SpotPartials {
            e,
            e_s: e * b * self.log_e_x / spot,
            e_ss: e * (b * b * (self.log_e_xx + self.log_e_x * self.log_e_x) - b * self.log_e_x) / s2,
            e_t: e * self.log_e_t,
            u: self.u,
            u_s: b * self.u_x / spot,
            u_ss: (b * b * self.u_xx - b * self.u_x) / s2,
            u_t: self.u_t,
        }
    }
}

#[derive(Clone)]
enum ChartRepr {
    ZeroPrinted,
    ZeroCharacteristic,
    /// Accumulators `[Γ, A, B]`.
    CallPrinted { acc: Vec<Segment> },
    /// Accumulators `[g, m, n, p]`.
    CallCharacteristic { acc: Vec<Segment> },
}

/// Prefactor `E` and invariant `u` of one reduction. Immutable.
#[derive(Clone)]
pub struct InvariantChart {
    branch: Branch,
    kind: ChartKind,
    scenario: MarketScenario,
    sf: SymmetryFunctions,
    repr: ChartRepr,
}

impl fmt::Debug for InvariantChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InvariantChart")
            .field("branch", &self.branch)
            .field("kind", &self.kind)
            .field("constants", self.sf.constants())
            .finish()
    }
}

fn side_at(t: f64, horizon: f64) -> Side {
    if t >= horizon {
        Side::Left
    } else {
        Side::Right
    }
}

/// Rates `[ġ, ṁ, ṅ, ṗ]` of the characteristic call chart, with `w` and
/// `ẇ/w`.
fn call_characteristic_rates(
    sc: &MarketScenario,
    sf: &SymmetryFunctions,
    t: f64,
    side: Side,
    g: f64,
) -> Result<([f64; 4], f64, f64)> {
    let jet = sf.jet(t)?;
    let cj = sc.coefficient_jet(t, Some(side))?;
    let [th, dth, _] = jet.theta;
    let gap = cj.y - cj.x;
    let w = (cj.x * th.abs()).sqrt();
    let c = (cj.dz * th + cj.z * dth - jet.alpha[1]) / gap;
    let dn = c * w / th;
    let rates = [jet.gamma[0] / (th * w), jet.alpha[0] / th, dn, dn * g];
    let log_rate = (cj.dx * th + cj.x * dth) / (2.0 * cj.x * th);
    Ok((rates, w, log_rate))
}

/// Rates `[Γ̇, Ȧ, Ḃ]` of the printed call chart.
fn call_printed_rates(sc: &MarketScenario, sf: &SymmetryFunctions, t: f64, side: Side) -> Result<[f64; 3]> {
    let jet = sf.jet(t)?;
    let cv = sc.curve_jet(t, Some(side))?;
    let (s, r, dr, q) = (cv.sigma[0], cv.r[0], cv.r[1], cv.y[0]);
    let [th, dth, _] = jet.theta;
    let denom = sc.beta() * (2.0 * r - s * s - 2.0 * q);
    Ok([
        jet.gamma[0] / (s * th * th),
        jet.alpha[0] / th,
        2.0 * (jet.alpha[1] / th - r * dth / th - dr) / denom,
    ])
}

impl InvariantChart {
    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn kind(&self) -> ChartKind {
        self.kind
    }

    pub fn scenario(&self) -> &MarketScenario {
        &self.scenario
    }

    pub fn symmetry(&self) -> &SymmetryFunctions {
        &self.sf
    }

    /// Chart at spot `S` and time `t`.
    pub fn point(&self, spot: f64, t: f64) -> Result<ChartPoint> {
        if !(spot > 0.0) || !spot.is_finite() {
            return Err(Error::domain(format!("spot must be positive, got {spot}")));
        }
        self.point_x(self.scenario.beta() * spot.ln(), t)
    }

    pub fn invariant(&self, spot: f64, t: f64) -> Result<f64> {
        Ok(self.point(spot, t)?.u)
    }

    /// The spot at which the invariant takes the value `u` at time `t`.
    pub fn spot_for(&self, u: f64, t: f64) -> Result<f64> {
        let sc = &self.scenario;
        let x = match &self.repr {
            ChartRepr::ZeroPrinted | ChartRepr::ZeroCharacteristic => {
                return Err(Error::invalid("u = t does not determine the spot"))
            }
            ChartRepr::CallPrinted { acc } => {
                let seg = locate(acc, t)?;
                let gam = seg.traj.eval(t)?[0];
                let s = sc.sigma().eval(t)?;
                sc.beta() * (gam - u) * s * self.sf.theta(t)?
            }
            ChartRepr::CallCharacteristic { acc } => {
                let seg = locate(acc, t)?;
                let g = seg.traj.eval(t)?[0];
                let (_, w, _) = call_characteristic_rates(sc, &self.sf, t, side_within(seg, t), g)?;
                w * (u + g)
            }
        };
        let spot = (x / sc.beta()).exp();
        if !(spot > 0.0) || !spot.is_finite() {
            return Err(Error::domain(format!("u={u} maps outside the spot axis at t={t}")));
        }
        Ok(spot)
    }

    fn point_x(&self, x: f64, t: f64) -> Result<ChartPoint> {
        let sc = &self.scenario;
        let beta = sc.beta();
        let horizon = sc.maturity();
        match &self.repr {
            ChartRepr::ZeroPrinted => {
                let c = self.sf.constants();
                let jet = self.sf.jet(t)?;
                let [gam, dgam, _] = jet.gamma;
                let r = &sc.rate();
                let q = sc.dividend_yield();
                let rr = r.antiderivative(Transform::Identity, t)? - q.antiderivative(Transform::Identity, t)?
                    - 0.5 * sc.sigma().antiderivative(Transform::Square, t)?;
                let s = sc.sigma().eval(t)?;
                let drr = r.eval(t)? - q.eval(t)? - 0.5 * s * s;
                let l = x / beta;
                let g = l * (c.alpha1 * beta - c.gamma1 * l / (2.0 * beta) + c.gamma1 * rr) / (gam * beta);
                let g_l = (c.alpha1 * beta - c.gamma1 * l / beta + c.gamma1 * rr) / (gam * beta);
                let g_ll = -c.gamma1 / (gam * beta * beta);
                Ok(ChartPoint {
                    log_e: g,
                    log_e_x: g_l / beta,
                    log_e_xx: g_ll / (beta * beta),
                    log_e_t: l * c.gamma1 * drr / (gam * beta) - g * dgam / gam,
                    u: t,
                    u_x: 0.0,
                    u_xx: 0.0,
                    u_t: 1.0,
                })
            }
            ChartRepr::ZeroCharacteristic => {
                let jet = self.sf.jet(t)?;
                let cj = sc.coefficient_jet(t, Some(side_at(t, horizon)))?;
                let [gam, dgam, _] = jet.gamma;
                let [a, da, dda] = jet.alpha;
                let d = cj.y - cj.x;
                let dd = cj.dy - cj.dx;
                let h = (a * x - da * x * x / (2.0 * d)) / gam;
                Ok(ChartPoint {
                    log_e: h,
                    log_e_x: (a - da * x / d) / gam,
                    log_e_xx: -da / (d * gam),
                    log_e_t: (da * x - dda * x * x / (2.0 * d) + da * x * x * dd / (2.0 * d * d)) / gam - h * dgam / gam,
                    u: t,
                    u_x: 0.0,
                    u_xx: 0.0,
                    u_t: 1.0,
                })
            }
            ChartRepr::CallPrinted { acc } => {
                let seg = locate(acc, t)?;
                let y = seg.traj.eval(t)?;
                let rates = call_printed_rates(sc, &self.sf, t, side_within(seg, t))?;
                let jet = self.sf.jet(t)?;
                let cv = sc.curve_jet(t, Some(side_within(seg, t)))?;
                let [s, ds, _] = cv.sigma;
                let [th, dth, _] = jet.theta;
                let l = x / beta;
                Ok(ChartPoint {
                    log_e: y[1] - l * y[2],
                    log_e_x: -y[2] / beta,
                    log_e_xx: 0.0,
                    log_e_t: rates[1] - l * rates[2],
                    u: y[0] - l / (s * th),
                    u_x: -1.0 / (beta * s * th),
                    u_xx: 0.0,
                    u_t: rates[0] + l * (ds * th + s * dth) / (s * th * s * th),
                })
            }
            ChartRepr::CallCharacteristic { acc } => {
                let seg = locate(acc, t)?;
                let y = seg.traj.eval(t)?;
                let (rates, w, log_rate) = call_characteristic_rates(sc, &self.sf, t, side_within(seg, t), y[0])?;
                let u = x / w - y[0];
                let u_t = -x * log_rate / w - rates[0];
                Ok(ChartPoint {
                    log_e: y[1] + y[3] + y[2] * u,
                    log_e_x: y[2] / w,
                    log_e_xx: 0.0,
                    log_e_t: rates[1] + rates[3] + rates[2] * u + y[2] * u_t,
                    u,
                    u_x: 1.0 / w,
                    u_xx: 0.0,
                    u_t,
                })
            }
        }
    }
}

/// Fails with a singular-chart error where `f` vanishes or changes sign
/// on a uniform sample of `[0, T]`.
fn require_nonvanishing<F>(horizon: f64, factor: &'static str, f: F) -> Result<()>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut prev: Option<f64> = None;
    for k in 0..=CHART_SAMPLES {
        let t = horizon * k as f64 / CHART_SAMPLES as f64;
        let v = f(t)?;
        if !(v.abs() > SINGULAR_GAP) || prev.is_some_and(|p| p.signum() != v.signum()) {
            return Err(Error::SingularChart { factor, at: t });
        }
        prev = Some(v);
    }
    Ok(())
}

/// Builds the chart of `branch` from branch-constrained symmetry functions.
pub fn invariant_chart(
    branch: Branch,
    kind: ChartKind,
    scenario: &MarketScenario,
    sf: &SymmetryFunctions,
) -> Result<InvariantChart> {
    scenario.require_positive_volatility()?;
    let c = sf.constants();
    // θ₁ carries the call-payoff redefinition of θ, so it is not checked
    let constrained = SymmetryConstants {
        theta1: if branch == Branch::CallPayoff { c.theta1 } else { 0.0 },
        ..apply_boundary_constraints(branch, c)
    };
    if constrained != *c {
        return Err(Error::invalid(format!("constants {c} violate the {branch} constraints")));
    }
    let horizon = scenario.maturity();
    let gap = |t: f64| -> Result<f64> {
        let cj = scenario.coefficient_jet(t, Some(side_at(t, horizon)))?;
        Ok(cj.y - cj.x)
    };
    let repr = match (branch, kind) {
        (Branch::ZeroPayoff, ChartKind::Printed) => {
            require_nonvanishing(horizon, "gamma", |t| sf.gamma(t))?;
            ChartRepr::ZeroPrinted
        }
        (Branch::ZeroPayoff, ChartKind::Characteristic) => {
            require_nonvanishing(horizon, "gamma", |t| sf.gamma(t))?;
            require_nonvanishing(horizon, "Y - X", gap)?;
            ChartRepr::ZeroCharacteristic
        }
        (Branch::CallPayoff, ChartKind::Printed) => {
            require_nonvanishing(horizon, "theta", |t| sf.theta(t))?;
            require_nonvanishing(horizon, "2r - sigma^2 - 2y", |t| {
                let cv = scenario.curve_jet(t, Some(side_at(t, horizon)))?;
                Ok(2.0 * cv.r[0] - cv.sigma[0] * cv.sigma[0] - 2.0 * cv.y[0])
            })?;
            let acc = integrate_segments(scenario, vec![0.0; 3], |t, side, _, dy| {
                dy.copy_from_slice(&call_printed_rates(scenario, sf, t, side)?);
                Ok(())
            })?;
            ChartRepr::CallPrinted { acc }
        }
        (Branch::CallPayoff, ChartKind::Characteristic) => {
            require_nonvanishing(horizon, "theta", |t| sf.theta(t))?;
            require_nonvanishing(horizon, "Y - X", gap)?;
            let acc = integrate_segments(scenario, vec![0.0; 4], |t, side, y, dy| {
                let (rates, _, _) = call_characteristic_rates(scenario, sf, t, side, y[0])?;
                dy.copy_from_slice(&rates);
                Ok(())
            })?;
            ChartRepr::CallCharacteristic { acc }
        }
    };
    Ok(InvariantChart {
        branch,
        kind,
        scenario: scenario.clone(),
        sf: sf.clone(),
        repr,
    })
}

/// Working spot domain `[K^{1/β}/10, 10·K^{1/β}]`.
pub fn working_domain(scenario: &MarketScenario) -> (f64, f64) {
    let k = scenario.kink_spot();
    (0.1 * k, 10.0 * k)
}

/// Raw `(c₀, c₁, c₂)` at one point from the three probes `φ ∈ {1, u, u²}`.
fn probe_coefficients(chart: &InvariantChart, spot: f64, t: f64) -> Result<[f64; 3]> {
    let sc = chart.scenario();
    let p = chart.point(spot, t)?;
    let cj = sc.coefficient_jet(t, Some(side_at(t, sc.maturity())))?;
    let (x, d, z) = (cj.x, cj.y - cj.x, cj.z);
    // L[E·φ(u)]/E = φ·b0 + φ'·b1 + φ''·b2
    let b0 = p.log_e_t + x * (p.log_e_xx + p.log_e_x * p.log_e_x) + d * p.log_e_x - z;
    let b1 = p.u_t + x * (2.0 * p.log_e_x * p.u_x + p.u_xx) + d * p.u_x;
    let b2 = x * p.u_x * p.u_x;
    let u = p.u;
    let phis = [[1.0, 0.0, 0.0], [u, 1.0, 0.0], [u * u, 2.0 * u, 2.0]];
    let lhs: Vec<f64> = phis.iter().map(|f| f[0] * b0 + f[1] * b1 + f[2] * b2).collect();
    let rows: Vec<Vec<f64>> = phis.iter().map(|f| f.to_vec()).collect();
    let c = solve_dense(rows, lhs, 1e-12)
        .ok_or_else(|| Error::Extraction(format!("ill-conditioned probe system at S={spot}, t={t}")))?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Extraction(format!("non-finite coefficients at S={spot}, t={t}")));
    }
    Ok([c[0], c[1], c[2]])
}

/// One tabulated coefficient triple, normalized by the leading coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSample {
    pub spot: f64,
    pub t: f64,
    pub u: f64,
    pub c: [f64; 3],
}

type Sampler = Arc<dyn Fn(f64) -> Result<[f64; 3]> + Send + Sync>;

/// `c₂P″ + c₁P′ + c₀P = 0` normalized so the leading coefficient is 1
/// (`c₂ = 0` for order 1).
#[derive(Clone)]
pub struct ReducedOde {
    order: u8,
    samples: Vec<CoefficientSample>,
    spread: f64,
    tol: f64,
    sampler: Sampler,
}

impl fmt::Debug for ReducedOde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedOde")
            .field("order", &self.order)
            .field("samples", &self.samples.len())
            .field("spread", &self.spread)
            .finish()
    }
}

impl ReducedOde {
    /// An ODE with given normalized coefficients, e.g. for tests.
    pub fn from_fn<F>(order: u8, coefficients: F) -> Result<Self>
    where
        F: Fn(f64) -> [f64; 3] + Send + Sync + 'static,
    {
        if !(order == 1 || order == 2) {
            return Err(Error::invalid("reduced ODE order must be 1 or 2"));
        }
        Ok(ReducedOde {
            order,
            samples: Vec::new(),
            spread: 0.0,
            tol: EXTRACTION_TOL,
            sampler: Arc::new(move |u| Ok(coefficients(u))),
        })
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn samples(&self) -> &[CoefficientSample] {
        &self.samples
    }

    /// Largest relative disagreement among probes sharing one `u`.
    pub fn spread(&self) -> f64 {
        self.spread
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Normalized `[c₀, c₁, c₂]` at `u`.
    pub fn coefficients(&self, u: f64) -> Result<[f64; 3]> {
        (self.sampler)(u)
    }
}

fn normalize(raw: [f64; 3], order: u8, spot: f64, t: f64) -> Result<[f64; 3]> {
    let lead = if order == 2 { raw[2] } else { raw[1] };
    if !(lead.abs() > 0.0) {
        return Err(Error::Extraction(format!("leading coefficient vanishes at S={spot}, t={t}")));
    }
    let mut c = raw.map(|v| v / lead);
    if order == 1 {
        c[2] = 0.0;
    }
    Ok(c)
}

/// Default probes: several `u` level sets, each visited at several times
/// (call payoff), or several spots at each of several times (zero payoff).
pub fn default_probes(chart: &InvariantChart) -> Result<Vec<(f64, f64)>> {
    let sc = chart.scenario();
    let horizon = sc.maturity();
    let kink = sc.kink_spot();
    let (lo, hi) = working_domain(sc);
    let mut probes = Vec::new();
    match chart.branch() {
        Branch::ZeroPayoff => {
            for j in 0..=8 {
                let t = horizon * j as f64 / 8.0;
                for m in [0.5, 1.0, 2.0] {
                    probes.push((m * kink, t));
                }
            }
        }
        Branch::CallPayoff => {
            for m in [0.5, 0.8, 1.0, 1.25, 2.0] {
                let u = chart.invariant(m * kink, horizon)?;
                for frac in [1.0, 0.75, 0.5, 0.25, 0.0] {
                    let t = frac * horizon;
                    let spot = chart.spot_for(u, t)?;
                    if spot > lo && spot < hi {
                        probes.push((spot, t));
                    }
                }
            }
        }
    }
    Ok(probes)
}

/// Extracts the reduced ODE at the probes and checks that probes sharing a
/// value of `u` agree.
pub fn extract_reduced_ode(chart: &InvariantChart, probes: &[(f64, f64)]) -> Result<ReducedOde> {
    if probes.is_empty() {
        return Err(Error::invalid("no probe points"));
    }
    let raw: Vec<(f64, f64, f64, [f64; 3])> = probes
        .iter()
        .map(|&(s, t)| Ok((s, t, chart.invariant(s, t)?, probe_coefficients(chart, s, t)?)))
        .collect::<Result<_>>()?;
    let second_scale = raw.iter().map(|r| r.3[1].abs().max(r.3[0].abs())).fold(0.0, f64::max);
    let order = if raw.iter().all(|r| r.3[2].abs() <= 1e-14 * second_scale) { 1 } else { 2 };
    let mut samples: Vec<CoefficientSample> = raw
        .iter()
        .map(|&(spot, t, u, c)| {
            Ok(CoefficientSample {
                spot,
                t,
                u,
                c: normalize(c, order, spot, t)?,
            })
        })
        .collect::<Result<_>>()?;
    samples.sort_by(|a, b| a.u.total_cmp(&b.u));

    let mut spread: f64 = 0.0;
    let mut start = 0;
    while start < samples.len() {
        let u0 = samples[start].u;
        let end = start
            + samples[start..]
                .iter()
                .take_while(|s| (s.u - u0).abs() <= 1e-9 * (1.0 + u0.abs()))
                .count();
        let group = &samples[start..end];
        let scale = group.iter().flat_map(|s| s.c).map(f64::abs).fold(1.0, f64::max);
        for k in 0..3 {
            let (mn, mx) = group
                .iter()
                .map(|s| s.c[k])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            spread = spread.max((mx - mn) / scale);
        }
        start = end;
    }
    if !(spread <= EXTRACTION_TOL) {
        return Err(Error::InconsistentReduction {
            spread,
            tol: EXTRACTION_TOL,
        });
    }

    let sc = chart.scenario().clone();
    let horizon = sc.maturity();
    let kink = sc.kink_spot();
    let chart = chart.clone();
    let sampler: Sampler = match chart.branch() {
        Branch::ZeroPayoff => Arc::new(move |u| normalize(probe_coefficients(&chart, kink, u)?, order, kink, u)),
        Branch::CallPayoff => Arc::new(move |u| {
            let spot = chart.spot_for(u, horizon)?;
            normalize(probe_coefficients(&chart, spot, horizon)?, order, spot, horizon)
        }),
    };
    Ok(ReducedOde {
        order,
        samples,
        spread,
        tol: EXTRACTION_TOL,
        sampler,
    })
}

/// Terminal data for [`solve_reduced_ode`]; `slope` is required for order 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terminal {
    pub u: f64,
    pub value: f64,
    pub slope: Option<f64>,
}

/// Dense solution `P(u)` on a closed interval.
#[derive(Debug, Clone)]
pub struct ReducedSolution {
    terminal: Terminal,
    down: Option<Trajectory>,
    up: Option<Trajectory>,
}

impl ReducedSolution {
    pub fn range(&self) -> (f64, f64) {
        let lo = self.down.as_ref().map_or(self.terminal.u, |t| t.span().0);
        let hi = self.up.as_ref().map_or(self.terminal.u, |t| t.span().1);
        (lo, hi)
    }

    /// `P(u)`.
    pub fn eval(&self, u: f64) -> Result<f64> {
        Ok(self.state(u)?[0])
    }

    /// `P′(u)`.
    pub fn slope(&self, u: f64) -> Result<f64> {
        let traj = self.pick(u)?;
        match traj {
            Some(t) => Ok(t.eval_slope(u)?[0]),
            None => Ok(self.terminal.slope.unwrap_or(0.0)),
        }
    }

    fn pick(&self, u: f64) -> Result<Option<&Trajectory>> {
        let (lo, hi) = self.range();
        if !(u >= lo && u <= hi) {
            return Err(Error::domain(format!("u={u} outside the solved range [{lo}, {hi}]")));
        }
        Ok(if u < self.terminal.u { self.down.as_ref() } else { self.up.as_ref() })
    }

    fn state(&self, u: f64) -> Result<Vec<f64>> {
        match self.pick(u)? {
            Some(t) => t.eval(u),
            None => Ok(vec![self.terminal.value]),
        }
    }
}

/// Integrates the reduced ODE from the terminal data across `range`.
pub fn solve_reduced_ode(rode: &ReducedOde, terminal: Terminal, range: (f64, f64)) -> Result<ReducedSolution> {
    let (lo, hi) = (range.0.min(terminal.u), range.1.max(terminal.u));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::invalid("solve range must be finite"));
    }
    let y0 = match (rode.order, terminal.slope) {
        (1, _) => vec![terminal.value],
        (2, Some(s)) => vec![terminal.value, s],
        (_, None) => return Err(Error::invalid("order-2 reduced ODE needs a terminal slope")),
        _ => unreachable!("order is 1 or 2"),
    };
    let width = (hi - lo).max(f64::MIN_POSITIVE);
    let opts = IvpOptions::with_tol(SOLVE_TOL).max_step(width / 2000.0);
    let failure = std::sync::Mutex::new(None);
    let rhs = |u: f64, y: &[f64], dy: &mut [f64]| match rode.coefficients(u) {
        Ok(c) if rode.order == 1 => dy[0] = -c[0] * y[0],
        Ok(c) => {
            dy[0] = y[1];
            dy[1] = -(c[1] * y[1] + c[0] * y[0]);
        }
        Err(e) => {
            dy.iter_mut().for_each(|d| *d = f64::NAN);
            failure.lock().expect("unpoisoned").get_or_insert(e);
        }
    };
    let run = |to: f64| -> Result<Option<Trajectory>> {
        if to == terminal.u {
            return Ok(None);
        }
        let traj = solve_ivp_with(rhs, terminal.u, &y0, to, opts);
        if let Some(e) = failure.lock().expect("unpoisoned").take() {
            return Err(e);
        }
        Ok(Some(traj?))
    };
    let down = run(lo)?;
    let up = run(hi)?;
    Ok(ReducedSolution { terminal, down, up })
}

/// The experimental closed forms for `P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedFormP {
    /// `scale·e^{−κu}`.
    Exponential { kappa: f64, scale: f64 },
    /// `e^{−(2a + ub − 2c/b)}·H_ν((ab + ub² − 2c)/√(2b³))`, `ν = −1 + c²/b³ + ac/b²`.
    Hermite { a: f64, b: f64, c: f64 },
    /// `e^{−(2a + ub − 2c/b)}·₁F₁((b³ + abc − c²)/(2b³); ½; (ab + ub² − 2c²)²/(2b³))`.
    Kummer { a: f64, b: f64, c: f64 },
}

impl ClosedFormP {
    pub fn eval(&self, u: f64) -> Result<f64> {
        Ok(self.jet(u)?[0])
    }

    /// `[P, P′, P″]` at `u`, differentiated analytically.
    pub fn jet(&self, u: f64) -> Result<[f64; 3]> {
        match *self {
            ClosedFormP::Exponential { kappa, scale } => {
                let p = scale * (-kappa * u).exp();
                Ok([p, -kappa * p, kappa * kappa * p])
            }
            ClosedFormP::Hermite { a, b, c } => {
                if !(b > 0.0) {
                    return Err(Error::domain("Hermite form needs b > 0"));
                }
                let b3 = b * b * b;
                let nu = -1.0 + c * c / b3 + a * c / (b * b);
                let dz = b * b / (2.0 * b3).sqrt();
                let z = (a * b + u * b * b - 2.0 * c) / (2.0 * b3).sqrt();
                // H′_ν = 2νH_{ν−1}
                let h0 = hermite_fn(nu, z)?.value;
                let h1 = 2.0 * nu * hermite_fn(nu - 1.0, z)?.value;
                let h2 = 4.0 * nu * (nu - 1.0) * hermite_fn(nu - 2.0, z)?.value;
                Ok(exp_times(a, b, c, u, [h0, dz * h1, dz * dz * h2]))
            }
            ClosedFormP::Kummer { a, b, c } => {
                if !(b > 0.0) {
                    return Err(Error::domain("Kummer form needs b > 0"));
                }
                let b3 = b * b * b;
                let ka = (b3 + a * b * c - c * c) / (2.0 * b3);
                let s = (a * b + u * b * b - 2.0 * c * c) / (2.0 * b3).sqrt();
                let ds = b * b / (2.0 * b3).sqrt();
                let (w, dw, ddw) = (s * s, 2.0 * s * ds, 2.0 * ds * ds);
                // d/dW ₁F₁(A; B; W) = (A/B) ₁F₁(A+1; B+1; W)
                let m0 = kummer_1f1(ka, 0.5, w)?.value;
                let m1 = ka / 0.5 * kummer_1f1(ka + 1.0, 1.5, w)?.value;
                let m2 = ka * (ka + 1.0) / 0.75 * kummer_1f1(ka + 2.0, 2.5, w)?.value;
                Ok(exp_times(a, b, c, u, [m0, m1 * dw, m2 * dw * dw + m1 * ddw]))
            }
        }
    }
}

/// `[P, P′, P″]` of `e^{−(2a + ub − 2c/b)}·f(u)` from the jet of `f`;
/// cosh − sinh is evaluated as the single exponential.
fn exp_times(a: f64, b: f64, c: f64, u: f64, f: [f64; 3]) -> [f64; 3] {
    let e = (-(2.0 * a + u * b - 2.0 * c / b)).exp();
    [e * f[0], e * (f[1] - b * f[0]), e * (f[2] - 2.0 * b * f[1] + b * b * f[0])]
}

/// Calibrated closed forms with their residual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormSolution {
    pub basis: Vec<ClosedFormP>,
    /// Largest relative ODE residual over the range.
    pub certificate: f64,
    pub tol: f64,
}

impl ClosedFormSolution {
    pub fn passes(&self) -> bool {
        self.certificate <= self.tol
    }
}

/// Signed residual of the normalized ODE relative to the size of its terms.
fn relative_residual(rode: &ReducedOde, form: &ClosedFormP, u: f64) -> Result<f64> {
    let c = rode.coefficients(u)?;
    let [p, d1, d2] = form.jet(u)?;
    let (lead, terms) = if rode.order == 1 {
        (d1, d1.abs())
    } else {
        (d2 + c[1] * d1, d2.abs() + (c[1] * d1).abs())
    };
    let terms = terms + (c[0] * p).abs();
    Ok((lead + c[0] * p) / terms.max(f64::MIN_POSITIVE))
}

fn certificate(rode: &ReducedOde, basis: &[ClosedFormP], range: (f64, f64)) -> f64 {
    let mut worst: f64 = 0.0;
    for f in basis {
        for k in 0..=64 {
            let u = range.0 + (range.1 - range.0) * k as f64 / 64.0;
            match relative_residual(rode, f, u) {
                Ok(r) if r.is_finite() => worst = worst.max(r.abs()),
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}

/// Fits `(a, b, c)` of the Hermite form so the ODE holds at three
/// collocation points, by damped Newton from a small grid of starts. Among
/// the converged roots the one with the best full certificate wins, since
/// the companion ₁F₁ form solves the ODE only on some of them.
fn calibrate_hermite(rode: &ReducedOde, range: (f64, f64)) -> Option<([f64; 3], f64)> {
    let nodes = [0.25, 0.5, 0.75].map(|f| range.0 + f * (range.1 - range.0));
    let residuals = |q: [f64; 3]| -> Option<[f64; 3]> {
        let form = ClosedFormP::Hermite { a: q[0], b: q[1], c: q[2] };
        let mut out = [0.0; 3];
        for (o, &u) in out.iter_mut().zip(&nodes) {
            *o = relative_residual(rode, &form, u).ok().filter(|r| r.is_finite())?;
        }
        Some(out)
    };
    let norm = |r: &[f64; 3]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let newton = |mut q: [f64; 3]| -> Option<[f64; 3]> {
        let mut r = residuals(q)?;
        for _ in 0..40 {
            if norm(&r) < 1e-12 {
                break;
            }
            let mut jac = vec![vec![0.0; 3]; 3];
            for j in 0..3 {
                let dq = 1e-6 * q[j].abs().max(1.0);
                let mut qp = q;
                qp[j] += dq;
                let rp = residuals(qp)?;
                (0..3).for_each(|i| jac[i][j] = (rp[i] - r[i]) / dq);
            }
            let Some(step) = solve_dense(jac, r.map(|v| -v).to_vec(), 1e-14) else { break };
            let mut lambda = 1.0;
            let mut improved = false;
            while lambda > 1e-4 {
                let trial = std::array::from_fn(|i| q[i] + lambda * step[i]);
                if let Some(rt) = residuals(trial).filter(|rt| norm(rt) < norm(&r)) {
                    (q, r) = (trial, rt);
                    improved = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Some(q)
    };
    let mut best: Option<([f64; 3], f64)> = None;
    for b0 in [0.25, 1.0, 4.0] {
        for a0 in [-1.0, 0.0, 1.0] {
            for c0 in [-1.0, 0.0, 1.0] {
                let Some(q) = newton([a0, b0, c0]) else { continue };
                let basis = [ClosedFormP::Hermite { a: q[0], b: q[1], c: q[2] }, ClosedFormP::Kummer { a: q[0], b: q[1], c: q[2] }];
                let cert = certificate(rode, &basis, range);
                if best.map_or(true, |(_, bc)| cert < bc) {
                    best = Some((q, cert));
                }
            }
        }
    }
    best
}

/// Calibrates the branch's closed form against the extracted ODE and
/// returns it with its certificate, whether or not the certificate passes.
pub fn calibrate_closed_form(
    branch: Branch,
    rode: &ReducedOde,
    terminal: Terminal,
    range: (f64, f64),
) -> Result<ClosedFormSolution> {
    let range = (range.0.min(terminal.u), range.1.max(terminal.u));
    let basis = match branch {
        Branch::ZeroPayoff => {
            if rode.order != 1 {
                return Err(Error::invalid("zero-payoff closed form needs a first-order reduced ODE"));
            }
            let kappa = rode.coefficients(terminal.u)?[0];
            vec![ClosedFormP::Exponential {
                kappa,
                scale: terminal.value * (kappa * terminal.u).exp(),
            }]
        }
        Branch::CallPayoff => match calibrate_hermite(rode, range) {
            Some(([a, b, c], _)) => vec![ClosedFormP::Hermite { a, b, c }, ClosedFormP::Kummer { a, b, c }],
            None => {
                return Ok(ClosedFormSolution {
                    basis: Vec::new(),
                    certificate: f64::INFINITY,
                    tol: CERTIFICATE_TOL,
                })
            }
        },
    };
    Ok(ClosedFormSolution {
        certificate: certificate(rode, &basis, range),
        basis,
        tol: CERTIFICATE_TOL,
    })
}

/// Like [`calibrate_closed_form`], but rejects forms whose certificate fails.
pub fn closed_form_p(branch: Branch, rode: &ReducedOde, terminal: Terminal, range: (f64, f64)) -> Result<ClosedFormSolution> {
    let sol = calibrate_closed_form(branch, rode, terminal, range)?;
    if !sol.passes() {
        return Err(Error::ExperimentalFormRejected {
            certificate: sol.certificate,
            tol: sol.tol,
        });
    }
    Ok(sol)
}

/// A basis function `P_k(u)` from either backend.
#[derive(Debug, Clone)]
pub enum BasisFunction {
    Numeric(ReducedSolution),
    ClosedForm(ClosedFormP),
}

impl BasisFunction {
    pub fn eval(&self, u: f64) -> Result<f64> {
        match self {
            BasisFunction::Numeric(s) => s.eval(u),
            BasisFunction::ClosedForm(f) => f.eval(u),
        }
    }
}

/// Least-squares constants with the RMS terminal residual.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub c1: f64,
    pub c2: Option<f64>,
    pub fit_error: f64,
    /// Largest pointwise terminal residual on the fit grid.
    pub max_residual: f64,
    /// RMS of the payoff on the fit grid.
    pub target_rms: f64,
}

impl FitResult {
    pub fn coefficients(&self) -> Vec<f64> {
        std::iter::once(self.c1).chain(self.c2).collect()
    }

    /// `fit_error / target_rms`; zero when both vanish.
    pub fn relative_error(&self) -> f64 {
        if self.target_rms == 0.0 {
            if self.fit_error == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.fit_error / self.target_rms
        }
    }
}

/// `V_k(S, T) = E(S,T)·P_k(u(S,T))` on the grid.
fn terminal_columns(chart: &InvariantChart, basis: &[BasisFunction], grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let horizon = chart.scenario().maturity();
    basis
        .iter()
        .map(|b| {
            grid.iter()
                .map(|&s| {
                    let p = chart.point(s, horizon)?;
                    let v = p.prefactor() * b.eval(p.u)?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::Numerical(format!("non-finite basis value at S={s}")))
                    }
                })
                .collect()
        })
        .collect()
}

/// Fits the constants against the branch's terminal condition.
pub fn fit_constants(
    branch: Branch,
    chart: &InvariantChart,
    basis: &[BasisFunction],
    fit_grid: &[f64],
) -> Result<FitResult> {
    if basis.is_empty() || basis.len() > 2 {
        return Err(Error::invalid("fit needs one or two basis functions"));
    }
    if fit_grid.len() < basis.len() {
        return Err(Error::invalid("fit grid smaller than the basis"));
    }
    let sc = chart.scenario();
    let (lo, hi) = working_domain(sc);
    if fit_grid.iter().any(|&s| !(s >= lo && s <= hi)) {
        return Err(Error::domain("fit grid leaves the working domain"));
    }
    let target: Vec<f64> = match branch {
        Branch::ZeroPayoff => vec![0.0; fit_grid.len()],
        Branch::CallPayoff => fit_grid.iter().map(|&s| payoff(sc, s)).collect::<Result<_>>()?,
    };
    let cols = terminal_columns(chart, basis, fit_grid)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let coeffs = if cols.len() == 1 {
        let a = dot(&cols[0], &cols[0]);
        if !(a > 0.0) {
            return Err(Error::DegenerateBasis);
        }
        vec![dot(&cols[0], &target) / a]
    } else {
        let (a11, a12, a22) = (dot(&cols[0], &cols[0]), dot(&cols[0], &cols[1]), dot(&cols[1], &cols[1]));
        let det = a11 * a22 - a12 * a12;
        if !(det > 1e-10 * a11 * a22) {
            return Err(Error::DegenerateBasis);
        }
        let (b1, b2) = (dot(&cols[0], &target), dot(&cols[1], &target));
        vec![(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det]
    };
    let residuals: Vec<f64> = (0..fit_grid.len())
        .map(|i| coeffs.iter().zip(&cols).map(|(c, col)| c * col[i]).sum::<f64>() - target[i])
        .collect();
    let fit_error = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    Ok(FitResult {
        c1: coeffs[0],
        c2: coeffs.get(1).copied(),
        fit_error,
        max_residual: residuals.iter().map(|r| r.abs()).fold(0.0, f64::max),
        target_rms: (target.iter().map(|v| v * v).sum::<f64>() / target.len() as f64).sqrt(),
    })
}

/// How the reduced ODE is solved for pricing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceBackend {
    Numeric,
    ExperimentalClosedForm,
}

impl FromStr for PriceBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "numeric" => Ok(PriceBackend::Numeric),
            "experimental" | "experimental-closed-form" => Ok(PriceBackend::ExperimentalClosedForm),
            other => Err(Error::invalid(format!("unknown price backend `{other}`"))),
        }
    }
}

/// Knobs of [`PricingPipeline::build`].
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// The surviving constant of the call-payoff symmetry.
    pub theta2: f64,
    /// Constants for the zero-payoff symmetry before constraints.
    pub zero_constants: SymmetryConstants,
    /// Chart formulas; `None` picks printed for zero payoff and
    /// characteristic for the call payoff.
    pub chart: Option<ChartKind>,
    pub fit_points: usize,
    /// Spots the solved `u` range must cover besides the working domain.
    pub spots: Vec<f64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            theta2: 1.0,
            zero_constants: SymmetryConstants {
                gamma2: 1.0,
                alpha1: 1.0,
                ..SymmetryConstants::zero()
            },
            chart: None,
            fit_points: 64,
            spots: Vec::new(),
        }
    }
}

/// A price with its PDE spot-check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricePoint {
    pub spot: f64,
    pub t: f64,
    pub value: f64,
    /// Stencil residual of the assembled solution near `(S, t)`.
    pub pde_residual: f64,
    /// Time at which the residual stencil was centered.
    pub residual_t: f64,
}

/// A fully built reduction. Immutable; safe to query from many threads.
#[derive(Debug, Clone)]
pub struct PricingPipeline {
    branch: Branch,
    backend: PriceBackend,
    chart: InvariantChart,
    rode: ReducedOde,
    basis: Vec<BasisFunction>,
    fit: FitResult,
    range: (f64, f64),
    certificate: Option<f64>,
}

/// `[min u, max u]` over the working domain, extra spots and `[0, T]`.
fn invariant_range(chart: &InvariantChart, spots: &[f64]) -> Result<(f64, f64)> {
    let sc = chart.scenario();
    let horizon = sc.maturity();
    if chart.branch() == Branch::ZeroPayoff {
        return Ok((0.0, horizon));
    }
    let (lo, hi) = working_domain(sc);
    let mut grid: Vec<f64> = (0..=32).map(|k| lo * (hi / lo).powf(k as f64 / 32.0)).collect();
    grid.extend_from_slice(spots);
    let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..=32 {
        let t = horizon * k as f64 / 32.0;
        for &s in &grid {
            let u = chart.invariant(s, t)?;
            umin = umin.min(u);
            umax = umax.max(u);
        }
    }
    let pad = 0.02 * (umax - umin).max(1e-6);
    Ok((umin - pad, umax + pad))
}

impl PricingPipeline {
    pub fn build(branch: Branch, scenario: &MarketScenario, backend: PriceBackend, opts: &PipelineOptions) -> Result<Self> {
        let constants = match branch {
            Branch::ZeroPayoff => apply_boundary_constraints(branch, &opts.zero_constants),
            Branch::CallPayoff => {
                // θ¹ is the ODE solution with θ₁ = −θ₂F(T)
                let f_t = scenario.sigma().antiderivative(Transform::Square, scenario.maturity());
                SymmetryConstants {
                    theta1: -opts.theta2 * f_t.stage("constraints")?,
                    theta2: opts.theta2,
                    ..SymmetryConstants::zero()
                }
            }
        };
        let sf = solve_symmetry_ode(scenario, &constants).stage("symmetry")?;
        let kind = opts.chart.unwrap_or(match branch {
            Branch::ZeroPayoff => ChartKind::Printed,
            Branch::CallPayoff => ChartKind::Characteristic,
        });
        let chart = invariant_chart(branch, kind, scenario, &sf).stage("chart")?;
        let probes = default_probes(&chart).stage("extraction")?;
        let rode = extract_reduced_ode(&chart, &probes).stage("extraction")?;
        let range = invariant_range(&chart, &opts.spots).stage("reduced-ode")?;

        let horizon = scenario.maturity();
        let u_t = match branch {
            Branch::ZeroPayoff => horizon,
            Branch::CallPayoff => chart.invariant(scenario.kink_spot(), horizon).stage("reduced-ode")?,
        };
        let terminals: Vec<Terminal> = if rode.order() == 1 {
            vec![Terminal { u: u_t, value: 1.0, slope: None }]
        } else {
            vec![
                Terminal { u: u_t, value: 1.0, slope: Some(0.0) },
                Terminal { u: u_t, value: 0.0, slope: Some(1.0) },
            ]
        };
        let (basis, certificate) = match backend {
            PriceBackend::Numeric => {
                let basis = terminals
                    .iter()
                    .map(|&term| solve_reduced_ode(&rode, term, range).map(BasisFunction::Numeric))
                    .collect::<Result<Vec<_>>>()
                    .stage("reduced-ode")?;
                (basis, None)
            }
            PriceBackend::ExperimentalClosedForm => {
                let sol = closed_form_p(branch, &rode, terminals[0], range).stage("closed-form")?;
                let cert = sol.certificate;
                (sol.basis.into_iter().map(BasisFunction::ClosedForm).collect(), Some(cert))
            }
        };
        let kink = scenario.kink_spot();
        let n = opts.fit_points.max(basis.len());
        let grid: Vec<f64> = (0..n)
            .map(|k| kink * (0.5 + 1.5 * k as f64 / (n - 1).max(1) as f64))
            .collect();
        let fit = fit_constants(branch, &chart, &basis, &grid).stage("fit")?;
        Ok(PricingPipeline {
            branch,
            backend,
            chart,
            rode,
            basis,
            fit,
            range,
            certificate,
        })
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn backend(&self) -> PriceBackend {
        self.backend
    }

    pub fn chart(&self) -> &InvariantChart {
        &self.chart
    }

    pub fn reduced_ode(&self) -> &ReducedOde {
        &self.rode
    }

    pub fn fit(&self) -> &FitResult {
        &self.fit
    }

    pub fn u_range(&self) -> (f64, f64) {
        self.range
    }

    /// Certificate of the closed form when that backend is in use.
    pub fn certificate(&self) -> Option<f64> {
        self.certificate
    }

    /// `V(S, t) = E·Σ C_k P_k(u)`.
    pub fn value(&self, spot: f64, t: f64) -> Result<f64> {
        let coeffs = self.fit.coefficients();
        let p = self.chart.point(spot, t).stage("assembly")?;
        if coeffs.iter().all(|&c| c == 0.0) {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for (c, b) in coeffs.iter().zip(&self.basis) {
            sum += c * b.eval(p.u).stage("assembly")?;
        }
        let v = p.prefactor() * sum;
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite price at S={spot}, t={t}"))).stage("assembly");
        }
        Ok(v)
    }

    /// Price with a PDE residual spot-check. The stencil is centered at the
    /// nearest time that keeps it inside `[0, T]`.
    pub fn price(&self, spot: f64, t: f64) -> Result<PricePoint> {
        let value = self.value(spot, t)?;
        let sc = self.chart.scenario();
        let horizon = sc.maturity();
        let ht = 1e-3 * horizon;
        let tc = t.clamp(ht, horizon - ht);
        let u = sc.underlying(spot);
        let beta = sc.beta();
        let residual = pde_residual(
            sc,
            |uu, tt| self.value(uu.powf(1.0 / beta), tt).unwrap_or(f64::NAN),
            u,
            tc,
            1e-3 * u,
            ht,
        )
        .stage("assembly")?;
        Ok(PricePoint {
            spot,
            t,
            value,
            pde_residual: residual,
            residual_t: tc,
        })
    }
}

/// Builds a pipeline with default options covering `spot` and prices.
pub fn price(branch: Branch, scenario: &MarketScenario, spot: f64, t: f64, backend: PriceBackend) -> Result<PricePoint> {
    let opts = PipelineOptions {
        spots: vec![spot],
        ..PipelineOptions::default()
    };
    PricingPipeline::build(branch, scenario, backend, &opts)?.price(spot, t)
}
