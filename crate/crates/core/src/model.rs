//! The pricing problem: scenario data, the power payoff, the coefficient
//! map onto `V_t + X U² V_UU + Y U V_U − Z V = 0`, and a pointwise residual
//! of that operator.
//!
//! The operator's spatial variable is the power underlying `U = S^β`: the
//! drift and diffusion of `X`, `Y` are those of `S^β`, not of the spot. For
//! `β = 1` the two coincide. Everything that talks about the spot (payoff,
//! oracles, the CLI) converts with [`MarketScenario::underlying`].

use crate::coefficients::{CoefficientCurve, CurveRole, Side, Transform};
use crate::error::{Error, Result};

/// Call (`Ψ = +1`) or put (`Ψ = −1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Psi {
    Call,
    Put,
}

impl Psi {
    pub fn sign(self) -> f64 {
        match self {
            Psi::Call => 1.0,
            Psi::Put => -1.0,
        }
    }

    pub fn from_sign(sign: i32) -> Option<Self> {
        match sign {
            1 => Some(Psi::Call),
            -1 => Some(Psi::Put),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketScenario {
    beta: f64,
    strike: f64,
    psi: Psi,
    maturity: f64,
    sigma: CoefficientCurve,
    r: CoefficientCurve,
    y: CoefficientCurve,
    mu: Option<CoefficientCurve>,
}

/// X, Y, Z at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Xyz {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// X, Y, Z with the time derivatives the determining equations need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientJet {
    pub x: f64,
    pub dx: f64,
    pub ddx: f64,
    pub y: f64,
    pub dy: f64,
    pub ddy: f64,
    pub z: f64,
    pub dz: f64,
}

/// Market curves with their first two derivatives at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveJet {
    pub sigma: [f64; 3],
    pub r: [f64; 3],
    pub y: [f64; 3],
}

impl MarketScenario {
    /// Builds a scenario; volatility must stay strictly positive.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        beta: f64,
        strike: f64,
        psi: Psi,
        maturity: f64,
        sigma: CoefficientCurve,
        r: CoefficientCurve,
        y: CoefficientCurve,
        mu: Option<CoefficientCurve>,
    ) -> Result<Self> {
        sigma.validate_role(CurveRole::Volatility)?;
        Self::with_degenerate_volatility(beta, strike, psi, maturity, sigma, r, y, mu)
    }

    /// Like [`MarketScenario::new`] but accepts `σ ≥ 0`. Only the Monte Carlo
    /// oracles understand a vanishing volatility; everything else rejects it.
    #[allow(clippy::too_many_arguments)]
    pub fn with_degenerate_volatility(
        beta: f64,
        strike: f64,
        psi: Psi,
        maturity: f64,
        sigma: CoefficientCurve,
        r: CoefficientCurve,
        y: CoefficientCurve,
        mu: Option<CoefficientCurve>,
    ) -> Result<Self> {
        if !beta.is_finite() || beta == 0.0 {
            return Err(Error::invalid(format!("beta must be finite and nonzero, got {beta}")));
        }
        if !(strike > 0.0) || !strike.is_finite() {
            return Err(Error::invalid(format!("strike must be positive, got {strike}")));
        }
        if !(maturity > 0.0) || !maturity.is_finite() {
            return Err(Error::invalid(format!("maturity must be positive, got {maturity}")));
        }
        if sigma.min_value() < 0.0 {
            return Err(Error::invalid("volatility must be nonnegative"));
        }
        let named = [("sigma", Some(&sigma)), ("r", Some(&r)), ("y", Some(&y)), ("mu", mu.as_ref())];
        for (name, curve) in named {
            if let Some(c) = curve {
                if c.horizon() != maturity {
                    return Err(Error::invalid(format!(
                        "curve {name} has horizon {} but maturity is {maturity}",
                        c.horizon()
                    )));
                }
            }
        }
        Ok(MarketScenario {
            beta,
            strike,
            psi,
            maturity,
            sigma,
            r,
            y,
            mu,
        })
    }

    /// Constant-coefficient scenario without a separate physical drift.
    pub fn constant(beta: f64, strike: f64, psi: Psi, maturity: f64, sigma: f64, r: f64, y: f64) -> Result<Self> {
        MarketScenario::new(
            beta,
            strike,
            psi,
            maturity,
            CoefficientCurve::constant(sigma, maturity)?,
            CoefficientCurve::constant(r, maturity)?,
            CoefficientCurve::constant(y, maturity)?,
            None,
        )
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn strike(&self) -> f64 {
        self.strike
    }
    pub fn psi(&self) -> Psi {
        self.psi
    }
    pub fn maturity(&self) -> f64 {
        self.maturity
    }
    pub fn sigma(&self) -> &CoefficientCurve {
        &self.sigma
    }
    pub fn rate(&self) -> &CoefficientCurve {
        &self.r
    }
    pub fn dividend_yield(&self) -> &CoefficientCurve {
        &self.y
    }
    /// Physical drift; defaults to the interest rate.
    pub fn mu(&self) -> &CoefficientCurve {
        self.mu.as_ref().unwrap_or(&self.r)
    }
    pub fn has_mu(&self) -> bool {
        self.mu.is_some()
    }

    pub fn with_psi(&self, psi: Psi) -> Self {
        MarketScenario { psi, ..self.clone() }
    }

    /// True when σ, r and y are all constant in time.
    pub fn is_constant(&self) -> bool {
        self.sigma.is_constant() && self.r.is_constant() && self.y.is_constant()
    }

    /// Power underlying `U = S^β`, the PDE's spatial variable.
    pub fn underlying(&self, spot: f64) -> f64 {
        spot.powf(self.beta)
    }

    pub fn spot_from_underlying(&self, u: f64) -> f64 {
        u.powf(1.0 / self.beta)
    }

    /// Spot at which the payoff kinks, `K^{1/β}`.
    pub fn kink_spot(&self) -> f64 {
        self.strike.powf(1.0 / self.beta)
    }

    pub fn require_positive_volatility(&self) -> Result<()> {
        self.sigma.validate_role(CurveRole::Volatility)
    }

    /// Sorted interior breakpoints of σ, r and y.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut cuts: Vec<f64> = [&self.sigma, &self.r, &self.y]
            .iter()
            .flat_map(|c| c.breakpoints())
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts
    }

    /// `exp(−∫ₐᵇ r ds)`.
    pub fn discount(&self, a: f64, b: f64) -> Result<f64> {
        Ok((-self.r.integral(Transform::Identity, a, b)?).exp())
    }

    /// Curve values and derivatives. With `side = None` derivatives at
    /// breakpoints are rejected; with a side they are taken one-sidedly.
    pub fn curve_jet(&self, t: f64, side: Option<Side>) -> Result<CurveJet> {
        let d = |c: &CoefficientCurve, order: u8| match side {
            None => c.derivative(t, order),
            Some(s) => c.derivative_one_sided(t, order, s),
        };
        let jet = |c: &CoefficientCurve| -> Result<[f64; 3]> { Ok([c.eval(t)?, d(c, 1)?, d(c, 2)?]) };
        Ok(CurveJet {
            sigma: jet(&self.sigma)?,
            r: jet(&self.r)?,
            y: jet(&self.y)?,
        })
    }

    /// X, Y, Z and their derivatives at `t`.
    pub fn coefficient_jet(&self, t: f64, side: Option<Side>) -> Result<CoefficientJet> {
        let cj = self.curve_jet(t, side)?;
        let b = self.beta;
        let [s, ds, dds] = cj.sigma;
        let [r, dr, ddr] = cj.r;
        let [q, dq, ddq] = cj.y;
        Ok(CoefficientJet {
            x: 0.5 * s * s * b * b,
            dx: b * b * s * ds,
            ddx: b * b * (ds * ds + s * dds),
            y: (r - q) * b + 0.5 * b * (b - 1.0) * s * s,
            dy: (dr - dq) * b + b * (b - 1.0) * s * ds,
            ddy: (ddr - ddq) * b + b * (b - 1.0) * (ds * ds + s * dds),
            z: r,
            dz: dr,
        })
    }
}

/// `max{Ψ(S^β − K), 0}` at spot `S`.
pub fn payoff(scenario: &MarketScenario, spot: f64) -> Result<f64> {
    if !(spot > 0.0) {
        return Err(Error::domain(format!("spot must be positive, got {spot}")));
    }
    Ok(payoff_underlying(scenario, scenario.underlying(spot)))
}

/// Payoff as a function of the power underlying `U`.
pub fn payoff_underlying(scenario: &MarketScenario, u: f64) -> f64 {
    (scenario.psi.sign() * (u - scenario.strike)).max(0.0)
}

/// `X = ½σ²β²`, `Y = (r − y)β + ½β(β − 1)σ²`, `Z = r` at `t`.
pub fn xyz_coefficients(scenario: &MarketScenario, t: f64) -> Result<Xyz> {
    let b = scenario.beta;
    let s = scenario.sigma.eval(t)?;
    let r = scenario.r.eval(t)?;
    let q = scenario.y.eval(t)?;
    Ok(Xyz {
        x: 0.5 * s * s * b * b,
        y: (r - q) * b + 0.5 * b * (b - 1.0) * s * s,
        z: r,
    })
}

/// Central-difference residual of `V_t + X U² V_UU + Y U V_U − Z V` at `(u, t)`.
pub fn pde_residual<F>(scenario: &MarketScenario, v: F, u: f64, t: f64, hu: f64, ht: f64) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    if !(hu > 0.0) || !(ht > 0.0) {
        return Err(Error::invalid("residual steps must be positive"));
    }
    if !(u - hu > 0.0) {
        return Err(Error::domain(format!("stencil leaves U > 0 at U={u}, h={hu}")));
    }
    if !(t - ht >= 0.0) || !(t + ht <= scenario.maturity) {
        return Err(Error::domain(format!(
            "stencil leaves [0, {}] at t={t}, h={ht}",
            scenario.maturity
        )));
    }
    let c = xyz_coefficients(scenario, t)?;
    let v0 = v(u, t);
    let vp = v(u + hu, t);
    let vm = v(u - hu, t);
    let v_t = (v(u, t + ht) - v(u, t - ht)) / (2.0 * ht);
    let v_u = (vp - vm) / (2.0 * hu);
    let v_uu = (vp - 2.0 * v0 + vm) / (hu * hu);
    let res = v_t + c.x * u * u * v_uu + c.y * u * v_u - c.z * v0;
    if !res.is_finite() {
        return Err(Error::Numerical(format!("non-finite residual at U={u}, t={t}")));
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scen(beta: f64, psi: Psi, y: f64) -> MarketScenario {
        MarketScenario::constant(beta, 50.0, psi, 1.0, 0.2, 0.05, y).unwrap()
    }

    #[test]
    fn payoff_examples() {
        assert_eq!(payoff(&scen(2.0, Psi::Call, 0.0), 10.0).unwrap(), 50.0);
        assert_eq!(payoff(&scen(2.0, Psi::Call, 0.0), 5.0).unwrap(), 0.0);
        assert_eq!(payoff(&scen(2.0, Psi::Put, 0.0), 5.0).unwrap(), 25.0);
        assert!(payoff(&scen(2.0, Psi::Call, 0.0), 0.0).is_err());
    }

    #[test]
    fn payoff_kink_location() {
        let s = scen(2.0, Psi::Call, 0.0);
        let k = s.kink_spot();
        assert!((k - 50f64.sqrt()).abs() < 1e-14);
        assert!(payoff(&s, k * (1.0 - 1e-9)).unwrap() == 0.0);
        assert!(payoff(&s, k * (1.0 + 1e-6)).unwrap() > 0.0);
    }

    #[test]
    fn xyz_examples() {
        let c = xyz_coefficients(&scen(2.0, Psi::Call, 0.0), 0.3).unwrap();
        assert!((c.x - 0.08).abs() < 1e-15 && (c.y - 0.14).abs() < 1e-15 && c.z == 0.05);
        let c = xyz_coefficients(&scen(2.0, Psi::Call, 0.02), 0.3).unwrap();
        assert!((c.x - 0.08).abs() < 1e-15 && (c.y - 0.10).abs() < 1e-15 && c.z == 0.05);
        let c = xyz_coefficients(&scen(1.0, Psi::Call, 0.0), 0.3).unwrap();
        assert!((c.x - 0.02).abs() < 1e-15 && (c.y - 0.05).abs() < 1e-15 && c.z == 0.05);
    }

    #[test]
    fn vanilla_consistency() {
        let s = MarketScenario::new(
            1.0,
            100.0,
            Psi::Call,
            1.0,
            CoefficientCurve::exponential(0.2, 0.3, 1.0).unwrap(),
            CoefficientCurve::constant(0.05, 1.0).unwrap(),
            CoefficientCurve::piecewise_linear(vec![0.0, 1.0], vec![0.01, 0.03], 1.0).unwrap(),
            None,
        )
        .unwrap();
        for t in [0.0, 0.3, 0.9] {
            let c = xyz_coefficients(&s, t).unwrap();
            let q = s.dividend_yield().eval(t).unwrap();
            assert!((c.y - c.z + q).abs() <= 4.0 * f64::EPSILON * c.z.abs());
        }
    }

    #[test]
    fn residual_of_zero_and_bond() {
        let s = scen(2.0, Psi::Call, 0.02);
        assert_eq!(pde_residual(&s, |_, _| 0.0, 40.0, 0.5, 1e-4, 1e-4).unwrap(), 0.0);
        let bond = |_: f64, t: f64| (-0.05 * (1.0 - t)).exp();
        let r = pde_residual(&s, bond, 40.0, 0.5, 1e-4, 1e-4).unwrap();
        assert!(r.abs() < 1e-8, "{r}");
    }

    #[test]
    fn residual_of_dividend_forward() {
        let s = scen(1.0, Psi::Call, 0.03);
        let fwd = |u: f64, t: f64| u * (-0.03 * (1.0 - t)).exp();
        let r = pde_residual(&s, fwd, 100.0, 0.4, 1e-4, 1e-4).unwrap();
        assert!(r.abs() < 1e-7, "{r}");
    }

    #[test]
    fn residual_converges_second_order() {
        // time-varying rate so the time stencil has something to resolve
        let s = MarketScenario::new(
            1.0,
            100.0,
            Psi::Call,
            1.0,
            CoefficientCurve::constant(0.2, 1.0).unwrap(),
            CoefficientCurve::exponential(0.05, 2.0, 1.0).unwrap(),
            CoefficientCurve::exponential(0.02, 1.5, 1.0).unwrap(),
            None,
        )
        .unwrap();
        let disc = |a: f64, b: f64| s.discount(a, b).unwrap();
        let yield_disc = |a: f64, b: f64| {
            (-s.dividend_yield().integral(Transform::Identity, a, b).unwrap()).exp()
        };
        let bond = |_: f64, t: f64| disc(t, 1.0);
        let fwd = |u: f64, t: f64| u * yield_disc(t, 1.0);
        for v in [&bond as &dyn Fn(f64, f64) -> f64, &fwd] {
            let coarse = pde_residual(&s, v, 100.0, 0.5, 2.0, 0.02).unwrap().abs();
            let fine = pde_residual(&s, v, 100.0, 0.5, 1.0, 0.01).unwrap().abs();
            let ratio = coarse / fine;
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn residual_stencil_domain() {
        let s = scen(1.0, Psi::Call, 0.0);
        assert!(matches!(pde_residual(&s, |_, _| 1.0, 1.0, 0.0, 1e-3, 1e-3), Err(Error::Domain(_))));
        assert!(matches!(pde_residual(&s, |_, _| 1.0, 1e-4, 0.5, 1e-3, 1e-3), Err(Error::Domain(_))));
    }

    #[test]
    fn scenario_validation() {
        assert!(MarketScenario::constant(0.0, 50.0, Psi::Call, 1.0, 0.2, 0.05, 0.0).is_err());
        assert!(MarketScenario::constant(1.0, -1.0, Psi::Call, 1.0, 0.2, 0.05, 0.0).is_err());
        assert!(MarketScenario::constant(1.0, 50.0, Psi::Call, 1.0, 0.0, 0.05, 0.0).is_err());
        let zero = CoefficientCurve::constant(0.0, 1.0).unwrap();
        let r = CoefficientCurve::constant(0.05, 1.0).unwrap();
        let s = MarketScenario::with_degenerate_volatility(1.0, 50.0, Psi::Call, 1.0, zero, r.clone(), r.clone(), None)
            .unwrap();
        assert!(s.require_positive_volatility().is_err());
        assert_eq!(s.mu(), s.rate());
    }
}
