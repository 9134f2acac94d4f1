//! Shared fixtures for the criterion benchmarks under `benches/`.

use powersym::coefficients::CoefficientCurve;
use powersym::model::{MarketScenario, Psi};

/// Constant-coefficient call: σ = 0.2, r = 0.05, y = 0, K = 100, T = 1.
pub fn vanilla(beta: f64) -> MarketScenario {
    MarketScenario::constant(beta, 100.0, Psi::Call, 1.0, 0.2, 0.05, 0.0).expect("valid scenario")
}

/// Exponentially drifting σ, r and y.
pub fn smooth(beta: f64) -> MarketScenario {
    let exp = |base, rate| CoefficientCurve::exponential(base, rate, 1.0).expect("valid curve");
    MarketScenario::new(beta, 100.0, Psi::Call, 1.0, exp(0.2, 0.1), exp(0.08, -0.2), exp(0.005, 0.3), None)
        .expect("valid scenario")
}
