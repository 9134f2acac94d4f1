//! Independent reference pricers: Crank–Nicolson finite differences on the
//! pricing PDE, a constant-coefficient Black–Scholes formula, a reproducible
//! risk-neutral Monte Carlo pricer, and a pricing-kernel martingale check.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use libm::erfc;

use crate::coefficients::Transform;
use crate::error::{Error, Result};
use crate::model::{payoff_underlying, MarketScenario, Psi};
use crate::numerics::solve_tridiagonal;

/// Implicit-Euler half steps taken from the payoff before switching to CN.
const RANNACHER_HALF_STEPS: usize = 4;
const MC_CHUNK: usize = 4096;

/// A finite-difference solution on a log-spaced spot grid.
///
/// `values[j][i]` is the price at `t_grid[j]`, `s_grid[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSurface {
    pub s_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub ns: usize,
    pub nt: usize,
    pub domain_mult: f64,
}

impl PriceSurface {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn terminal_row(&self) -> &[f64] {
        self.values.last().expect("surface has a terminal row")
    }

    /// Price at `(spot, t)`: four-point Lagrange in `log S`, linear in `t`.
    pub fn value_at(&self, spot: f64, t: f64) -> Result<f64> {
        let z = spot.ln();
        let (z0, z1) = (self.s_grid[0].ln(), self.s_grid[self.ns].ln());
        if !(z >= z0 && z <= z1) {
            return Err(Error::domain(format!(
                "spot {spot} outside the grid [{}, {}]",
                self.s_grid[0], self.s_grid[self.ns]
            )));
        }
        let tt = *self.t_grid.last().expect("non-empty");
        if !(t >= 0.0 && t <= tt) {
            return Err(Error::domain(format!("t={t} outside [0, {tt}]")));
        }
        let dt = tt / self.nt as f64;
        let j = ((t / dt).floor() as usize).min(self.nt - 1);
        let w = (t - self.t_grid[j]) / dt;
        let a = self.interp_row(j, z);
        if w == 0.0 {
            return Ok(a);
        }
        Ok((1.0 - w) * a + w * self.interp_row(j + 1, z))
    }

    fn interp_row(&self, j: usize, z: f64) -> f64 {
        let z0 = self.s_grid[0].ln();
        let dz = (self.s_grid[self.ns].ln() - z0) / self.ns as f64;
        let pos = (z - z0) / dz;
        let i = (pos.floor() as isize).clamp(1, self.ns as isize - 2) as usize;
        let row = &self.values[j];
        let xs = [i - 1, i, i + 1, i + 2];
        let mut acc = 0.0;
        for (a, &ia) in xs.iter().enumerate() {
            let mut l = 1.0;
            for (b, &ib) in xs.iter().enumerate() {
                if a != b {
                    l *= (pos - ib as f64) / (ia as f64 - ib as f64);
                }
            }
            acc += l * row[ia];
        }
        acc
    }
}

/// Far-field solution `A(t)·S^β − B(t)·K` of the pricing PDE.
fn far_field(scenario: &MarketScenario, t: f64) -> Result<(f64, f64)> {
    let b = scenario.beta();
    let tt = scenario.maturity();
    let ir = scenario.rate().integral(Transform::Identity, t, tt)?;
    let iy = scenario.dividend_yield().integral(Transform::Identity, t, tt)?;
    let is2 = scenario.sigma().integral(Transform::Square, t, tt)?;
    let a = (-(b * iy - 0.5 * b * (b - 1.0) * is2 - (b - 1.0) * ir)).exp();
    Ok((a, (-ir).exp()))
}

fn boundary_values(scenario: &MarketScenario, t: f64, s_lo: f64, s_hi: f64) -> Result<(f64, f64)> {
    let (a, disc) = far_field(scenario, t)?;
    let k = scenario.strike();
    let forward = |s: f64| a * scenario.underlying(s) - disc * k;
    Ok(match scenario.psi() {
        Psi::Call => (0.0, forward(s_hi)),
        Psi::Put => (-forward(s_lo), 0.0),
    })
}

/// Mean of the payoff over `[a, b]` in `z = log S`, split at the kink.
fn payoff_cell_average(scenario: &MarketScenario, a: f64, b: f64) -> f64 {
    let beta = scenario.beta();
    let k = scenario.strike();
    let sign = scenario.psi().sign();
    let zk = k.ln() / beta;
    let piece = |lo: f64, hi: f64| -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let mid = 0.5 * (lo + hi);
        if sign * ((beta * mid).exp() - k) <= 0.0 {
            return 0.0;
        }
        sign * (((beta * hi).exp() - (beta * lo).exp()) / beta - k * (hi - lo))
    };
    let total = if zk > a && zk < b { piece(a, zk) + piece(zk, b) } else { piece(a, b) };
    total / (b - a)
}

/// Crank–Nicolson solution of the pricing PDE in `z = log S`.
///
/// The grid spans `K^{1/β}/m .. K^{1/β}·m` with `ns` cells and `nt` uniform
/// time steps. Stepping starts from cell-averaged payoff values and the
/// first two steps are split into implicit Euler half steps. Each step uses the exact step averages of the curves,
/// so coefficient jumps between grid times cost nothing.
pub fn fd_price(scenario: &MarketScenario, ns: usize, nt: usize, domain_mult: f64) -> Result<PriceSurface> {
    if ns < 16 || nt < 16 {
        return Err(Error::invalid(format!("fd grid needs ns, nt >= 16, got {ns}x{nt}")));
    }
    if !(domain_mult >= 4.0) || !domain_mult.is_finite() {
        return Err(Error::invalid(format!("domain multiplier must be >= 4, got {domain_mult}")));
    }
    scenario.require_positive_volatility()?;
    let tt = scenario.maturity();
    let zc = scenario.kink_spot().ln();
    let half = domain_mult.ln();
    let dz = 2.0 * half / ns as f64;
    let s_grid: Vec<f64> = (0..=ns).map(|i| (zc - half + i as f64 * dz).exp()).collect();
    let t_grid: Vec<f64> = (0..=nt).map(|j| tt * j as f64 / nt as f64).collect();
    let dt = tt / nt as f64;

    let mut values = vec![Vec::new(); nt + 1];
    let mut v: Vec<f64> = s_grid
        .iter()
        .map(|&s| payoff_underlying(scenario, scenario.underlying(s)))
        .collect();
    values[nt] = v.clone();
    // time stepping starts from cell averages of the payoff (kink smoothing)
    for (i, vi) in v.iter_mut().enumerate().take(ns).skip(1) {
        let z = zc - half + i as f64 * dz;
        *vi = payoff_cell_average(scenario, z - 0.5 * dz, z + 0.5 * dz);
    }

    let m = ns - 1;
    let (s_lo, s_hi) = (s_grid[0], s_grid[ns]);
    for j in (0..nt).rev() {
        let t0 = t_grid[j];
        let substeps: &[(f64, f64)] = if nt - j <= RANNACHER_HALF_STEPS / 2 {
            &[(0.5, 1.0), (0.0, 0.5)]
        } else {
            &[(0.0, 1.0)]
        };
        let implicit_only = substeps.len() == 2;
        for &(f0, f1) in substeps {
            let (a0, a1) = (t0 + f0 * dt, t0 + f1 * dt);
            let h = a1 - a0;
            let var = 0.5 * scenario.sigma().integral(Transform::Square, a0, a1)? / h;
            let rr = scenario.rate().integral(Transform::Identity, a0, a1)? / h;
            let yy = scenario.dividend_yield().integral(Transform::Identity, a0, a1)? / h;
            let drift = rr - yy - var;
            // operator A v_i = lo·v_{i-1} + di·v_i + up·v_{i+1}
            let lo = var / (dz * dz) - drift / (2.0 * dz);
            let di = -2.0 * var / (dz * dz) - rr;
            let up = var / (dz * dz) + drift / (2.0 * dz);
            let w = if implicit_only { 1.0 } else { 0.5 };
            let (b_lo_new, b_hi_new) = boundary_values(scenario, a0, s_lo, s_hi)?;

            let mut rhs = vec![0.0; m];
            for (k, r) in rhs.iter_mut().enumerate() {
                let i = k + 1;
                let av = lo * v[i - 1] + di * v[i] + up * v[i + 1];
                *r = v[i] + (1.0 - w) * h * av;
            }
            rhs[0] += w * h * lo * b_lo_new;
            rhs[m - 1] += w * h * up * b_hi_new;
            let lower = vec![-w * h * lo; m - 1];
            let diag = vec![1.0 - w * h * di; m];
            let upper = vec![-w * h * up; m - 1];
            let inner = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
            v[0] = b_lo_new;
            v[ns] = b_hi_new;
            v[1..ns].copy_from_slice(&inner);
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite FD value at t={t0}")));
        }
        values[j] = v.clone();
    }
    Ok(PriceSurface {
        s_grid,
        t_grid,
        values,
        ns,
        nt,
        domain_mult,
    })
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Black–Scholes call with continuous yield `y`.
pub fn bs_reference(spot: f64, strike: f64, r: f64, sigma: f64, maturity: f64, y: f64) -> f64 {
    let fwd_disc = spot * (-y * maturity).exp();
    let k_disc = strike * (-r * maturity).exp();
    let vol = sigma * maturity.sqrt();
    if !(vol > 0.0) {
        return (fwd_disc - k_disc).max(0.0);
    }
    let d1 = ((spot / strike).ln() + (r - y + 0.5 * sigma * sigma) * maturity) / vol;
    let d2 = d1 - vol;
    fwd_disc * norm_cdf(d1) - k_disc * norm_cdf(d2)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
    pub seed: u64,
}

/// Per-step exact integrals over a uniform time grid.
struct StepIntegrals {
    drift: Vec<f64>,
    var: Vec<f64>,
    rate: Vec<f64>,
}

fn step_integrals(scenario: &MarketScenario, steps: usize, drift_curve_is_mu: bool) -> Result<StepIntegrals> {
    let tt = scenario.maturity();
    let mut out = StepIntegrals {
        drift: Vec::with_capacity(steps),
        var: Vec::with_capacity(steps),
        rate: Vec::with_capacity(steps),
    };
    let drift_curve = if drift_curve_is_mu { scenario.mu() } else { scenario.rate() };
    for k in 0..steps {
        let (a, b) = (tt * k as f64 / steps as f64, tt * (k + 1) as f64 / steps as f64);
        let var = scenario.sigma().integral(Transform::Square, a, b)?;
        let m = drift_curve.integral(Transform::Identity, a, b)?;
        let q = scenario.dividend_yield().integral(Transform::Identity, a, b)?;
        out.drift.push(m - q - 0.5 * var);
        out.var.push(var);
        out.rate.push(scenario.rate().integral(Transform::Identity, a, b)?);
    }
    Ok(out)
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Mean and standard error, computed on values shifted by the first sample
/// so that identical samples give exactly zero spread.
fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let x0 = xs[0];
    let (mut s1, mut s2) = (0.0, 0.0);
    for &x in xs {
        let d = x - x0;
        s1 += d;
        s2 += d * d;
    }
    let nf = n as f64;
    let mean = x0 + s1 / nf;
    let var = if n > 1 { ((s2 - s1 * s1 / nf) / (nf - 1.0)).max(0.0) } else { 0.0 };
    (mean, (var / nf).sqrt())
}

/// Evaluates `f(path)` for every path in parallel, preserving path order.
fn per_path<T, F>(paths: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let chunks: Vec<Vec<T>> = (0..paths.div_ceil(MC_CHUNK))
        .into_par_iter()
        .map(|c| (c * MC_CHUNK..((c + 1) * MC_CHUNK).min(paths)).map(&f).collect())
        .collect();
    chunks.into_iter().flatten().collect()
}

/// Risk-neutral Monte Carlo price at `t = 0` with exact per-step lognormal
/// updates. Path `i` draws from its own ChaCha stream, so the estimate does
/// not depend on how paths are scheduled across threads.
pub fn mc_price(scenario: &MarketScenario, s0: f64, paths: usize, steps: usize, seed: u64) -> Result<McEstimate> {
    if paths < 1000 {
        return Err(Error::invalid(format!("mc needs at least 1000 paths, got {paths}")));
    }
    if steps < 1 {
        return Err(Error::invalid("mc needs at least one time step"));
    }
    if !(s0 > 0.0) {
        return Err(Error::domain(format!("spot must be positive, got {s0}")));
    }
    let si = step_integrals(scenario, steps, false)?;
    let disc = (-si.rate.iter().sum::<f64>()).exp();
    let vols: Vec<f64> = si.var.iter().map(|v| v.sqrt()).collect();
    let z0 = s0.ln();
    let samples = per_path(paths, |p| {
        let mut rng = path_rng(seed, p);
        let mut z = z0;
        for k in 0..steps {
            let n: f64 = StandardNormal.sample(&mut rng);
            z += si.drift[k] + vols[k] * n;
        }
        disc * payoff_underlying(scenario, scenario.underlying(z.exp()))
    });
    let (mean, stderr) = mean_stderr(&samples);
    Ok(McEstimate {
        mean,
        stderr,
        paths,
        seed,
    })
}

/// Physical-measure pricing-kernel estimate against the risk-neutral one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleReport {
    pub kernel_estimate: f64,
    pub risk_neutral_estimate: f64,
    /// Standard error of the pathwise difference of the two estimators.
    pub joint_stderr: f64,
    pub paths: usize,
    pub seed: u64,
    pub pass: bool,
}

impl MartingaleReport {
    pub fn difference(&self) -> f64 {
        self.kernel_estimate - self.risk_neutral_estimate
    }
}

/// Simulates `(S, ψ)` under the physical measure and compares `E[ψ_T·payoff]`
/// with the discounted risk-neutral expectation on the same draws.
///
/// Per step, `∫σ dW` and `∫λ dW` with `λ = (μ − r)/σ` are drawn as a
/// correlated Gaussian pair with exact step moments.
pub fn martingale_diagnostic(
    scenario: &MarketScenario,
    s0: f64,
    paths: usize,
    steps: usize,
    seed: u64,
) -> Result<MartingaleReport> {
    if paths < 1000 || steps < 1 {
        return Err(Error::invalid("martingale diagnostic needs >= 1000 paths and >= 1 step"));
    }
    if !(s0 > 0.0) {
        return Err(Error::domain(format!("spot must be positive, got {s0}")));
    }
    let tt = scenario.maturity();
    let phys = step_integrals(scenario, steps, true)?;
    let rn = step_integrals(scenario, steps, false)?;
    let mut lam_var = Vec::with_capacity(steps);
    let mut cov = Vec::with_capacity(steps);
    for k in 0..steps {
        let (a, b) = (tt * k as f64 / steps as f64, tt * (k + 1) as f64 / steps as f64);
        let excess = scenario.mu().integral(Transform::Identity, a, b)? - phys.rate[k];
        let lv = if excess == 0.0 && scenario.mu() == scenario.rate() {
            0.0
        } else {
            lambda_square_integral(scenario, a, b)?
        };
        lam_var.push(lv);
        cov.push(excess);
    }
    let log_disc: f64 = -rn.rate.iter().sum::<f64>();
    let disc = log_disc.exp();
    let z0 = s0.ln();

    let deterministic_kernel = lam_var.iter().all(|&v| v == 0.0);
    let pairs: Vec<(f64, f64)> = per_path(paths, |p| {
        let mut rng = path_rng(seed, p);
        let (mut zp, mut zq, mut log_psi) = (z0, z0, 0.0);
        for k in 0..steps {
            let n1: f64 = StandardNormal.sample(&mut rng);
            let n2: f64 = StandardNormal.sample(&mut rng);
            let vs = phys.var[k];
            let sw = vs.sqrt() * n1;
            let lw = if lam_var[k] == 0.0 {
                0.0
            } else {
                let slope = cov[k] / vs;
                slope * sw + (lam_var[k] - slope * cov[k]).max(0.0).sqrt() * n2
            };
            zp += phys.drift[k] + sw;
            zq += rn.drift[k] + sw;
            log_psi += -phys.rate[k] - 0.5 * lam_var[k] - lw;
        }
        let kernel = if deterministic_kernel { disc } else { log_psi.exp() };
        (
            kernel * payoff_underlying(scenario, scenario.underlying(zp.exp())),
            disc * payoff_underlying(scenario, scenario.underlying(zq.exp())),
        )
    });
    let kernel_samples: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rn_samples: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diffs: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let (kernel_estimate, _) = mean_stderr(&kernel_samples);
    let (risk_neutral_estimate, _) = mean_stderr(&rn_samples);
    let (diff_mean, joint_stderr) = mean_stderr(&diffs);
    Ok(MartingaleReport {
        kernel_estimate,
        risk_neutral_estimate,
        joint_stderr,
        paths,
        seed,
        pass: diff_mean.abs() <= 3.0 * joint_stderr,
    })
}

/// `∫ₐᵇ ((μ − r)/σ)² ds`, rejecting a vanishing σ.
fn lambda_square_integral(scenario: &MarketScenario, a: f64, b: f64) -> Result<f64> {
    let f = |s: f64| -> Result<f64> {
        let sig = scenario.sigma().eval(s)?;
        let ex = scenario.mu().eval(s)? - scenario.rate().eval(s)?;
        if ex != 0.0 && sig.abs() < 1e-8 {
            return Err(Error::MarketPriceOfRisk { at: s });
        }
        Ok(if ex == 0.0 { 0.0 } else { (ex / sig).powi(2) })
    };
    // probe the step for a vanishing σ before integrating
    for i in 0..=8 {
        f(a + (b - a) * i as f64 / 8.0)?;
    }
    let mut cuts: Vec<f64> = [scenario.sigma(), scenario.mu(), scenario.rate()]
        .iter()
        .flat_map(|c| c.breakpoints())
        .filter(|&t| t > a && t < b)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let g = |s: f64| f(s).unwrap_or(f64::NAN);
    let val = crate::numerics::integrate_piecewise(g, a, b, &cuts, 1e-12)?;
    if !val.is_finite() {
        return Err(Error::MarketPriceOfRisk { at: a });
    }
    Ok(val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientCurve;

    fn vanilla(beta: f64, psi: Psi) -> MarketScenario {
        MarketScenario::constant(beta, 100.0, psi, 1.0, 0.2, 0.05, 0.0).unwrap()
    }

    #[test]
    fn bs_examples() {
        let v = bs_reference(100.0, 100.0, 0.05, 0.2, 1.0, 0.0);
        assert!((v - 10.450_583_572_185_565).abs() < 1e-9, "{v}");
        assert!(bs_reference(90.0, 100.0, 0.05, 1e-12, 1.0, 0.0) < 1e-12);
        assert!((bs_reference(110.0, 100.0, 0.05, 0.2, 1e-12, 0.0) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn fd_terminal_row_is_payoff() {
        for psi in [Psi::Call, Psi::Put] {
            let sc = vanilla(2.0, psi);
            let surf = fd_price(&sc, 64, 32, 4.0).unwrap();
            for (s, v) in surf.s_grid.iter().zip(surf.terminal_row()) {
                assert_eq!(*v, payoff_underlying(&sc, sc.underlying(*s)));
            }
        }
    }

    #[test]
    fn fd_matches_black_scholes() {
        let surf = fd_price(&vanilla(1.0, Psi::Call), 400, 400, 4.0).unwrap();
        let v = surf.value_at(100.0, 0.0).unwrap();
        assert!((v - 10.4506).abs() < 1e-3, "{v}");
    }

    #[test]
    fn fd_converges_at_second_order() {
        let sc = vanilla(1.0, Psi::Call);
        let exact = bs_reference(100.0, 100.0, 0.05, 0.2, 1.0, 0.0);
        let err = |n: usize| (fd_price(&sc, n, n, 4.0).unwrap().value_at(100.0, 0.0).unwrap() - exact).abs();
        let ratio = err(100) / err(200);
        assert!((2.5..=6.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn fd_near_deterministic_transport() {
        let sc = MarketScenario::constant(1.0, 100.0, Psi::Call, 1.0, 1e-8, 0.05, 0.0).unwrap();
        let v = fd_price(&sc, 800, 200, 4.0).unwrap().value_at(110.0, 0.0).unwrap();
        let exact = 110.0 - 100.0 * (-0.05f64).exp();
        assert!((v - exact).abs() < 1e-2, "{v} vs {exact}");
    }

    #[test]
    fn fd_call_rows_are_monotone() {
        let surf = fd_price(&vanilla(2.0, Psi::Call), 200, 100, 4.0).unwrap();
        for row in &surf.values {
            for w in row.windows(2) {
                assert!(w[1] >= w[0] - 1e-10);
            }
            assert!(row.iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn put_call_terminal_rows() {
        let call = fd_price(&vanilla(1.5, Psi::Call), 64, 32, 4.0).unwrap();
        let put = fd_price(&vanilla(1.5, Psi::Put), 64, 32, 4.0).unwrap();
        for (i, s) in call.s_grid.iter().enumerate() {
            let sum = call.terminal_row()[i] + put.terminal_row()[i];
            assert_eq!(sum, (s.powf(1.5) - 100.0).abs());
        }
    }

    #[test]
    fn fd_put_call_parity_interior() {
        let sc = vanilla(1.0, Psi::Call);
        let c = fd_price(&sc, 400, 200, 4.0).unwrap().value_at(100.0, 0.0).unwrap();
        let p = fd_price(&sc.with_psi(Psi::Put), 400, 200, 4.0).unwrap().value_at(100.0, 0.0).unwrap();
        assert!((c - p - (100.0 - 100.0 * (-0.05f64).exp())).abs() < 2e-3);
    }

    #[test]
    fn fd_rejects_bad_grids() {
        assert!(fd_price(&vanilla(1.0, Psi::Call), 8, 32, 4.0).is_err());
        assert!(fd_price(&vanilla(1.0, Psi::Call), 32, 32, 2.0).is_err());
    }

    #[test]
    fn mc_degenerate_volatility() {
        let zero = CoefficientCurve::constant(0.0, 1.0).unwrap();
        let r = CoefficientCurve::constant(0.05, 1.0).unwrap();
        let y = CoefficientCurve::constant(0.01, 1.0).unwrap();
        let sc = MarketScenario::with_degenerate_volatility(2.0, 100.0, Psi::Call, 1.0, zero, r, y, None).unwrap();
        let est = mc_price(&sc, 11.0, 2000, 4, 7).unwrap();
        assert_eq!(est.stderr, 0.0);
        let fwd = 11.0 * (0.04f64).exp();
        let exact = (-0.05f64).exp() * (fwd * fwd - 100.0);
        assert!((est.mean - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn mc_is_reproducible_across_thread_counts() {
        let sc = vanilla(1.0, Psi::Call);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_price(&sc, 100.0, 20_000, 3, 42).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        assert_ne!(a.mean, mc_price(&sc, 100.0, 20_000, 3, 43).unwrap().mean);
    }

    #[test]
    fn mc_agrees_with_black_scholes() {
        let est = mc_price(&vanilla(1.0, Psi::Call), 100.0, 50_000, 1, 11).unwrap();
        let exact = bs_reference(100.0, 100.0, 0.05, 0.2, 1.0, 0.0);
        assert!((est.mean - exact).abs() < 3.0 * est.stderr, "{} ± {}", est.mean, est.stderr);
    }

    #[test]
    fn martingale_zero_price_of_risk_coincides() {
        let rep = martingale_diagnostic(&vanilla(1.0, Psi::Call), 100.0, 2000, 4, 5).unwrap();
        assert_eq!(rep.kernel_estimate, rep.risk_neutral_estimate);
        assert_eq!(rep.joint_stderr, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn martingale_rejects_vanishing_volatility() {
        let c = |v: f64| CoefficientCurve::constant(v, 1.0).unwrap();
        let sc = MarketScenario::with_degenerate_volatility(1.0, 100.0, Psi::Call, 1.0, c(0.0), c(0.05), c(0.0), Some(c(0.1)))
            .unwrap();
        assert!(matches!(
            martingale_diagnostic(&sc, 100.0, 2000, 4, 5),
            Err(Error::MarketPriceOfRisk { .. })
        ));
    }
}
