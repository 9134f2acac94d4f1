//! Deterministic numerical kernels shared by every other module: adaptive
//! Simpson quadrature, a Dormand–Prince 5(4) initial-value solver with
//! cubic-Hermite dense output, central finite differences and a Thomas
//! tridiagonal solver.

use crate::error::{Error, Result};

const SIMPSON_MAX_DEPTH: u32 = 50;
const SIMPSON_PANELS: usize = 8;

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// The returned value `Q` carries an estimated error below `tol * max(1, |Q|)`.
/// Reversed bounds flip the sign; an empty interval gives exactly zero.
pub fn integrate_adaptive<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("quadrature tolerance must be positive, got {tol}")));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!("non-finite quadrature bounds [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate_adaptive(f, b, a, tol).map(|q| -q);
    }

    let width = (b - a) / SIMPSON_PANELS as f64;
    let mut panels = Vec::with_capacity(SIMPSON_PANELS);
    let mut coarse = 0.0;
    for k in 0..SIMPSON_PANELS {
        let lo = a + width * k as f64;
        let hi = if k + 1 == SIMPSON_PANELS { b } else { lo + width };
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        coarse += whole;
        panels.push((lo, hi, flo, fmid, fhi, whole));
    }
    if !coarse.is_finite() {
        return Err(Error::QuadratureFailure { lo: a, hi: b });
    }

    let abs_tol = tol * coarse.abs().max(1.0);
    let panel_tol = abs_tol / SIMPSON_PANELS as f64;
    let mut total = 0.0;
    for (lo, hi, flo, fmid, fhi, whole) in panels {
        total += simpson_step(&f, lo, hi, flo, fmid, fhi, whole, panel_tol, SIMPSON_MAX_DEPTH)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    flo: f64,
    fmid: f64,
    fhi: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let mid = 0.5 * (lo + hi);
    let lm = 0.5 * (lo + mid);
    let rm = 0.5 * (mid + hi);
    let (flm, frm) = (f(lm), f(rm));
    let left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
    let right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
    let refined = left + right;
    let delta = refined - whole;
    if !refined.is_finite() {
        return Err(Error::QuadratureFailure { lo, hi });
    }
    // roundoff floor: differences at the last few ulps of the panel value are noise
    let floor = 64.0 * f64::EPSILON * refined.abs();
    if delta.abs() <= 15.0 * tol || delta.abs() <= floor {
        return Ok(refined + delta / 15.0);
    }
    if depth == 0 || mid <= lo || mid >= hi {
        return Err(Error::QuadratureFailure { lo, hi });
    }
    let l = simpson_step(f, lo, mid, flo, flm, fmid, left, 0.5 * tol, depth - 1)?;
    let r = simpson_step(f, mid, hi, fmid, frm, fhi, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// Quadrature split at interior breakpoints, so kinks and jumps of the
/// integrand never fall strictly inside a Simpson panel.
pub fn integrate_piecewise<F>(f: F, a: f64, b: f64, breakpoints: &[f64], tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if b < a {
        return integrate_piecewise(f, b, a, breakpoints, tol).map(|q| -q);
    }
    let mut cuts = vec![a];
    cuts.extend(breakpoints.iter().copied().filter(|&p| p > a && p < b));
    cuts.push(b);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += integrate_adaptive(&f, w[0], w[1], tol)?;
    }
    Ok(total)
}

/// Finite-difference order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

/// `cbrt(eps) * max(1, |t|)`.
pub fn default_step(t: f64) -> f64 {
    f64::EPSILON.cbrt() * t.abs().max(1.0)
}

/// Central-difference derivative of `f` at `t` with step `h` (O(h²) truncation).
pub fn differentiate<F>(f: F, t: f64, order: Order, h: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    match order {
        Order::First => (f(t + h) - f(t - h)) / (2.0 * h),
        Order::Second => (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h),
    }
}

/// Thomas algorithm for a tridiagonal system.
///
/// `lower[i]` multiplies `x[i]` in row `i + 1`; `upper[i]` multiplies `x[i + 1]` in row `i`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if rhs.len() != n || (n > 0 && (lower.len() != n - 1 || upper.len() != n - 1)) {
        return Err(Error::invalid(format!(
            "tridiagonal lengths inconsistent: lower={} diag={} upper={} rhs={}",
            lower.len(),
            n,
            upper.len(),
            rhs.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 {
        return Err(Error::SingularSystem { index: 0 });
    }
    if n > 1 {
        c[0] = upper[0] / pivot;
    }
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i - 1] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::SingularSystem { index: i });
        }
        if i < n - 1 {
            c[i] = upper[i] / pivot;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Dense solution of an initial-value problem: accepted nodes with their
/// slopes, interpolated by cubic Hermite segments.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    backward: bool,
}

impl Trajectory {
    pub fn interpolation_order(&self) -> usize {
        3
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().expect("non-empty trajectory"))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.times.iter().copied().zip(self.states.iter().map(Vec::as_slice))
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn locate(&self, t: f64) -> Result<usize> {
        let (lo, hi) = self.span();
        if !(t >= lo && t <= hi) {
            return Err(Error::domain(format!("t={t} outside trajectory span [{lo}, {hi}]")));
        }
        // index of the segment [times[k], times[k+1]] containing t
        let k = self.times.partition_point(|&s| s <= t);
        Ok(k.saturating_sub(1).min(self.times.len().saturating_sub(2)))
    }

    /// State at `t`; exact at node times.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        if self.times.len() == 1 {
            self.locate(t)?;
            return Ok(self.states[0].clone());
        }
        let k = self.locate(t)?;
        if t == self.times[k] {
            return Ok(self.states[k].clone());
        }
        if t == self.times[k + 1] {
            return Ok(self.states[k + 1].clone());
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok((0..self.dim())
            .map(|i| {
                h00 * self.states[k][i]
                    + h * h10 * self.slopes[k][i]
                    + h01 * self.states[k + 1][i]
                    + h * h11 * self.slopes[k + 1][i]
            })
            .collect())
    }

    /// Derivative of the dense interpolant at `t`.
    pub fn eval_slope(&self, t: f64) -> Result<Vec<f64>> {
        if self.times.len() == 1 {
            self.locate(t)?;
            return Ok(self.slopes[0].clone());
        }
        let k = self.locate(t)?;
        if t == self.times[k] {
            return Ok(self.slopes[k].clone());
        }
        if t == self.times[k + 1] {
            return Ok(self.slopes[k + 1].clone());
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        Ok((0..self.dim())
            .map(|i| {
                d00 * self.states[k][i]
                    + d10 * self.slopes[k][i]
                    + d01 * self.states[k + 1][i]
                    + d11 * self.slopes[k + 1][i]
            })
            .collect())
    }

    /// Final state in integration order (the value at `t1`).
    pub fn terminal(&self) -> &[f64] {
        if self.backward {
            &self.states[0]
        } else {
            self.states.last().expect("non-empty")
        }
    }
}

/// Options for [`solve_ivp_with`].
#[derive(Debug, Clone, Copy)]
pub struct IvpOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

impl IvpOptions {
    pub fn with_tol(tol: f64) -> Self {
        IvpOptions {
            rtol: tol,
            atol: tol,
            max_step: None,
            max_steps: 1_000_000,
        }
    }

    pub fn max_step(mut self, h: f64) -> Self {
        self.max_step = Some(h);
        self
    }
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t1` with local error control at `tol`.
/// Backward integration (`t1 < t0`) is allowed.
pub fn solve_ivp<F>(rhs: F, t0: f64, y0: &[f64], t1: f64, tol: f64) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    solve_ivp_with(rhs, t0, y0, t1, IvpOptions::with_tol(tol))
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// difference between the 5th- and 4th-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

pub fn solve_ivp_with<F>(rhs: F, t0: f64, y0: &[f64], t1: f64, opts: IvpOptions) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    if !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
        return Err(Error::invalid("IVP tolerances must be positive"));
    }
    let n = y0.len();
    let mut f0 = vec![0.0; n];
    rhs(t0, y0, &mut f0);
    if f0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite right-hand side at t={t0}")));
    }

    let mut times = vec![t0];
    let mut states = vec![y0.to_vec()];
    let mut slopes = vec![f0.clone()];
    if t0 == t1 {
        return Ok(Trajectory { times, states, slopes, backward: false });
    }

    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let max_step = opts.max_step.unwrap_or(span).min(span);

    // initial step from the scaled norms of y and f
    let scale = |y: &[f64], i: usize| opts.atol + opts.rtol * y[i].abs();
    let d0 = rms((0..n).map(|i| y0[i] / scale(y0, i)));
    let d1 = rms((0..n).map(|i| f0[i] / scale(y0, i)));
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(max_step).max(1e-12 * span);

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut f = f0;
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut steps = 0usize;

    while (t1 - t) * dir > 0.0 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Stiffness { at: t });
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining;
        let hs = if last { remaining } else { h };
        let step = dir * hs;

        k[0].copy_from_slice(&f);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                stage[i] = y[i] + step * acc;
            }
            rhs(t + C[s] * step, &stage, &mut k[s]);
        }
        // stage 6 evaluates at the 5th-order solution, which is y_new (FSAL)
        for i in 0..n {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate().take(6) {
                acc += A[6][j] * kj[i];
            }
            y_new[i] = y[i] + step * acc;
        }
        let err = rms((0..n).map(|i| {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            step * e / (opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs()))
        }));

        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            h = 0.25 * hs;
        } else if err <= 1.0 {
            t = if last { t1 } else { t + step };
            y.copy_from_slice(&y_new);
            f.copy_from_slice(&k[6]);
            times.push(t);
            states.push(y.clone());
            slopes.push(f.clone());
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (hs * factor).min(max_step);
            continue;
        } else {
            h = hs * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Stiffness { at: t });
        }
    }

    let backward = dir < 0.0;
    if backward {
        times.reverse();
        states.reverse();
        slopes.reverse();
    }
    Ok(Trajectory { times, states, slopes, backward })
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v * v;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `pivot_tol` times the largest row entry.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, pivot_tol: f64) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let scale = a[col..].iter().map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs()))).fold(0.0f64, f64::max);
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() <= pivot_tol * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let m = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= m * a[col][c];
            }
            b[r] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Some(x)
}
