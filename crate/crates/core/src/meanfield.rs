//! Numerical integration of the large-system ODE limit.
//!
//! The state is a truncated tail vector `x` (`x[i]` = fraction of queues
//! holding at least `i` jobs, `x[0] = 1`) plus the busy server fraction `y`.
//! For the serve-the-longest policy the drift is
//!
//! ```text
//! dx_i/dt = lambda*(x_{i-1} - x_i)
//!           - r*(gamma*(1-y) + mu*y) * ((1-x_{i+1})^d - (1-x_i)^d)
//! dy/dt   = gamma*(1-y)*(1 - (1-x_1)^d) - mu*y*(1-x_1)^d
//! ```
//!
//! with the truncation closure `x[i_max+1] = 0`. The shortest-of-d baseline
//! evolves server-queue tails instead:
//! `dx_i/dt = (lambda/r)*(x_{i-1}^d - x_i^d) - mu*(x_i - x_{i+1})`.
//!
//! Integration is fixed-step classical fourth-order Runge-Kutta. After each
//! step the state is clamped back onto the invariant set (componentwise to
//! `[0,1]`, tail kept monotone); clamping only absorbs floating-point noise.
//! Violations above [`MONOTONE_TOL`] are reported as errors, never hidden.

use crate::config::{ModelParams, Policy};
use crate::equilibrium::EquilibriumProfile;
use std::io::{self, Write};
use thiserror::Error;

/// Default truncation length of the tail vector.
pub const DEFAULT_I_MAX: usize = 64;
/// Hard cap on automatic truncation growth.
pub const I_MAX_CAP: usize = 1 << 16;
/// A tail value above this at the truncation boundary means the horizon is
/// too short for the result to be trusted.
pub const OVERFLOW_THRESHOLD: f64 = 1e-6;
/// Monotonicity violations up to this size are treated as floating-point
/// noise and re-sorted; anything larger is an error.
pub const MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Error)]
pub enum MeanFieldError {
    #[error("truncation overflow at t={t}: x[{i_max}]={tail_value:e} exceeds {threshold:e}; i_max too small")]
    TruncationOverflow {
        t: f64,
        i_max: usize,
        tail_value: f64,
        threshold: f64,
        /// State at the moment the overflow was detected, so callers can
        /// extend the horizon and continue.
        state: MeanFieldState,
    },
    #[error("monotonicity violated at t={t}: x[{index}] exceeds x[{}] by {magnitude:e}", index - 1)]
    MonotonicityViolated {
        t: f64,
        index: usize,
        magnitude: f64,
    },
    #[error("relaxation did not converge within t={max_t}: residual {residual:e} > tol {tol:e}")]
    NoConvergence {
        max_t: f64,
        residual: f64,
        tol: f64,
        state: MeanFieldState,
    },
    #[error("unstable configuration: lambda/(r*mu) = {offered_load} >= 1")]
    Unstable { offered_load: f64 },
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
}

/// Tail fractions plus busy server fraction at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    /// `x[0] = 1 >= x[1] >= ... >= x[i_max] >= 0`.
    pub x: Vec<f64>,
    /// Busy server fraction in `[0, 1]`.
    pub y: f64,
    /// Time in seconds.
    pub t: f64,
}

impl MeanFieldState {
    /// Empty system: `x = (1, 0, ..., 0)`, `y = 0`.
    pub fn empty(i_max: usize) -> Self {
        let mut x = vec![0.0; i_max + 1];
        x[0] = 1.0;
        MeanFieldState { x, y: 0.0, t: 0.0 }
    }

    /// State at an equilibrium profile, padded with zeros to at least the
    /// profile length (or `i_max` if larger).
    pub fn from_profile(profile: &EquilibriumProfile, i_max: Option<usize>) -> Self {
        let len = i_max
            .map(|m| (m + 1).max(profile.pi().len()))
            .unwrap_or(profile.pi().len());
        let mut x = vec![0.0; len];
        x[..profile.pi().len()].copy_from_slice(profile.pi());
        MeanFieldState {
            x,
            y: profile.epsilon(),
            t: 0.0,
        }
    }

    pub fn i_max(&self) -> usize {
        self.x.len() - 1
    }

    /// Sup norm over the tail components (compared over the longer of the
    /// two vectors, missing entries read as zero) and the `y` gap.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        let longer = self.x.len().max(other.x.len());
        let mut sup = (self.y - other.y).abs();
        for i in 0..longer {
            let a = self.x.get(i).copied().unwrap_or(0.0);
            let b = other.x.get(i).copied().unwrap_or(0.0);
            sup = sup.max((a - b).abs());
        }
        sup
    }
}

/// Fills `out[i] = (1 - x[i])^d` for `i < x.len()` and the closure value
/// `out[x.len()] = 1` (as if `x[i_max+1] = 0`).
#[inline]
fn fill_complement_pow(x: &[f64], d: u32, out: &mut [f64]) {
    debug_assert_eq!(out.len(), x.len() + 1);
    match d {
        1 => {
            for (o, &v) in out.iter_mut().zip(x) {
                *o = 1.0 - v;
            }
        }
        2 => {
            for (o, &v) in out.iter_mut().zip(x) {
                let c = 1.0 - v;
                *o = c * c;
            }
        }
        _ => {
            let di = d as i32;
            for (o, &v) in out.iter_mut().zip(x) {
                *o = (1.0 - v).powi(di);
            }
        }
    }
    out[x.len()] = 1.0;
}

/// Serve-the-longest drift, written into `dx` (same length as `x`,
/// `dx[0] = 0`); returns `dy`. `pow` is scratch of length `x.len() + 1`.
fn slq_drift_into(x: &[f64], y: f64, p: &ModelParams, pow: &mut [f64], dx: &mut [f64]) -> f64 {
    fill_complement_pow(x, p.d, pow);
    let select_rate = p.r * (p.gamma * (1.0 - y) + p.mu * y);
    let lambda = p.lambda;
    dx[0] = 0.0;
    for i in 1..x.len() {
        dx[i] = lambda * (x[i - 1] - x[i]) - select_rate * (pow[i + 1] - pow[i]);
    }
    let empty_prob = pow[1]; // all d sampled queues empty
    p.gamma * (1.0 - y) * (1.0 - empty_prob) - p.mu * y * empty_prob
}

/// Shortest-of-d baseline drift over server-queue tails; `y` is unused and
/// `dy = 0`.
fn jsq_drift_into(x: &[f64], p: &ModelParams, pow: &mut [f64], dx: &mut [f64]) {
    // pow[i] = x_i^d, closure x_{i_max+1} = 0.
    let di = p.d as i32;
    match p.d {
        1 => {
            for (o, &v) in pow.iter_mut().zip(x) {
                *o = v;
            }
        }
        2 => {
            for (o, &v) in pow.iter_mut().zip(x) {
                *o = v * v;
            }
        }
        _ => {
            for (o, &v) in pow.iter_mut().zip(x) {
                *o = v.powi(di);
            }
        }
    }
    pow[x.len()] = 0.0;
    let arr = p.lambda / p.r;
    dx[0] = 0.0;
    for i in 1..x.len() {
        let next = if i + 1 < x.len() { x[i + 1] } else { 0.0 };
        dx[i] = arr * (pow[i - 1] - pow[i]) - p.mu * (x[i] - next);
    }
}

/// Drift of the serve-the-longest mean field at `state`.
pub fn slq_drift(state: &MeanFieldState, p: &ModelParams) -> (Vec<f64>, f64) {
    let mut dx = vec![0.0; state.x.len()];
    let mut pow = vec![0.0; state.x.len() + 1];
    let dy = slq_drift_into(&state.x, state.y, p, &mut pow, &mut dx);
    (dx, dy)
}

/// Drift of the shortest-of-d baseline mean field at `state`.
pub fn jsq_drift(state: &MeanFieldState, p: &ModelParams) -> Vec<f64> {
    let mut dx = vec![0.0; state.x.len()];
    let mut pow = vec![0.0; state.x.len() + 1];
    jsq_drift_into(&state.x, p, &mut pow, &mut dx);
    dx
}

/// Sup-norm of the drift (including `dy` for the longest-queue policy).
pub fn drift_residual(state: &MeanFieldState, p: &ModelParams, policy: Policy) -> f64 {
    match policy {
        Policy::Slq => {
            let (dx, dy) = slq_drift(state, p);
            dx.iter().fold(dy.abs(), |a, v| a.max(v.abs()))
        }
        Policy::Jsq => jsq_drift(state, p)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs())),
    }
}

/// Spec default step: `0.01 * min(1/lambda, 1/mu, 1/gamma)`.
pub fn default_dt(p: &ModelParams) -> f64 {
    0.01 * (1.0 / p.lambda).min(1.0 / p.mu).min(1.0 / p.gamma)
}

/// Coarser step for fixed-point relaxation, chosen from a conservative bound
/// on the Jacobian spectral radius so the RK4 map stays stable. Any stable
/// step converges to the same fixed point; accuracy along the way is
/// irrelevant for relaxation.
pub fn relaxation_dt(p: &ModelParams) -> f64 {
    let fast = p.gamma.max(p.mu);
    let bound = 2.0 * (p.lambda + p.r * fast * p.d as f64) + p.gamma + p.mu;
    2.0 / bound
}

#[inline]
fn eval_drift(
    x: &[f64],
    y: f64,
    p: &ModelParams,
    policy: Policy,
    pow: &mut [f64],
    k: &mut [f64],
) -> f64 {
    match policy {
        Policy::Slq => slq_drift_into(x, y, p, pow, k),
        Policy::Jsq => {
            jsq_drift_into(x, p, pow, k);
            0.0
        }
    }
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    pow: Vec<f64>,
}

impl Rk4 {
    fn new(len: usize) -> Self {
        Rk4 {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
            pow: vec![0.0; len + 1],
        }
    }

    fn resize(&mut self, len: usize) {
        for v in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            v.resize(len, 0.0);
        }
        self.pow.resize(len + 1, 0.0);
    }

    /// One RK4 step followed by the invariant clamp.
    fn step(
        &mut self,
        x: &mut [f64],
        y: &mut f64,
        t: &mut f64,
        dt: f64,
        p: &ModelParams,
        policy: Policy,
    ) -> Result<(), MeanFieldError> {
        let half = 0.5 * dt;
        let dy1 = eval_drift(x, *y, p, policy, &mut self.pow, &mut self.k1);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + half * self.k1[i];
        }
        let dy2 = eval_drift(&self.tmp, *y + half * dy1, p, policy, &mut self.pow, &mut self.k2);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + half * self.k2[i];
        }
        let dy3 = eval_drift(&self.tmp, *y + half * dy2, p, policy, &mut self.pow, &mut self.k3);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        let dy4 = eval_drift(&self.tmp, *y + dt * dy3, p, policy, &mut self.pow, &mut self.k4);
        let w = dt / 6.0;
        for i in 0..x.len() {
            x[i] += w * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        *y += w * (dy1 + 2.0 * dy2 + 2.0 * dy3 + dy4);
        *t += dt;

        // Clamp back onto the invariant set.
        *y = y.clamp(0.0, 1.0);
        x[0] = 1.0;
        for i in 1..x.len() {
            let v = x[i].clamp(0.0, 1.0);
            x[i] = v;
            if v > x[i - 1] {
                let gap = v - x[i - 1];
                if gap > MONOTONE_TOL {
                    return Err(MeanFieldError::MonotonicityViolated {
                        t: *t,
                        index: i,
                        magnitude: gap,
                    });
                }
                x[i] = x[i - 1];
            }
        }
        Ok(())
    }
}

/// Integration options; `sample_stride` controls how many steps separate
/// recorded trajectory states (initial and final are always recorded).
#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub dt: f64,
    pub sample_stride: usize,
}

impl IntegrateOptions {
    pub fn with_default_dt(p: &ModelParams) -> Self {
        IntegrateOptions {
            dt: default_dt(p),
            sample_stride: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<MeanFieldState>,
}

impl Trajectory {
    pub fn initial(&self) -> &MeanFieldState {
        self.states.first().expect("trajectory never empty")
    }
    pub fn last(&self) -> &MeanFieldState {
        self.states.last().expect("trajectory never empty")
    }
}

/// Fixed-step RK4 integration from `initial` to `initial.t + t_end`.
///
/// The final step is shortened so the end time is hit exactly. Errors out if
/// the tail value at the truncation boundary crosses [`OVERFLOW_THRESHOLD`]
/// (the returned error carries the state so callers can regrow the horizon).
pub fn integrate(
    initial: &MeanFieldState,
    p: &ModelParams,
    policy: Policy,
    t_end: f64,
    opts: IntegrateOptions,
) -> Result<Trajectory, MeanFieldError> {
    if !(opts.dt.is_finite() && opts.dt > 0.0) {
        return Err(MeanFieldError::BadStep(opts.dt));
    }
    let mut x = initial.x.clone();
    let mut y = initial.y;
    let mut t = initial.t;
    let target = initial.t + t_end;
    let mut rk = Rk4::new(x.len());
    let mut states = vec![initial.clone()];
    let stride = opts.sample_stride.max(1);
    let mut step_no = 0usize;
    while t < target - 1e-12 * target.abs().max(1.0) {
        let dt = opts.dt.min(target - t);
        rk.step(&mut x, &mut y, &mut t, dt, p, policy)?;
        step_no += 1;
        let tail = x[x.len() - 1];
        if tail > OVERFLOW_THRESHOLD {
            return Err(MeanFieldError::TruncationOverflow {
                t,
                i_max: x.len() - 1,
                tail_value: tail,
                threshold: OVERFLOW_THRESHOLD,
                state: MeanFieldState { x, y, t },
            });
        }
        if step_no % stride == 0 && t < target {
            states.push(MeanFieldState {
                x: x.clone(),
                y,
                t,
            });
        }
    }
    if states.last().map(|s| s.t) != Some(t) {
        states.push(MeanFieldState { x, y, t });
    }
    Ok(Trajectory { states })
}

/// Result of a successful fixed-point relaxation.
#[derive(Debug, Clone)]
pub struct Relaxed {
    pub state: MeanFieldState,
    /// Sup-norm of the drift at the returned state.
    pub residual: f64,
}

/// Distance from the truncation boundary of the horizon-growth probe.
///
/// The closure `x[i_max+1] = 0` depresses the last few components of the
/// truncated equilibrium below their untruncated values (for a geometric
/// tail, `x[i_max]` sits near `rho^i_max * (1 - rho)`), so watching the
/// boundary component alone under-detects a too-short horizon. A component
/// a few entries in is essentially unsuppressed.
const GROW_PROBE_MARGIN: usize = 8;

/// Integrates from the empty state until `stop` returns true (checked every
/// few hundred steps), doubling the truncation horizon (up to
/// [`I_MAX_CAP`]) whenever the tail region rises above the overflow
/// threshold. Returns the first state that satisfied `stop`.
pub fn relax_until(
    p: &ModelParams,
    policy: Policy,
    mut stop: impl FnMut(&MeanFieldState) -> bool,
    max_t: f64,
) -> Result<MeanFieldState, MeanFieldError> {
    let dt = relaxation_dt(p);
    let mut state = MeanFieldState::empty(DEFAULT_I_MAX);
    let mut rk = Rk4::new(state.x.len());
    let chunk = 256usize;
    loop {
        for _ in 0..chunk {
            rk.step(&mut state.x, &mut state.y, &mut state.t, dt, p, policy)?;
        }
        let len = state.x.len();
        let probe = state.x[(len - 1).saturating_sub(GROW_PROBE_MARGIN).max(1)]
            .max(state.x[len - 1]);
        if probe > OVERFLOW_THRESHOLD {
            let new_len = (len - 1) * 2 + 1;
            if new_len - 1 > I_MAX_CAP {
                return Err(MeanFieldError::TruncationOverflow {
                    t: state.t,
                    i_max: len - 1,
                    tail_value: probe,
                    threshold: OVERFLOW_THRESHOLD,
                    state,
                });
            }
            state.x.resize(new_len, 0.0);
            rk.resize(new_len);
        }
        if stop(&state) {
            return Ok(state);
        }
        if state.t > max_t {
            return Err(MeanFieldError::NoConvergence {
                max_t,
                residual: drift_residual(&state, p, policy),
                tol: f64::NAN,
                state,
            });
        }
    }
}

/// Integrates from the empty state until the drift sup-norm falls below
/// `tol`, growing the truncation horizon on demand.
///
/// Non-convergence within `max_t` is reported with the achieved residual,
/// never silently returned.
pub fn find_fixed_point_by_relaxation(
    p: &ModelParams,
    policy: Policy,
    tol: f64,
    max_t: f64,
) -> Result<Relaxed, MeanFieldError> {
    let offered = p.offered_load();
    if offered >= 1.0 {
        return Err(MeanFieldError::Unstable {
            offered_load: offered,
        });
    }
    let mut residual = f64::INFINITY;
    let state = relax_until(
        p,
        policy,
        |s| {
            residual = drift_residual(s, p, policy);
            residual < tol
        },
        max_t,
    )
    .map_err(|e| match e {
        MeanFieldError::NoConvergence {
            max_t,
            residual,
            state,
            ..
        } => MeanFieldError::NoConvergence {
            max_t,
            residual,
            tol,
            state,
        },
        other => other,
    })?;
    Ok(Relaxed { state, residual })
}

/// Writes a trajectory as CSV with columns `t,y,x_1..x_i_max`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, w: &mut W) -> io::Result<()> {
    let i_max = traj
        .states
        .iter()
        .map(|s| s.x.len() - 1)
        .max()
        .unwrap_or(0);
    write!(w, "t,y")?;
    for i in 1..=i_max {
        write!(w, ",x_{}", i)?;
    }
    writeln!(w)?;
    for s in &traj.states {
        write!(w, "{},{}", s.t, s.y)?;
        for i in 1..=i_max {
            write!(w, ",{}", s.x.get(i).copied().unwrap_or(0.0))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{jsq_equilibrium, slq_equilibrium, DEFAULT_TAIL_TOL};

    fn paper_params() -> ModelParams {
        ModelParams {
            lambda: 0.045,
            mu: 1.0,
            gamma: 1.0,
            r: 0.05,
            d: 2,
        }
    }

    #[test]
    fn empty_state_drift_matches_hand_values() {
        // Empty system: dx_1 = lambda, dy = 0 (a sampling always fails).
        let p = paper_params();
        let state = MeanFieldState::empty(8);
        let (dx, dy) = slq_drift(&state, &p);
        assert_eq!(dx[0], 0.0);
        assert!((dx[1] - p.lambda).abs() < 1e-15);
        for &v in &dx[2..] {
            assert_eq!(v, 0.0);
        }
        assert_eq!(dy, 0.0);
    }

    #[test]
    fn drift_hand_example() {
        // x = (1, 0.5, 0), y = 0.5, d=2, lambda=0.045, r=0.05, gamma=mu=1:
        // dx_1 = 0.0225 - 0.05*1*(1 - 0.25) = -0.015.
        let p = paper_params();
        let state = MeanFieldState {
            x: vec![1.0, 0.5, 0.0],
            y: 0.5,
            t: 0.0,
        };
        let (dx, dy) = slq_drift(&state, &p);
        assert!((dx[1] + 0.015).abs() < 1e-15);
        // dx_2 = 0.045*0.5 - 0.05*(1 - 1) = 0.0225 with closure x_3 = 0.
        assert!((dx[2] - 0.0225).abs() < 1e-15);
        // dy = 1*0.5*(1 - 0.25) - 1*0.5*0.25 = 0.25.
        assert!((dy - 0.25).abs() < 1e-15);
    }

    #[test]
    fn drift_vanishes_at_equilibrium() {
        let p = paper_params();
        let prof = slq_equilibrium(&p, DEFAULT_TAIL_TOL).unwrap();
        let state = MeanFieldState::from_profile(&prof, None);
        let residual = drift_residual(&state, &p, Policy::Slq);
        assert!(residual < 1e-10, "residual = {residual:e}");
    }

    #[test]
    fn jsq_drift_vanishes_at_closed_form_equilibrium() {
        let p = paper_params();
        let prof = jsq_equilibrium(&p, DEFAULT_TAIL_TOL).unwrap();
        let state = MeanFieldState::from_profile(&prof, None);
        let residual = drift_residual(&state, &p, Policy::Jsq);
        assert!(residual < 1e-10, "residual = {residual:e}");
    }

    #[test]
    fn jsq_empty_state_fills_at_arrival_rate() {
        let p = paper_params();
        let state = MeanFieldState::empty(8);
        let dx = jsq_drift(&state, &p);
        assert!((dx[1] - p.lambda / p.r).abs() < 1e-15);
    }

    #[test]
    fn d1_drifts_reduce_to_linear_birth_death() {
        // Expand the d = 1 coefficients by hand on i = 1..5 and compare.
        let p = ModelParams {
            lambda: 0.3,
            mu: 1.0,
            gamma: 0.7,
            r: 0.5,
            d: 1,
        };
        let x = vec![1.0, 0.6, 0.35, 0.2, 0.1, 0.04];
        let y = 0.4;
        let state = MeanFieldState {
            x: x.clone(),
            y,
            t: 0.0,
        };
        let (dx, dy) = slq_drift(&state, &p);
        let s = p.r * (p.gamma * (1.0 - y) + p.mu * y);
        for i in 1..=5 {
            let next = if i + 1 < x.len() { x[i + 1] } else { 0.0 };
            let expected = p.lambda * (x[i - 1] - x[i]) - s * (x[i] - next);
            assert!((dx[i] - expected).abs() < 1e-15, "i = {i}");
        }
        let expected_dy = p.gamma * (1.0 - y) * x[1] - p.mu * y * (1.0 - x[1]);
        assert!((dy - expected_dy).abs() < 1e-15);

        let dxj = jsq_drift(&state, &p);
        for i in 1..=5 {
            let next = if i + 1 < x.len() { x[i + 1] } else { 0.0 };
            let expected = p.lambda / p.r * (x[i - 1] - x[i]) - p.mu * (x[i] - next);
            assert!((dxj[i] - expected).abs() < 1e-15, "jsq i = {i}");
        }
    }

    #[test]
    fn no_arrivals_decays_monotonically() {
        let p = ModelParams {
            lambda: 0.0,
            mu: 1.0,
            gamma: 1.0,
            r: 0.05,
            d: 2,
        };
        let initial = MeanFieldState {
            x: vec![1.0, 0.7, 0.4, 0.1, 0.0, 0.0],
            y: 0.9,
            t: 0.0,
        };
        let opts = IntegrateOptions {
            dt: default_dt(&p),
            sample_stride: 100,
        };
        // Drain timescale is 1/(r*mu*d) = 10 s here; 600 s empties it.
        let traj = integrate(&initial, &p, Policy::Slq, 600.0, opts).unwrap();
        for pair in traj.states.windows(2) {
            for i in 1..initial.x.len() {
                assert!(pair[1].x[i] <= pair[0].x[i] + 1e-12);
            }
        }
        let last = traj.last();
        assert!(last.x[1] < 1e-4, "x_1 = {}", last.x[1]);
    }

    #[test]
    fn step_halving_changes_final_state_below_1e8() {
        let p = paper_params();
        let initial = MeanFieldState::empty(32);
        let dt = default_dt(&p);
        let run = |dt| {
            integrate(
                &initial,
                &p,
                Policy::Slq,
                50.0,
                IntegrateOptions {
                    dt,
                    sample_stride: usize::MAX,
                },
            )
            .unwrap()
        };
        let a = run(dt);
        let b = run(dt / 2.0);
        let diff = a.last().sup_distance(b.last());
        assert!(diff < 1e-8, "diff = {diff:e}");
    }

    #[test]
    fn trajectory_invariants_hold_along_the_way() {
        let p = paper_params();
        let initial = MeanFieldState::empty(32);
        let traj = integrate(
            &initial,
            &p,
            Policy::Slq,
            200.0,
            IntegrateOptions {
                dt: default_dt(&p),
                sample_stride: 50,
            },
        )
        .unwrap();
        for s in &traj.states {
            assert!(s.y >= 0.0 && s.y <= 1.0);
            assert_eq!(s.x[0], 1.0);
            for w in s.x.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn relaxation_lands_on_recursion_fixed_point() {
        let p = paper_params();
        let relaxed = find_fixed_point_by_relaxation(&p, Policy::Slq, 1e-9, 1e7).unwrap();
        assert!(relaxed.residual < 1e-9);
        let prof = slq_equilibrium(&p, DEFAULT_TAIL_TOL).unwrap();
        let target = MeanFieldState::from_profile(&prof, Some(relaxed.state.i_max()));
        let diff = relaxed.state.sup_distance(&target);
        assert!(diff < 1e-7, "diff = {diff:e}");
    }

    #[test]
    fn relaxation_d1_matches_geometric_law() {
        let p = ModelParams {
            lambda: 0.3,
            mu: 1.0,
            gamma: 1.0,
            r: 0.5,
            d: 1,
        };
        let relaxed = find_fixed_point_by_relaxation(&p, Policy::Slq, 1e-10, 1e7).unwrap();
        let rho = p.selection_load();
        let mut expected = 1.0;
        for (i, &v) in relaxed.state.x.iter().enumerate() {
            assert!((v - expected).abs() < 1e-7, "i={i}: {v} vs {expected}");
            expected *= rho;
        }
    }

    #[test]
    fn relaxation_rejects_unstable() {
        let p = ModelParams {
            lambda: 1.2,
            mu: 1.0,
            gamma: 1.0,
            r: 1.0,
            d: 2,
        };
        assert!(matches!(
            find_fixed_point_by_relaxation(&p, Policy::Slq, 1e-9, 1e5),
            Err(MeanFieldError::Unstable { .. })
        ));
    }

    #[test]
    fn overflow_reported_when_horizon_too_short() {
        // Load 0.9 with d = 1 needs far more than 8 components.
        let p = ModelParams {
            lambda: 0.9,
            mu: 1.0,
            gamma: 1.0,
            r: 1.0,
            d: 1,
        };
        let initial = MeanFieldState::empty(8);
        let err = integrate(
            &initial,
            &p,
            Policy::Slq,
            2000.0,
            IntegrateOptions {
                dt: default_dt(&p),
                sample_stride: usize::MAX,
            },
        )
        .unwrap_err();
        assert!(matches!(err, MeanFieldError::TruncationOverflow { .. }));
    }

    #[test]
    fn trajectory_csv_has_expected_header() {
        let p = paper_params();
        let traj = integrate(
            &MeanFieldState::empty(4),
            &p,
            Policy::Slq,
            1.0,
            IntegrateOptions {
                dt: 0.1,
                sample_stride: 5,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,y,x_1,x_2,x_3,x_4");
        assert!(lines.next().unwrap().starts_with("0,0,0"));
    }
}
