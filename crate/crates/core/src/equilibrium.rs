//! Equilibrium tail profiles of the mean-field limit and the performance
//! predictions derived from them.
//!
//! For the serve-the-longest policy the equilibrium tail `pi` satisfies the
//! recursion
//!
//! ```text
//! pi_0 = 1,   pi_{i+1} = 1 - (1 - rho * pi_i)^(1/d),
//! ```
//!
//! with `rho = lambda / (r*(gamma*(1-eps) + mu*eps))` and busy fraction
//! `eps = lambda/(r*mu)`; it exists and is unique whenever `eps < 1`. For
//! `d = 1` the recursion collapses to the exact geometric law `pi_i = rho^i`,
//! which doubles as an internal consistency oracle. The join-the-shortest
//! baseline has the closed form `pi_i = eps^((d^i - 1)/(d - 1))`.
//!
//! The quantity `1 - (1-x)^(1/d)` is evaluated through `ln_1p`/`exp_m1` so
//! the tail keeps full relative precision even at loads like 0.99 where the
//! naive form loses most significant digits.

use crate::config::{ModelParams, Policy};
use std::io::{self, Write};
use thiserror::Error;

/// Default truncation threshold for equilibrium tails.
pub const DEFAULT_TAIL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error("unstable configuration: lambda/(r*mu) = {offered_load} >= 1 has no summable equilibrium")]
    Unstable { offered_load: f64 },
    #[error("tail_tol must be in (0, 1), got {0}")]
    BadTailTol(f64),
}

/// A truncated equilibrium tail sequence together with its busy fraction and
/// truncation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumProfile {
    pi: Vec<f64>,
    epsilon: f64,
    rho: f64,
    tail_tol: f64,
    tail_mass_bound: f64,
    policy: Policy,
}

impl EquilibriumProfile {
    /// The tail sequence `pi_0 = 1, pi_1, ...` truncated where `pi_i`
    /// drops below the tail tolerance.
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Equilibrium busy server fraction `eps = lambda/(r*mu)`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Geometric rate dominating the tail (`pi_i <= rho^i`).
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn tail_tol(&self) -> f64 {
        self.tail_tol
    }

    /// Upper bound on the truncated mass `sum_{i > cut} pi_i`, from the
    /// geometric domination `pi_i <= rho^i`.
    pub fn tail_mass_bound(&self) -> f64 {
        self.tail_mass_bound
    }

    /// Average queue size at equilibrium, `sum_{i>=1} pi_i` over the
    /// computed range. The truncation error is bounded by
    /// [`Self::tail_mass_bound`].
    pub fn mean_queue_size(&self) -> f64 {
        self.pi[1..].iter().sum()
    }

    /// Predicted average response time: waiting time `q/lambda` by Little's
    /// law plus one mean service time `1/mu`.
    pub fn predicted_response_time(&self, lambda: f64, mu: f64) -> f64 {
        self.mean_queue_size() / lambda + 1.0 / mu
    }

    /// Probability of a queue holding exactly `i` jobs: `pi_i - pi_{i+1}`
    /// (zero closure past the truncation point).
    pub fn density(&self) -> Vec<f64> {
        let mut q: Vec<f64> = self
            .pi
            .windows(2)
            .map(|w| w[0] - w[1])
            .collect();
        q.push(*self.pi.last().expect("pi never empty"));
        q
    }

    /// Writes the profile as CSV rows `i,pi_i`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "i,pi")?;
        for (i, p) in self.pi.iter().enumerate() {
            writeln!(w, "{},{}", i, p)?;
        }
        Ok(())
    }
}

fn check_inputs(p: &ModelParams, tail_tol: f64) -> Result<(f64, f64), EquilibriumError> {
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(EquilibriumError::BadTailTol(tail_tol));
    }
    let eps = p.offered_load();
    if eps >= 1.0 {
        return Err(EquilibriumError::Unstable { offered_load: eps });
    }
    Ok((eps, p.selection_load()))
}

/// `1 - (1 - x)^(1/d)` with full relative precision for small results.
#[inline]
fn one_minus_root(x: f64, inv_d: f64) -> f64 {
    -f64::exp_m1(f64::ln_1p(-x) * inv_d)
}

/// Equilibrium profile of the serve-the-longest-of-d policy.
///
/// Rejects unstable configurations; the recursion requires
/// `lambda/(r*mu) < 1`. For `d = 1` the exact geometric law is used
/// directly instead of the recursion.
pub fn slq_equilibrium(
    p: &ModelParams,
    tail_tol: f64,
) -> Result<EquilibriumProfile, EquilibriumError> {
    let (eps, rho) = check_inputs(p, tail_tol)?;
    let mut pi = vec![1.0];
    if p.d == 1 {
        let mut v = rho;
        while v >= tail_tol {
            pi.push(v);
            v *= rho;
        }
    } else {
        let inv_d = 1.0 / p.d as f64;
        let mut v = one_minus_root(rho, inv_d);
        while v >= tail_tol {
            pi.push(v);
            v = one_minus_root(rho * v, inv_d);
        }
    }
    let cut = pi.len() - 1;
    let tail_mass_bound = rho.powi(cut as i32 + 1) / (1.0 - rho);
    Ok(EquilibriumProfile {
        pi,
        epsilon: eps,
        rho,
        tail_tol,
        tail_mass_bound,
        policy: Policy::Slq,
    })
}

/// Equilibrium of the join-the-shortest-of-d baseline:
/// `pi_i = eps^((d^i - 1)/(d - 1))` for `d >= 2`, geometric for `d = 1`.
pub fn jsq_equilibrium(
    p: &ModelParams,
    tail_tol: f64,
) -> Result<EquilibriumProfile, EquilibriumError> {
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(EquilibriumError::BadTailTol(tail_tol));
    }
    let eps = p.offered_load();
    if eps >= 1.0 {
        return Err(EquilibriumError::Unstable { offered_load: eps });
    }
    let ln_eps = eps.ln();
    let d = p.d as f64;
    let mut pi = vec![1.0];
    // exponent e_1 = 1, e_{i+1} = d*e_i + 1 (so e_i = (d^i - 1)/(d - 1))
    let mut e = 1.0;
    loop {
        let v = (ln_eps * e).exp();
        if v < tail_tol {
            break;
        }
        pi.push(v);
        e = d * e + 1.0;
    }
    let cut = pi.len() - 1;
    // pi_i <= eps^i, so the geometric bound applies with rate eps
    let tail_mass_bound = eps.powi(cut as i32 + 1) / (1.0 - eps);
    Ok(EquilibriumProfile {
        pi,
        epsilon: eps,
        rho: eps,
        tail_tol,
        tail_mass_bound,
        policy: Policy::Jsq,
    })
}
