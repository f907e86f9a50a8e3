//! Model parameters, configuration validation, and derived load quantities.
//!
//! A [`SystemConfig`] describes one switch instance: `n` request queues (one
//! per flow), `m` servers, `d` sampled queues per selection round, and the
//! three exponential rates (arrivals `lambda`, service `mu`, back-off
//! `gamma`). Every other module consumes a [`ValidatedConfig`] or the
//! reduced [`ModelParams`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scheduling policy under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Servers sample `d` queues and serve the longest (the policy under study).
    Slq,
    /// Arriving jobs join the shortest of `d` sampled server queues (baseline).
    Jsq,
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Policy::Slq => write!(f, "slq"),
            Policy::Jsq => write!(f, "jsq"),
        }
    }
}

/// How the `d` queue indices of one sampling round are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Independent uniform draws; matches the analytical model.
    WithReplacement,
    /// Distinct indices; what a physical switch would do. Default.
    WithoutReplacement,
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SamplingMode::WithReplacement => write!(f, "with_replacement"),
            SamplingMode::WithoutReplacement => write!(f, "without_replacement"),
        }
    }
}

/// All model parameters for one system instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of flows (request queues).
    pub n: u32,
    /// Number of servers.
    pub m: u32,
    /// Queues sampled per selection round.
    pub d: u32,
    /// Job arrival rate per flow (jobs/second).
    pub lambda: f64,
    /// Service completion rate per busy server (1/second).
    pub mu: f64,
    /// Re-sampling rate of an idle server (1/second).
    pub gamma: f64,
    pub policy: Policy,
    pub sampling_mode: SamplingMode,
}

/// A constraint violated by a [`SystemConfig`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("n must be positive (got {0})")]
    ZeroFlows(u32),
    #[error("m must be positive (got {0})")]
    ZeroServers(u32),
    #[error("d must be positive (got {0})")]
    ZeroChoices(u32),
    #[error("d = {d} exceeds the number of queues n = {n} under sampling without replacement")]
    ChoicesExceedQueues { d: u32, n: u32 },
    #[error("d = {d} exceeds the number of servers m = {m} for the jsq policy without replacement")]
    ChoicesExceedServers { d: u32, m: u32 },
    #[error("{name} must be a positive finite rate (got {value})")]
    NonPositiveRate { name: &'static str, value: f64 },
}

/// A [`SystemConfig`] that passed [`SystemConfig::validate`].
///
/// Immutable value data; safe to share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    cfg: SystemConfig,
    stability_warning: bool,
}

impl SystemConfig {
    /// Validates every constraint and returns either a validated config or
    /// the complete list of violations.
    ///
    /// A configuration with `lambda/(r*mu) >= 1` is *not* rejected, since
    /// unstable systems are legitimate simulation experiments; it is flagged via
    /// [`ValidatedConfig::stability_warning`]. The equilibrium solver rejects
    /// such configs itself.
    pub fn validate(self) -> Result<ValidatedConfig, Vec<ConfigError>> {
        let mut errors = Vec::new();
        if self.n == 0 {
            errors.push(ConfigError::ZeroFlows(self.n));
        }
        if self.m == 0 {
            errors.push(ConfigError::ZeroServers(self.m));
        }
        if self.d == 0 {
            errors.push(ConfigError::ZeroChoices(self.d));
        }
        if self.sampling_mode == SamplingMode::WithoutReplacement {
            match self.policy {
                Policy::Slq if self.d > self.n => {
                    errors.push(ConfigError::ChoicesExceedQueues { d: self.d, n: self.n });
                }
                Policy::Jsq if self.d > self.m => {
                    errors.push(ConfigError::ChoicesExceedServers { d: self.d, m: self.m });
                }
                _ => {}
            }
        }
        for (name, value) in [
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("gamma", self.gamma),
        ] {
            if !(value.is_finite() && value > 0.0) {
                errors.push(ConfigError::NonPositiveRate { name, value });
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        let r = self.m as f64 / self.n as f64;
        let stability_warning = self.lambda / (r * self.mu) >= 1.0;
        Ok(ValidatedConfig {
            cfg: self,
            stability_warning,
        })
    }
}

impl ValidatedConfig {
    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    /// True when `lambda/(r*mu) >= 1`, i.e. the necessary stability
    /// condition fails and long-run queue sizes are unbounded.
    pub fn stability_warning(&self) -> bool {
        self.stability_warning
    }

    /// Server-to-queue ratio `r = m/n`.
    pub fn r(&self) -> f64 {
        self.cfg.m as f64 / self.cfg.n as f64
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            lambda: self.cfg.lambda,
            mu: self.cfg.mu,
            gamma: self.cfg.gamma,
            r: self.r(),
            d: self.cfg.d,
        }
    }

    pub fn load_summary(&self) -> LoadSummary {
        self.params().load_summary()
    }
}

impl std::ops::Deref for ValidatedConfig {
    type Target = SystemConfig;
    fn deref(&self) -> &SystemConfig {
        &self.cfg
    }
}

/// The parameters the analytical modules actually consume: the three rates,
/// the server-to-queue ratio, and the number of choices. Independent of the
/// finite system size `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    pub r: f64,
    pub d: u32,
}

impl ModelParams {
    /// Offered load `lambda/(r*mu)`; equals the equilibrium busy fraction of
    /// a stable system.
    pub fn offered_load(&self) -> f64 {
        self.lambda / (self.r * self.mu)
    }

    /// The geometric decay rate `rho = lambda / (r*(gamma*(1-eps) + mu*eps))`
    /// with `eps` the offered load: the load experienced by a single queue
    /// under one-choice sampling, and a componentwise upper bound on the
    /// equilibrium tail for every `d >= 1`.
    pub fn selection_load(&self) -> f64 {
        let eps = self.offered_load();
        self.lambda / (self.r * (self.gamma * (1.0 - eps) + self.mu * eps))
    }

    pub fn load_summary(&self) -> LoadSummary {
        LoadSummary {
            r: self.r,
            offered_load: self.offered_load(),
            rho: self.selection_load(),
        }
    }
}

/// Derived load quantities of a validated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSummary {
    /// Server-to-queue ratio `m/n`.
    pub r: f64,
    /// `lambda/(r*mu)`.
    pub offered_load: f64,
    /// `lambda/(r*(gamma*(1-eps) + mu*eps))` with `eps = offered_load`.
    pub rho: f64,
}

/// Deterministic, pure computation of the load summary.
pub fn load_summary(cfg: &ValidatedConfig) -> LoadSummary {
    cfg.load_summary()
}
