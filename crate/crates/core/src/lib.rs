//! slqsim: queueing analysis toolkit for an entanglement generation switch
//! whose servers sample `d` request queues at random and serve the longest.
//!
//! The crate combines four ways of computing the same performance numbers so
//! they can be cross-validated against each other:
//!
//! * [`sim`]: an event-driven stochastic simulation of the finite system,
//!   plus the classical join-the-shortest-of-d baseline;
//! * [`meanfield`]: numerical integration of the large-system ODE limit;
//! * [`equilibrium`]: the closed-form/recursive fixed point of those ODEs
//!   and response-time predictions derived from it via Little's law;
//! * [`oracle`]: exact stationary analysis of small truncated instances via
//!   their continuous-time Markov chain, used as brute-force ground truth.
//!
//! [`metrics`] holds the streaming statistics shared by the simulators and
//! [`cli`] the command-line front end (`run`, `sweep`, `verify`,
//! `trajectory`).

pub mod cli;
pub mod config;
pub mod equilibrium;
pub mod meanfield;
pub mod metrics;
pub mod oracle;
pub mod sim;

pub use config::{LoadSummary, ModelParams, Policy, SamplingMode, SystemConfig, ValidatedConfig};
pub use equilibrium::EquilibriumProfile;
pub use meanfield::MeanFieldState;
pub use metrics::MetricsReport;
pub use sim::SimOutput;
