//! Safety certification for closed-loop multi-agent systems.
//!
//! A psi-weighted control-barrier-function QP filters the joint control of N agents,
//! seeded Monte Carlo rollouts run the closed loop under bounded noise, and the
//! resulting margin scores are turned into distribution-free violation bounds
//! (empirical Bernstein, Hoeffding, scenario) next to an analytic certificate.

pub mod bounds;
pub mod cli;
pub mod controller;
pub mod error;
pub mod rollout;
pub mod safety;
pub mod sysmodel;

pub use bounds::{CertificateReport, GroupStats};
pub use controller::{control_step, solve_qp, ControllerSettings, QpProblem, QpSolution, QpStatus};
pub use error::{Error, Result};
pub use rollout::{run_experiment, run_group, run_rollout, ExperimentConfig, GroupRecord, RolloutRecord};
pub use safety::SafetyParams;
pub use sysmodel::{ControlVector, DisturbanceSample, SystemConfig, SystemModel, SystemState};
