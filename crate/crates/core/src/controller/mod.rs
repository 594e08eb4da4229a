//! psi-weighted CBF safety filter.
//!
//! For every unordered pair `(i, j)` the constraint
//! `d/dt h~_ij + kappa h~_ij >= gamma_ij` is linearized in the joint control `u`
//! (the time derivative of the propagation vector is held at zero, or evaluated
//! with the previous control when `freeze_adot` is set) and the minimum-norm
//! control satisfying all pairs is returned.

pub mod qp;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::safety::{self, SafetyParams};
use crate::sysmodel::{AgentMatrix, ControlVector, SystemModel, SystemState};

pub use qp::{solve_qp, Constraint, QpProblem, QpSolution, QpStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSettings {
    /// Fold the propagation-vector rate, evaluated at the previous control, into
    /// the constraint right-hand side.
    pub freeze_adot: bool,
    /// Optional symmetric bound on every control component.
    pub control_bound: Option<f64>,
    /// Primal feasibility tolerance of the QP solver.
    pub solver_tol: f64,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self { freeze_adot: false, control_bound: None, solver_tol: qp::SOLVER_TOL }
    }
}

impl ControllerSettings {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if let Some(b) = self.control_bound {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::Config("controller.control_bound: must be finite and > 0".into()));
            }
        }
        if !(self.solver_tol.is_finite() && self.solver_tol > 0.0) {
            return Err(Error::Config("controller.solver_tol: must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// Builds one `a . u >= b` row per unordered agent pair (plus optional box rows).
pub fn assemble_constraints(
    model: &SystemModel,
    state: &SystemState,
    u_prev: &ControlVector,
    params: &SafetyParams,
    w_bar: f64,
    settings: &ControllerSettings,
) -> QpProblem {
    let cfg = model.config();
    let dynamics = cfg.dynamics;
    let (n_agents, n, m) = (state.n_agents(), state.state_dim(), cfg.control_dim);
    let dim = n_agents * m;
    let mut constraints = Vec::with_capacity(n_agents * (n_agents - 1) / 2);
    let mut pair_labels = Vec::with_capacity(constraints.capacity());

    for i in 0..n_agents {
        for j in i + 1..n_agents {
            let (x_i, x_j) = (state.agent(i), state.agent(j));
            let grad = safety::grad_h_pair(x_i, x_j, params);
            let prop = safety::propagation_vector(x_i, x_j, params);
            let h = safety::h_pair(x_i, x_j, params);

            let weight = params.psi * params.kappa;
            let direction: Vec<f64> = grad.iter().zip(&prop).map(|(g, a)| g + weight * a).collect();
            let mut a = vec![0.0; dim];
            let row_i = dynamics.actuate_transpose(m, &direction);
            let row_j = dynamics.actuate_transpose(m, &direction);
            for k in 0..m {
                a[i * m + k] = row_i[k];
                a[j * m + k] = -row_j[k];
            }

            let (f_i, f_j) = (dynamics.drift_of(x_i), dynamics.drift_of(x_j));
            let drift_term: f64 = grad.iter().zip(f_i.iter().zip(&f_j)).map(|(g, (a, b))| g * (a - b)).sum();
            let gamma =
                if params.robust_margin_enabled { safety::disturbance_margin(x_i, x_j, w_bar, params) } else { 0.0 };
            let mut b = gamma - drift_term - safety::class_k(h, params);

            if settings.freeze_adot && params.psi != 0.0 {
                let gu_i = dynamics.actuate(n, u_prev.agent(i));
                let gu_j = dynamics.actuate(n, u_prev.agent(j));
                let rel_velocity: Vec<f64> = (0..n).map(|k| (f_i[k] + gu_i[k]) - (f_j[k] + gu_j[k])).collect();
                let rate = safety::propagation_rate(x_i, x_j, &rel_velocity, params);
                let du: f64 = rate.iter().zip(gu_i.iter().zip(&gu_j)).map(|(r, (a, b))| r * (a - b)).sum();
                b -= params.psi * du;
            }

            constraints.push(Constraint { a, b });
            pair_labels.push((i, j));
        }
    }

    if let Some(bound) = settings.control_bound {
        for k in 0..dim {
            for sign in [1.0, -1.0] {
                let mut a = vec![0.0; dim];
                a[k] = sign;
                constraints.push(Constraint { a, b: -bound });
            }
        }
    }

    QpProblem { dim, constraints, pair_labels }
}

/// Assembles and solves the safety-filter QP, returning the joint control.
pub fn control_step(
    model: &SystemModel,
    state: &SystemState,
    u_prev: &ControlVector,
    params: &SafetyParams,
    w_bar: f64,
    settings: &ControllerSettings,
) -> Result<(ControlVector, QpSolution)> {
    let problem = assemble_constraints(model, state, u_prev, params, w_bar, settings);
    let solution = solve_qp(&problem, settings.solver_tol)?;
    let u = AgentMatrix::from_flat(state.n_agents(), model.config().control_dim, solution.u_star.clone())?;
    Ok((ControlVector::new(u)?, solution))
}
