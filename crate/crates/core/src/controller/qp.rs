//! Minimum-norm quadratic program
//!
//! ```text
//!     minimize     |u|^2
//!     subject to   a_k . u >= b_k,   k = 0..K
//! ```
//!
//! solved with the Goldfarb-Idnani dual active-set method specialised to an identity
//! Hessian. Starting from the unconstrained optimum `u = 0`, the most violated
//! constraint is added and the iterate moves along the projection of its normal onto
//! the orthogonal complement of the active normals, dropping active constraints whose
//! multiplier would turn negative. Each step is exact, so the method terminates in a
//! finite number of changes to the active set and detects infeasibility through an
//! unbounded dual step.
//!
//! Infeasible problems are re-solved with a shared slack `s >= 0`,
//! `min |u|^2 + rho s^2` subject to `a_k . u >= b_k - s`, which is again an
//! identity-Hessian QP in the scaled variable `(u, sqrt(rho) s)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Penalty on the shared slack in the relaxed problem.
pub const RELAXATION_PENALTY: f64 = 1e6;
/// Constraints with `|a.u - b|` at most this are reported as active.
pub const ACTIVE_TOL: f64 = 1e-7;
/// Default primal feasibility tolerance.
pub const SOLVER_TOL: f64 = 1e-9;

/// `a . u >= b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub dim: usize,
    pub constraints: Vec<Constraint>,
    /// Agent pair behind each of the leading pairwise constraints. Box constraints,
    /// when present, follow the pairwise ones and have no label.
    pub pair_labels: Vec<(usize, usize)>,
}

impl QpProblem {
    pub fn new(dim: usize, constraints: Vec<Constraint>) -> Self {
        Self { dim, constraints, pair_labels: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    InfeasibleRelaxed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub u_star: Vec<f64>,
    /// Constraints with `|a.u - b| <= ACTIVE_TOL` (relative to `b - s` when relaxed).
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    /// Shared slack of the relaxed problem; zero when optimal.
    pub slack_used: f64,
    /// Multipliers with `u* = sum_k duals[k] * a_k` (for the relaxed problem when
    /// the status is `InfeasibleRelaxed`).
    pub duals: Vec<f64>,
}

impl QpSolution {
    pub fn objective(&self) -> f64 {
        self.u_star.iter().map(|v| v * v).sum()
    }
}

enum Outcome {
    Solved { x: Vec<f64>, duals: Vec<f64> },
    Infeasible,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_inputs(problem: &QpProblem) -> Result<()> {
    for (k, c) in problem.constraints.iter().enumerate() {
        if c.a.len() != problem.dim {
            return Err(Error::SolverInput(format!(
                "constraint {k} has {} coefficients, expected {}",
                c.a.len(),
                problem.dim
            )));
        }
        if !c.b.is_finite() || c.a.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverInput(format!("constraint {k} has non-finite data")));
        }
    }
    Ok(())
}

/// Dual active-set iteration for `min 1/2 |x|^2  s.t.  a_k . x >= b_k`.
fn dual_active_set(dim: usize, constraints: &[Constraint], tol: f64) -> Result<Outcome> {
    let m = constraints.len();
    let norms: Vec<f64> = constraints.iter().map(|c| dot(&c.a, &c.a).sqrt()).collect();
    let mut x = vec![0.0; dim];
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let max_iter = 50 * (m + dim) + 100;
    let mut iter = 0;

    loop {
        // Most violated constraint, measured in distance to its half-space.
        let mut pick: Option<(usize, f64)> = None;
        for (k, c) in constraints.iter().enumerate() {
            if active.contains(&k) {
                continue;
            }
            let gap = c.b - dot(&c.a, &x);
            if gap <= tol {
                continue;
            }
            if norms[k] == 0.0 {
                return Ok(Outcome::Infeasible);
            }
            let score = gap / norms[k];
            if pick.is_none_or(|(_, best)| score > best) {
                pick = Some((k, score));
            }
        }
        let Some((p, _)) = pick else {
            let mut duals = vec![0.0; m];
            for (&k, &l) in active.iter().zip(&lambda) {
                duals[k] = l;
            }
            return Ok(Outcome::Solved { x, duals });
        };

        let a_p = &constraints[p].a;
        let mut lambda_p = 0.0;
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(Error::Solver(format!("dual active-set iteration did not converge in {max_iter} steps")));
            }
            // r = (N^T N)^{-1} N^T a_p, z = a_p - N r.
            let (r, z) = if active.is_empty() {
                (Vec::new(), a_p.clone())
            } else {
                let q = active.len();
                let n = DMatrix::from_fn(dim, q, |row, col| constraints[active[col]].a[row]);
                let gram = n.transpose() * &n;
                let rhs = n.transpose() * DVector::from_column_slice(a_p);
                let r = match gram.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => {
                        gram.lu().solve(&rhs).ok_or_else(|| Error::Solver("singular active-set Gram matrix".into()))?
                    }
                };
                let z = DVector::from_column_slice(a_p) - &n * &r;
                (r.iter().copied().collect(), z.iter().copied().collect())
            };

            let zz = dot(&z, &z);
            let full_step =
                if zz > 1e-14 * norms[p] * norms[p] { (constraints[p].b - dot(a_p, &x)) / zz } else { f64::INFINITY };
            let mut partial: Option<(usize, f64)> = None;
            for (idx, (&rk, &lk)) in r.iter().zip(&lambda).enumerate() {
                if rk > 0.0 {
                    let t = lk / rk;
                    if partial.is_none_or(|(_, best)| t < best) {
                        partial = Some((idx, t));
                    }
                }
            }

            match partial {
                None if full_step.is_infinite() => return Ok(Outcome::Infeasible),
                Some((drop, t)) if t < full_step => {
                    if full_step.is_finite() {
                        x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += t * zi);
                    }
                    lambda.iter_mut().zip(&r).for_each(|(l, rk)| *l -= t * rk);
                    lambda_p += t;
                    active.remove(drop);
                    lambda.remove(drop);
                }
                _ => {
                    let t = full_step;
                    x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += t * zi);
                    lambda.iter_mut().zip(&r).for_each(|(l, rk)| *l -= t * rk);
                    lambda_p += t;
                    active.push(p);
                    lambda.push(lambda_p);
                    break;
                }
            }
        }
        lambda.iter_mut().for_each(|l| *l = l.max(0.0));
    }
}

fn active_indices(constraints: &[Constraint], u: &[f64], shift: f64) -> Vec<usize> {
    constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| (dot(&c.a, u) - (c.b - shift)).abs() <= ACTIVE_TOL)
        .map(|(k, _)| k)
        .collect()
}

/// Minimizes `|u|^2` subject to the problem's constraints; see the module docs.
pub fn solve_qp(problem: &QpProblem, tol: f64) -> Result<QpSolution> {
    check_inputs(problem)?;
    let dim = problem.dim;
    match dual_active_set(dim, &problem.constraints, tol)? {
        Outcome::Solved { x, duals } => Ok(QpSolution {
            active_set: active_indices(&problem.constraints, &x, 0.0),
            u_star: x,
            status: QpStatus::Optimal,
            slack_used: 0.0,
            duals,
        }),
        Outcome::Infeasible => solve_relaxed(problem, tol),
    }
}

fn solve_relaxed(problem: &QpProblem, tol: f64) -> Result<QpSolution> {
    let dim = problem.dim;
    let scale = 1.0 / RELAXATION_PENALTY.sqrt();
    let mut relaxed: Vec<Constraint> = problem
        .constraints
        .iter()
        .map(|c| {
            let mut a = c.a.clone();
            a.push(scale);
            Constraint { a, b: c.b }
        })
        .collect();
    let mut nonneg = vec![0.0; dim + 1];
    nonneg[dim] = 1.0;
    relaxed.push(Constraint { a: nonneg, b: 0.0 });

    match dual_active_set(dim + 1, &relaxed, tol)? {
        Outcome::Solved { x, mut duals } => {
            let slack = (x[dim] * scale).max(0.0);
            let u = x[..dim].to_vec();
            duals.truncate(problem.constraints.len());
            Ok(QpSolution {
                active_set: active_indices(&problem.constraints, &u, slack),
                u_star: u,
                status: QpStatus::InfeasibleRelaxed,
                slack_used: slack,
                duals,
            })
        }
        Outcome::Infeasible => Err(Error::Solver("relaxed problem reported infeasible".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(a: &[f64], b: f64) -> Constraint {
        Constraint { a: a.to_vec(), b }
    }

    fn solve(dim: usize, cs: Vec<Constraint>) -> QpSolution {
        solve_qp(&QpProblem::new(dim, cs), SOLVER_TOL).unwrap()
    }

    #[test]
    fn inactive_constraints_give_zero() {
        let s = solve(2, vec![c(&[1.0, 0.0], -1.0), c(&[0.0, 3.0], 0.0)]);
        assert_eq!(s.u_star, vec![0.0, 0.0]);
        assert_eq!(s.status, QpStatus::Optimal);
    }

    #[test]
    fn single_constraint_closed_form() {
        let s = solve(2, vec![c(&[1.0, 0.0], 2.0)]);
        assert_eq!(s.u_star, vec![2.0, 0.0]);
        assert_eq!(s.active_set, vec![0]);
        assert!((s.duals[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_separable_constraints() {
        let s = solve(2, vec![c(&[1.0, 0.0], 1.0), c(&[0.0, 1.0], 1.0)]);
        assert!((s.u_star[0] - 1.0).abs() < 1e-12 && (s.u_star[1] - 1.0).abs() < 1e-12);
        assert_eq!(s.active_set, vec![0, 1]);
    }

    #[test]
    fn contradictory_constraints_are_relaxed() {
        let s = solve(2, vec![c(&[1.0, 0.0], 1.0), c(&[-1.0, 0.0], 1.0)]);
        assert_eq!(s.status, QpStatus::InfeasibleRelaxed);
        assert!(s.u_star.iter().all(|v| v.abs() < 1e-9));
        assert!((s.slack_used - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_row_with_positive_rhs_is_infeasible() {
        let s = solve(2, vec![c(&[0.0, 0.0], 0.5), c(&[1.0, 0.0], 1.0)]);
        assert_eq!(s.status, QpStatus::InfeasibleRelaxed);
        assert!((s.slack_used - 0.5).abs() < 1e-6);
    }

    #[test]
    fn zero_row_with_nonpositive_rhs_is_vacuous() {
        let s = solve(2, vec![c(&[0.0, 0.0], -0.5), c(&[1.0, 0.0], 1.0)]);
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.u_star[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropping_constraint_path() {
        // Second constraint makes the first one redundant at the optimum.
        let s = solve(2, vec![c(&[1.0, 0.0], 1.0), c(&[1.0, 1.0], 4.0)]);
        assert!((s.u_star[0] - 2.0).abs() < 1e-12 && (s.u_star[1] - 2.0).abs() < 1e-12);
        assert_eq!(s.duals[0], 0.0);
        assert_eq!(s.active_set, vec![1]);
    }

    #[test]
    fn degenerate_duplicate_constraints() {
        let s = solve(2, vec![c(&[1.0, 1.0], 2.0), c(&[2.0, 2.0], 4.0), c(&[1.0, 1.0], 2.0)]);
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.u_star[0] - 1.0).abs() < 1e-12 && (s.u_star[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_input_rejected() {
        let p = QpProblem::new(2, vec![c(&[f64::NAN, 0.0], 1.0)]);
        assert!(matches!(solve_qp(&p, SOLVER_TOL), Err(Error::SolverInput(_))));
        let p = QpProblem::new(2, vec![c(&[1.0, 0.0], f64::INFINITY)]);
        assert!(matches!(solve_qp(&p, SOLVER_TOL), Err(Error::SolverInput(_))));
        let p = QpProblem::new(3, vec![c(&[1.0, 0.0], 1.0)]);
        assert!(matches!(solve_qp(&p, SOLVER_TOL), Err(Error::SolverInput(_))));
    }

    fn problem() -> impl Strategy<Value = (usize, Vec<Constraint>)> {
        (1usize..=6).prop_flat_map(|dim| {
            let cons = prop::collection::vec(
                (prop::collection::vec(-3.0f64..3.0, dim), -3.0f64..3.0).prop_map(|(a, b)| Constraint { a, b }),
                0..8,
            );
            (Just(dim), cons)
        })
    }

    proptest! {
        #[test]
        fn kkt_conditions_hold((dim, cs) in problem()) {
            let p = QpProblem::new(dim, cs.clone());
            let s = solve_qp(&p, SOLVER_TOL).unwrap();
            if s.status == QpStatus::Optimal {
                for (k, con) in cs.iter().enumerate() {
                    let slack = dot(&con.a, &s.u_star) - con.b;
                    prop_assert!(slack >= -1e-8);
                    prop_assert!(s.duals[k] >= 0.0);
                    prop_assert!((s.duals[k] * slack).abs() <= 1e-6);
                }
                for d in 0..dim {
                    let recon: f64 = cs.iter().zip(&s.duals).map(|(con, l)| l * con.a[d]).sum();
                    prop_assert!((recon - s.u_star[d]).abs() <= 1e-6);
                }
            } else {
                prop_assert!(s.slack_used > 0.0);
                for con in &cs {
                    prop_assert!(dot(&con.a, &s.u_star) >= con.b - s.slack_used - 1e-7);
                }
            }
        }

        #[test]
        fn scaling_constraints_leaves_solution((dim, cs) in problem(), scale in 0.1f64..10.0) {
            let s1 = solve_qp(&QpProblem::new(dim, cs.clone()), SOLVER_TOL).unwrap();
            let scaled = cs.iter().map(|con| Constraint {
                a: con.a.iter().map(|v| v * scale).collect(),
                b: con.b * scale,
            }).collect();
            let s2 = solve_qp(&QpProblem::new(dim, scaled), SOLVER_TOL).unwrap();
            prop_assume!(s1.status == QpStatus::Optimal);
            prop_assert_eq!(s2.status, QpStatus::Optimal);
            for (a, b) in s1.u_star.iter().zip(&s2.u_star) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }
}
