//! Seeded Monte Carlo rollouts of the closed loop and margin-aware scoring.
//!
//! A rollout draws a safe initial configuration, then alternates
//! `control_step -> sample_noise -> step` for `horizon_steps` steps while tracking
//! the smallest psi-weighted margin (at the applied controls) and the smallest
//! inter-agent distance. Scores are normalized per group in a second pass, once the
//! largest non-violated margin of the group is known.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::controller::{control_step, ControllerSettings, QpStatus};
use crate::error::{Error, Result};
use crate::safety::{self, SafetyParams};
use crate::sysmodel::{self, ControlVector, SystemConfig, SystemModel, SystemState};

/// Parameter grids for the table reproductions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub table1_noise_bounds: Vec<f64>,
    pub table1_agent_counts: Vec<usize>,
    pub psi_values: Vec<f64>,
    pub psi_agent_counts: Vec<usize>,
    pub psi_noise_bound: f64,
    /// Rollouts per psi value; they form a single normalization group.
    pub psi_rollouts: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            table1_noise_bounds: vec![0.01, 0.03, 0.05],
            table1_agent_counts: vec![2, 3],
            psi_values: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            psi_agent_counts: vec![2, 3],
            psi_noise_bound: 0.03,
            psi_rollouts: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of independent groups.
    pub groups: usize,
    /// Rollouts per group P (>= 2).
    pub rollouts_per_group: usize,
    /// Violation threshold on the normalized margin score, in (0, 1).
    pub theta: f64,
    /// Confidence parameter of the bounds, in (0, 1).
    pub delta: f64,
    pub base_seed: u64,
    /// Minimum psi-weighted margin required of accepted initial states.
    pub h_min: f64,
    /// Floor on the score normalizer.
    pub eps_norm: f64,
    /// Scores within this distance of the group minimum count as support constraints.
    pub support_tol: f64,
    pub system: SystemConfig,
    pub safety: SafetyParams,
    pub controller: ControllerSettings,
    pub sweeps: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            groups: 100,
            rollouts_per_group: 50,
            theta: 0.1,
            delta: 0.1,
            base_seed: 20_240_601,
            h_min: 0.05,
            eps_norm: 1e-9,
            support_tol: 1e-12,
            system: SystemConfig::default(),
            safety: SafetyParams::default(),
            controller: ControllerSettings::default(),
            sweeps: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta: {} is not in (0, 1)", self.theta));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta: {} is not in (0, 1)", self.delta));
        }
        if self.rollouts_per_group < 2 {
            return bad("rollouts_per_group: must be at least 2".into());
        }
        if !(self.h_min.is_finite() && self.h_min >= 0.0) {
            return bad("h_min: must be finite and >= 0".into());
        }
        if !(self.eps_norm.is_finite() && self.eps_norm > 0.0) {
            return bad("eps_norm: must be finite and > 0".into());
        }
        if !(self.support_tol.is_finite() && self.support_tol >= 0.0) {
            return bad("support_tol: must be finite and >= 0".into());
        }
        self.system.validate()?;
        self.safety.validate()?;
        self.controller.validate()?;
        if self.system.min_initial_separation < self.safety.d_min {
            return bad(format!(
                "system.min_initial_separation: {} is below safety.d_min {}; initial states would be unsafe",
                self.system.min_initial_separation, self.safety.d_min
            ));
        }
        let s = &self.sweeps;
        if s.table1_noise_bounds.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("sweeps.table1_noise_bounds: entries must be finite and >= 0".into());
        }
        if s.table1_agent_counts.iter().chain(&s.psi_agent_counts).any(|&n| n < 2) {
            return bad("sweeps: agent counts must be at least 2".into());
        }
        if s.psi_values.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("sweeps.psi_values: entries must be finite and >= 0".into());
        }
        if !(s.psi_noise_bound.is_finite() && s.psi_noise_bound >= 0.0) {
            return bad("sweeps.psi_noise_bound: must be finite and >= 0".into());
        }
        if s.psi_rollouts < 2 {
            return bad("sweeps.psi_rollouts: must be at least 2".into());
        }
        Ok(())
    }

    /// Seed of rollout `p` in group `group_index`.
    pub fn rollout_seed(&self, group_index: usize, p: usize) -> u64 {
        self.base_seed
            .wrapping_add((group_index as u64).wrapping_mul(self.rollouts_per_group as u64))
            .wrapping_add(p as u64)
    }
}

/// One row of an optional trajectory dump.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub agent: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Smallest psi-weighted margin over the pairs involving this agent.
    pub min_pair_margin: f64,
}

/// Verdict of one rollout.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RolloutRecord {
    pub seed: u64,
    /// Smallest psi-weighted margin over all steps and pairs.
    pub raw_min_margin: f64,
    /// Some psi-weighted margin went negative.
    pub violated: bool,
    pub min_distance: f64,
    pub infeasible_steps: usize,
    /// Smallest psi-weighted margin at t = 0.
    pub initial_min_margin: f64,
    /// Largest per-agent control norm applied.
    pub max_control_norm: f64,
    #[serde(skip)]
    pub trajectory: Option<Vec<TrajectoryRow>>,
}

/// Margins of every pair at the applied controls: `(global min, per-agent min)`.
fn margins_at(model: &SystemModel, state: &SystemState, u: &ControlVector, params: &SafetyParams) -> (f64, Vec<f64>) {
    let n = state.state_dim();
    let dynamics = model.dynamics();
    let agents = state.n_agents();
    let gu: Vec<Vec<f64>> = (0..agents).map(|i| dynamics.actuate(n, u.agent(i))).collect();
    let mut per_agent = vec![f64::INFINITY; agents];
    let mut global = f64::INFINITY;
    for i in 0..agents {
        for j in i + 1..agents {
            let v = safety::psi_safety(state.agent(i), state.agent(j), &gu[i], &gu[j], params);
            global = global.min(v);
            per_agent[i] = per_agent[i].min(v);
            per_agent[j] = per_agent[j].min(v);
        }
    }
    (global, per_agent)
}

/// Simulates one closed-loop rollout; fully determined by `(config, seed)`.
pub fn run_rollout(config: &ExperimentConfig, seed: u64, record_trajectory: bool) -> Result<RolloutRecord> {
    let model = SystemModel::new(config.system.clone())?;
    let params = &config.safety;
    let settings = &config.controller;
    let w_bar = config.system.noise_bound;
    let (agents, m) = (config.system.n_agents, config.system.control_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Initial state must satisfy every psi-weighted margin >= h_min at the control
    // the filter would apply there.
    let zero = ControlVector::zeros(agents, m);
    let mut accepted = None;
    for _ in 0..sysmodel::MAX_REJECTION_ROUNDS {
        let x0 = model.sample_initial_state(&mut rng)?;
        let (u0, sol) = control_step(&model, &x0, &zero, params, w_bar, settings)?;
        let (margin, _) = margins_at(&model, &x0, &u0, params);
        if margin >= config.h_min {
            accepted = Some((x0, u0, sol.status));
            break;
        }
    }
    let Some((mut state, mut u, mut status)) = accepted else {
        return Err(Error::Setup(format!(
            "no initial state with margin >= {} after {} rounds",
            config.h_min,
            sysmodel::MAX_REJECTION_ROUNDS
        )));
    };

    let mut record = RolloutRecord {
        seed,
        raw_min_margin: f64::INFINITY,
        violated: false,
        min_distance: f64::INFINITY,
        infeasible_steps: 0,
        initial_min_margin: f64::NAN,
        max_control_norm: 0.0,
        trajectory: record_trajectory.then(Vec::new),
    };

    let steps = config.system.horizon_steps;
    for k in 0..=steps {
        if k > 0 {
            let (next_u, sol) = control_step(&model, &state, &u, params, w_bar, settings)?;
            u = next_u;
            status = sol.status;
        }
        if status == QpStatus::InfeasibleRelaxed {
            record.infeasible_steps += 1;
        }
        let (margin, per_agent) = margins_at(&model, &state, &u, params);
        if k == 0 {
            record.initial_min_margin = margin;
        }
        record.raw_min_margin = record.raw_min_margin.min(margin);
        record.min_distance = record.min_distance.min(sysmodel::min_pairwise_distance(state.matrix()));
        record.max_control_norm = record.max_control_norm.max(u.max_agent_norm());
        if let Some(rows) = record.trajectory.as_mut() {
            for (i, &pm) in per_agent.iter().enumerate() {
                rows.push(TrajectoryRow {
                    t: state.time(),
                    agent: i,
                    x: state.agent(i).to_vec(),
                    u: u.agent(i).to_vec(),
                    min_pair_margin: pm,
                });
            }
        }
        if k < steps {
            let w = model.sample_noise(&mut rng);
            state = model.step(&state, &u, &w, config.system.dt)?;
        }
    }
    record.violated = record.raw_min_margin < 0.0;
    Ok(record)
}

/// Normalized scores of one group.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginScores {
    pub z_scores: Vec<f64>,
    pub x_flags: Vec<bool>,
    pub h_tilde_max: f64,
}

/// Two-pass normalization: `h_max` is the largest raw margin among non-violated
/// rollouts (0 if all violated); `Z_p = 0` for violated rollouts, otherwise
/// `raw / max(h_max, eps_norm)` clamped to `[0, 1]`; `X_p = [Z_p < theta]`.
pub fn margin_scores(group: &[RolloutRecord], theta: f64, eps_norm: f64) -> MarginScores {
    let h_tilde_max = group.iter().filter(|r| !r.violated).map(|r| r.raw_min_margin).fold(0.0, f64::max);
    let denom = h_tilde_max.max(eps_norm);
    let z_scores: Vec<f64> =
        group.iter().map(|r| if r.violated { 0.0 } else { (r.raw_min_margin / denom).clamp(0.0, 1.0) }).collect();
    let x_flags = z_scores.iter().map(|&z| z < theta).collect();
    MarginScores { z_scores, x_flags, h_tilde_max }
}

/// Rollouts of one group together with their scores.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupRecord {
    pub group_index: usize,
    pub rollouts: Vec<RolloutRecord>,
    pub z_scores: Vec<f64>,
    pub x_flags: Vec<bool>,
    pub h_tilde_max: f64,
    pub theta: f64,
}

impl GroupRecord {
    pub fn from_rollouts(group_index: usize, rollouts: Vec<RolloutRecord>, theta: f64, eps_norm: f64) -> Self {
        let scores = margin_scores(&rollouts, theta, eps_norm);
        Self {
            group_index,
            rollouts,
            z_scores: scores.z_scores,
            x_flags: scores.x_flags,
            h_tilde_max: scores.h_tilde_max,
            theta,
        }
    }
}

/// Runs the P rollouts of one group. Rollouts run on the current rayon pool; the
/// result is independent of the number of workers.
pub fn run_group(config: &ExperimentConfig, group_index: usize, record_trajectories: bool) -> Result<GroupRecord> {
    config.validate()?;
    let rollouts = (0..config.rollouts_per_group)
        .into_par_iter()
        .map(|p| run_rollout(config, config.rollout_seed(group_index, p), record_trajectories))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupRecord::from_rollouts(group_index, rollouts, config.theta, config.eps_norm))
}

/// Runs every group of the experiment, parallel over all rollouts.
pub fn run_experiment(config: &ExperimentConfig, record_trajectories: bool) -> Result<Vec<GroupRecord>> {
    config.validate()?;
    let per_group = config.rollouts_per_group;
    let mut all = (0..config.groups * per_group)
        .into_par_iter()
        .map(|idx| run_rollout(config, config.rollout_seed(idx / per_group, idx % per_group), record_trajectories))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    Ok((0..config.groups)
        .map(|g| {
            let rollouts: Vec<_> = all.by_ref().take(per_group).collect();
            GroupRecord::from_rollouts(g, rollouts, config.theta, config.eps_norm)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(raw: f64) -> RolloutRecord {
        RolloutRecord {
            seed: 0,
            raw_min_margin: raw,
            violated: raw < 0.0,
            min_distance: 1.0,
            infeasible_steps: 0,
            initial_min_margin: raw,
            max_control_norm: 0.0,
            trajectory: None,
        }
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            groups: 2,
            rollouts_per_group: 4,
            system: SystemConfig { horizon_steps: 10, ..SystemConfig::default() },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn scores_hand_example() {
        let s = margin_scores(&[record(2.0), record(1.0), record(-0.5)], 0.1, 1e-9);
        assert_eq!(s.h_tilde_max, 2.0);
        assert_eq!(s.z_scores, vec![1.0, 0.5, 0.0]);
        assert_eq!(s.x_flags, vec![false, false, true]);
    }

    #[test]
    fn all_violated_scores_zero() {
        let s = margin_scores(&[record(-1.0), record(-0.1)], 0.1, 1e-9);
        assert_eq!(s.h_tilde_max, 0.0);
        assert_eq!(s.z_scores, vec![0.0, 0.0]);
        assert_eq!(s.x_flags, vec![true, true]);
    }

    #[test]
    fn single_rollout_self_normalizes() {
        let s = margin_scores(&[record(0.7)], 0.1, 1e-9);
        assert_eq!(s.z_scores, vec![1.0]);
    }

    #[test]
    fn noise_free_far_apart_rollout_keeps_initial_margin() {
        let config = ExperimentConfig {
            system: SystemConfig { noise_bound: 0.0, ..SystemConfig::default() },
            ..ExperimentConfig::default()
        };
        for seed in 0..20 {
            let r = run_rollout(&config, seed, false).unwrap();
            if r.initial_min_margin > 5.0 {
                assert!(!r.violated);
                assert_eq!(r.raw_min_margin, r.initial_min_margin);
                assert_eq!(r.max_control_norm, 0.0);
            }
        }
    }

    #[test]
    fn rollout_is_deterministic() {
        let config = ExperimentConfig::default();
        let a = run_rollout(&config, 1234, true).unwrap();
        let b = run_rollout(&config, 1234, true).unwrap();
        assert_eq!(a, b);
        let c = run_rollout(&config, 1235, false).unwrap();
        assert_ne!(a.raw_min_margin, c.raw_min_margin);
    }

    #[test]
    fn trajectory_has_one_row_per_agent_and_step() {
        let config = small_config();
        let r = run_rollout(&config, 3, true).unwrap();
        let rows = r.trajectory.unwrap();
        assert_eq!(rows.len(), 2 * (10 + 1));
        assert!((rows.last().unwrap().t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rollout_invariants() {
        let config = small_config();
        for seed in 0..10 {
            let r = run_rollout(&config, seed, false).unwrap();
            assert_eq!(r.violated, r.raw_min_margin < 0.0);
            assert!(r.min_distance >= 0.0);
            assert!(r.initial_min_margin >= config.h_min);
        }
    }

    #[test]
    fn group_seeds_and_experiment_agree() {
        let config = small_config();
        let groups = run_experiment(&config, false).unwrap();
        assert_eq!(groups.len(), 2);
        let g1 = run_group(&config, 1, false).unwrap();
        assert_eq!(groups[1], g1);
        assert_eq!(g1.rollouts[2].seed, config.base_seed + 4 + 2);
    }

    #[test]
    fn zero_groups_is_empty() {
        let config = ExperimentConfig { groups: 0, ..small_config() };
        assert!(run_experiment(&config, false).unwrap().is_empty());
    }

    #[test]
    fn parallel_and_serial_agree() {
        let config = small_config();
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = serial.install(|| run_group(&config, 0, false)).unwrap();
        let b = wide.install(|| run_group(&config, 0, false)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig { theta: 1.5, ..ExperimentConfig::default() }.validate().is_err());
        assert!(ExperimentConfig { delta: 0.0, ..ExperimentConfig::default() }.validate().is_err());
        assert!(ExperimentConfig { rollouts_per_group: 1, ..ExperimentConfig::default() }.validate().is_err());
        let crowded = ExperimentConfig {
            system: SystemConfig { min_initial_separation: 0.5, ..SystemConfig::default() },
            ..ExperimentConfig::default()
        };
        assert!(crowded.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn score_properties(raws in prop::collection::vec(-2.0f64..50.0, 1..60), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
            let group: Vec<_> = raws.iter().map(|&r| record(r)).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = margin_scores(&group, lo, 1e-9);
            let b = margin_scores(&group, hi, 1e-9);
            for (k, &z) in a.z_scores.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(&z));
                prop_assert_eq!(a.x_flags[k], z < lo);
                if group[k].violated {
                    prop_assert_eq!(z, 0.0);
                }
            }
            let count = |flags: &[bool]| flags.iter().filter(|&&f| f).count();
            prop_assert!(count(&a.x_flags) <= count(&b.x_flags));
        }
    }
}
