//! Empirical violation statistics and the bounds certified from them.
//!
//! Slack values follow the per-group reporting convention: `eps_*` excludes the
//! empirical rate, so the full upper bound is `p_hat + eps_*`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rollout::{ExperimentConfig, GroupRecord};

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("delta {delta} is not in (0, 1)")))
    }
}

/// Fraction of raised flags.
pub fn empirical_mean(x_flags: &[bool]) -> Result<f64> {
    if x_flags.is_empty() {
        return Err(Error::InvalidInput("empirical mean of an empty sequence".into()));
    }
    Ok(x_flags.iter().filter(|&&x| x).count() as f64 / x_flags.len() as f64)
}

/// `1/(P(P-1)) * sum_{i<j} (X_i - X_j)^2`.
///
/// For binary data with `k` ones exactly `k (P - k)` pairs disagree, so this is
/// `k (P - k) / (P (P - 1))`, which is also the unbiased sample variance.
pub fn pairwise_variance(x_flags: &[bool]) -> Result<f64> {
    let p = x_flags.len();
    if p < 2 {
        return Err(Error::InvalidInput(format!("pairwise variance needs P >= 2, got {p}")));
    }
    let k = x_flags.iter().filter(|&&x| x).count();
    Ok((k * (p - k)) as f64 / (p * (p - 1)) as f64)
}

/// Slack of the empirical Bernstein bound:
/// `sqrt(2 sigma2 ln(2/delta) / P) + 7 ln(2/delta) / (3 (P - 1))`.
pub fn bernstein_slack(sigma2_hat: f64, p: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if p < 2 {
        return Err(Error::InvalidInput(format!("Bernstein bound needs P >= 2, got {p}")));
    }
    if !(sigma2_hat >= 0.0) {
        return Err(Error::InvalidInput(format!("variance {sigma2_hat} is negative")));
    }
    let log_term = (2.0 / delta).ln();
    let p = p as f64;
    Ok((2.0 * sigma2_hat * log_term / p).sqrt() + 7.0 * log_term / (3.0 * (p - 1.0)))
}

/// Full empirical Bernstein upper bound `p_hat + bernstein_slack`.
pub fn bernstein_bound(p_hat: f64, sigma2_hat: f64, p: usize, delta: f64) -> Result<f64> {
    Ok(p_hat + bernstein_slack(sigma2_hat, p, delta)?)
}

/// Hoeffding slack `sqrt(ln(2/delta) / (2P))`.
pub fn hoeffding_bound(p: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if p < 1 {
        return Err(Error::InvalidInput("Hoeffding bound needs P >= 1".into()));
    }
    Ok(((2.0 / delta).ln() / (2.0 * p as f64)).sqrt())
}

/// Scenario slack `(d + ln(1/delta)) / P`. Values above one are vacuous but
/// returned as computed.
pub fn scenario_bound(d_support: usize, p: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if p < 1 || d_support > p {
        return Err(Error::InvalidInput(format!("need 0 <= d ({d_support}) <= P ({p}) and P >= 1")));
    }
    Ok((d_support as f64 + (1.0 / delta).ln()) / p as f64)
}

/// Number of scores within `tol_support` of the group minimum, minus one.
pub fn count_support(z_scores: &[f64], tol_support: f64) -> Result<usize> {
    let min = z_scores.iter().copied().fold(f64::INFINITY, f64::min);
    if z_scores.is_empty() {
        return Err(Error::InvalidInput("support count of an empty group".into()));
    }
    Ok(z_scores.iter().filter(|&&z| z - min <= tol_support).count() - 1)
}

/// Inputs of the analytic (pre-simulation) certificate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalyticBoundInputs {
    /// Minimum initial margin.
    pub h_min: f64,
    /// Number of discrete steps.
    pub k_steps: usize,
    /// Per-step increment variance bound.
    pub sigma2_step: f64,
    /// Per-step increment magnitude bound.
    pub c_increment: f64,
    pub n_pairs: usize,
}

/// `sup |grad h|` over a square (hypercube) domain of the given side:
/// the largest separation is `side * sqrt(dim)` and `|grad h| = 2 |dx|`.
pub fn sup_grad_norm(domain_side: f64, position_dim: usize) -> f64 {
    2.0 * domain_side * (position_dim as f64).sqrt()
}

/// Per-step variance bound `4 w_bar^2 sup|grad h|^2 dt^2`.
pub fn step_variance(w_bar: f64, sup_grad: f64, dt: f64) -> f64 {
    4.0 * w_bar * w_bar * sup_grad * sup_grad * dt * dt
}

impl AnalyticBoundInputs {
    /// Builds the inputs for an experiment. `u_max_observed` is the largest
    /// per-agent control norm seen in a calibration run; the increment bound
    /// `c = dt * sup|grad h| * (2 u_max + 2 w_bar)` is a heuristic.
    pub fn for_experiment(config: &ExperimentConfig, u_max_observed: f64) -> Self {
        let sys = &config.system;
        let sup = sup_grad_norm(sys.domain_side, sys.position_dim());
        Self {
            h_min: config.h_min,
            k_steps: sys.horizon_steps,
            sigma2_step: step_variance(sys.noise_bound, sup, sys.dt),
            c_increment: sys.dt * sup * (2.0 * u_max_observed + 2.0 * sys.noise_bound),
            n_pairs: sys.n_agents * (sys.n_agents - 1) / 2,
        }
    }
}

/// Union bound over pairs of the per-pair Bernstein tail
/// `exp(-h_min^2 / (2 K sigma^2 + (2/3) c h_min))`, capped at one.
pub fn analytic_delta(inputs: &AnalyticBoundInputs) -> Result<f64> {
    let AnalyticBoundInputs { h_min, k_steps, sigma2_step, c_increment, n_pairs } = *inputs;
    if !(h_min >= 0.0 && sigma2_step >= 0.0 && c_increment >= 0.0) || k_steps < 1 {
        return Err(Error::InvalidInput("analytic bound inputs must be non-negative, K >= 1".into()));
    }
    if h_min == 0.0 {
        return Ok(1.0);
    }
    let denom = 2.0 * k_steps as f64 * sigma2_step + (2.0 / 3.0) * c_increment * h_min;
    if denom == 0.0 {
        // No randomness and no increments: violation is impossible.
        return Ok(0.0);
    }
    let per_pair = (-h_min * h_min / denom).exp();
    Ok((n_pairs as f64 * per_pair).min(1.0))
}

/// Statistics and bound slacks of one group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupStats {
    pub group_index: usize,
    pub p_hat: f64,
    pub sigma2_hat: f64,
    pub eps_bernstein: f64,
    pub eps_hoeffding: f64,
    pub eps_scenario: f64,
    pub d_support: usize,
    /// `p_hat + eps_bernstein`.
    pub bernstein_bound: f64,
    /// Rollouts whose psi-weighted margin actually went negative.
    pub violated_rollouts: usize,
    pub min_distance: f64,
    pub mean_min_distance: f64,
    pub infeasible_steps: usize,
}

impl GroupStats {
    pub fn from_group(group: &GroupRecord, delta: f64, support_tol: f64) -> Result<Self> {
        let p = group.x_flags.len();
        let p_hat = empirical_mean(&group.x_flags)?;
        let sigma2_hat = pairwise_variance(&group.x_flags)?;
        let eps_bernstein = bernstein_slack(sigma2_hat, p, delta)?;
        let d_support = count_support(&group.z_scores, support_tol)?;
        let distances = group.rollouts.iter().map(|r| r.min_distance);
        Ok(Self {
            group_index: group.group_index,
            p_hat,
            sigma2_hat,
            eps_bernstein,
            eps_hoeffding: hoeffding_bound(p, delta)?,
            eps_scenario: scenario_bound(d_support, p, delta)?,
            d_support,
            bernstein_bound: p_hat + eps_bernstein,
            violated_rollouts: group.rollouts.iter().filter(|r| r.violated).count(),
            min_distance: distances.clone().fold(f64::INFINITY, f64::min),
            mean_min_distance: distances.sum::<f64>() / p as f64,
            infeasible_steps: group.rollouts.iter().map(|r| r.infeasible_steps).sum(),
        })
    }
}

/// Fractions of groups whose bound covers the reference rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Satisfaction {
    pub bernstein: f64,
    pub hoeffding: f64,
    pub scenario: f64,
}

/// A group satisfies a bound family when `p_star <= p_hat_k + eps_k`.
pub fn satisfaction_stats(stats: &[GroupStats], p_star: f64) -> Result<Satisfaction> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("satisfaction needs at least one group".into()));
    }
    let frac = |eps: fn(&GroupStats) -> f64| {
        stats.iter().filter(|g| p_star <= g.p_hat + eps(g)).count() as f64 / stats.len() as f64
    };
    Ok(Satisfaction {
        bernstein: frac(|g| g.eps_bernstein),
        hoeffding: frac(|g| g.eps_hoeffding),
        scenario: frac(|g| g.eps_scenario),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalyticCertificate {
    pub inputs: AnalyticBoundInputs,
    pub delta: f64,
}

/// Aggregate certificate over all groups of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateReport {
    pub groups: Vec<GroupStats>,
    pub total_rollouts: usize,
    /// Pooled rate of `Z < theta` over all rollouts; `None` without groups.
    pub pooled_violation_rate: Option<f64>,
    pub mean_p_hat: Option<f64>,
    pub mean_eps_bernstein: Option<f64>,
    pub mean_eps_hoeffding: Option<f64>,
    pub mean_eps_scenario: Option<f64>,
    pub satisfaction: Option<Satisfaction>,
    pub analytic: AnalyticCertificate,
    pub violated_rollouts: usize,
    pub infeasible_steps: usize,
    pub max_control_norm: f64,
    pub config_hash: String,
    pub base_seed: u64,
}

impl CertificateReport {
    pub fn build(config: &ExperimentConfig, groups: &[GroupRecord], config_hash: String) -> Result<Self> {
        let stats = groups
            .iter()
            .map(|g| GroupStats::from_group(g, config.delta, config.support_tol))
            .collect::<Result<Vec<_>>>()?;
        let total_rollouts: usize = groups.iter().map(|g| g.x_flags.len()).sum();
        let flagged: usize = groups.iter().map(|g| g.x_flags.iter().filter(|&&x| x).count()).sum();
        let pooled = (total_rollouts > 0).then(|| flagged as f64 / total_rollouts as f64);
        let mean = |f: fn(&GroupStats) -> f64| {
            (!stats.is_empty()).then(|| stats.iter().map(f).sum::<f64>() / stats.len() as f64)
        };
        let satisfaction = match pooled {
            Some(p_star) if !stats.is_empty() => Some(satisfaction_stats(&stats, p_star)?),
            _ => None,
        };
        let max_control_norm =
            groups.iter().flat_map(|g| g.rollouts.iter().map(|r| r.max_control_norm)).fold(0.0, f64::max);
        let inputs = AnalyticBoundInputs::for_experiment(config, max_control_norm);
        let analytic = AnalyticCertificate { delta: analytic_delta(&inputs)?, inputs };
        Ok(Self {
            total_rollouts,
            pooled_violation_rate: pooled,
            mean_p_hat: mean(|g| g.p_hat),
            mean_eps_bernstein: mean(|g| g.eps_bernstein),
            mean_eps_hoeffding: mean(|g| g.eps_hoeffding),
            mean_eps_scenario: mean(|g| g.eps_scenario),
            satisfaction,
            analytic,
            violated_rollouts: stats.iter().map(|g| g.violated_rollouts).sum(),
            infeasible_steps: stats.iter().map(|g| g.infeasible_steps).sum(),
            max_control_norm,
            groups: stats,
            config_hash,
            base_seed: config.base_seed,
        })
    }
}
