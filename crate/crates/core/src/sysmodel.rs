//! Closed-loop multi-agent system model: per-agent control-affine dynamics
//! `x_i' = f(x_i) + g(x_i) u_i + w_i`, bounded disturbances and explicit Euler
//! integration.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper limit on whole-configuration redraws in [`SystemModel::sample_initial_state`].
pub const MAX_REJECTION_ROUNDS: usize = 10_000;

/// Per-agent dynamics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// `f = 0`, `g = I`; requires `state_dim == control_dim`.
    #[default]
    SingleIntegrator,
    /// State `(p, v)`: `f = (v, 0)`, `g = [0; I]`; requires `state_dim == 2 * control_dim`.
    DoubleIntegrator,
}

/// How a disturbance vector is drawn inside the norm bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Uniform on the closed ball of radius `noise_bound`.
    #[default]
    Ball,
    /// Uniform on the sphere of radius `noise_bound` (worst-case norm).
    Sphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of agents N (>= 2).
    pub n_agents: usize,
    /// State dimension per agent.
    pub state_dim: usize,
    /// Control dimension per agent.
    pub control_dim: usize,
    /// Euclidean norm bound on each agent's disturbance.
    pub noise_bound: f64,
    /// Integration step in seconds.
    pub dt: f64,
    /// Number of integration steps per rollout.
    pub horizon_steps: usize,
    /// Side length of the square initial-position domain `[0, side]^d`.
    pub domain_side: f64,
    /// Minimum pairwise distance between sampled initial positions.
    pub min_initial_separation: f64,
    pub dynamics: Dynamics,
    pub noise_model: NoiseModel,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_agents: 2,
            state_dim: 2,
            control_dim: 2,
            noise_bound: 0.03,
            dt: 0.1,
            horizon_steps: 50,
            domain_side: 10.0,
            min_initial_separation: 1.0,
            dynamics: Dynamics::SingleIntegrator,
            noise_model: NoiseModel::Ball,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::Config(format!("system.{key}: {msg}")));
        if self.n_agents < 2 {
            return bad("n_agents", "must be at least 2");
        }
        if self.state_dim == 0 || self.control_dim == 0 {
            return bad("state_dim", "dimensions must be positive");
        }
        match self.dynamics {
            Dynamics::SingleIntegrator if self.state_dim != self.control_dim => {
                return bad("state_dim", "single integrator requires state_dim == control_dim");
            }
            Dynamics::DoubleIntegrator if self.state_dim != 2 * self.control_dim => {
                return bad("state_dim", "double integrator requires state_dim == 2 * control_dim");
            }
            _ => {}
        }
        if !(self.noise_bound.is_finite() && self.noise_bound >= 0.0) {
            return bad("noise_bound", "must be finite and >= 0");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt", "must be finite and > 0");
        }
        if self.horizon_steps < 1 {
            return bad("horizon_steps", "must be at least 1");
        }
        if !(self.domain_side.is_finite() && self.domain_side > 0.0) {
            return bad("domain_side", "must be finite and > 0");
        }
        if !(self.min_initial_separation.is_finite() && self.min_initial_separation >= 0.0) {
            return bad("min_initial_separation", "must be finite and >= 0");
        }
        Ok(())
    }

    /// Number of leading state components that are positions.
    pub fn position_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::SingleIntegrator => self.state_dim,
            Dynamics::DoubleIntegrator => self.control_dim,
        }
    }
}

/// Row-major N x d matrix holding one d-vector per agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentMatrix {
    agents: usize,
    dim: usize,
    data: Vec<f64>,
}

impl AgentMatrix {
    pub fn zeros(agents: usize, dim: usize) -> Self {
        Self { agents, dim, data: vec![0.0; agents * dim] }
    }

    pub fn from_flat(agents: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != agents * dim {
            return Err(Error::Config(format!(
                "expected {agents}x{dim} = {} entries, got {}",
                agents * dim,
                data.len()
            )));
        }
        Ok(Self { agents, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let agents = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Config("ragged agent rows".into()));
        }
        Ok(Self { agents, dim, data: rows.concat() })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Joint state of all agents at time `t`. Entries are always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    x: AgentMatrix,
    t: f64,
}

impl SystemState {
    pub fn new(x: AgentMatrix, t: f64) -> Result<Self> {
        if !x.is_finite() || !t.is_finite() {
            return Err(Error::Config("system state must have finite entries".into()));
        }
        Ok(Self { x, t })
    }

    pub fn from_rows(rows: &[Vec<f64>], t: f64) -> Result<Self> {
        Self::new(AgentMatrix::from_rows(rows)?, t)
    }

    pub fn matrix(&self) -> &AgentMatrix {
        &self.x
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn n_agents(&self) -> usize {
        self.x.agents()
    }

    pub fn state_dim(&self) -> usize {
        self.x.dim()
    }

    pub fn time(&self) -> f64 {
        self.t
    }
}

/// Joint control, one m-vector per agent.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlVector(AgentMatrix);

impl ControlVector {
    pub fn new(u: AgentMatrix) -> Result<Self> {
        if !u.is_finite() {
            return Err(Error::Config("control must have finite entries".into()));
        }
        Ok(Self(u))
    }

    pub fn zeros(agents: usize, control_dim: usize) -> Self {
        Self(AgentMatrix::zeros(agents, control_dim))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(AgentMatrix::from_rows(rows)?)
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &AgentMatrix {
        &self.0
    }

    /// Largest per-agent Euclidean norm.
    pub fn max_agent_norm(&self) -> f64 {
        (0..self.0.agents()).map(|i| norm(self.0.row(i))).fold(0.0, f64::max)
    }
}

/// One disturbance vector per agent, each with norm at most the configured bound.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceSample(AgentMatrix);

impl DisturbanceSample {
    /// Builds a sample, rejecting any agent vector whose norm exceeds `bound`.
    pub fn new(w: AgentMatrix, bound: f64) -> Result<Self> {
        for i in 0..w.agents() {
            if !(norm(w.row(i)) <= bound) {
                return Err(Error::Config(format!("disturbance of agent {i} exceeds bound {bound}")));
            }
        }
        Ok(Self(w))
    }

    pub fn zeros(agents: usize, dim: usize) -> Self {
        Self(AgentMatrix::zeros(agents, dim))
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &AgentMatrix {
        &self.0
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

impl Dynamics {
    /// `f(x_i)`.
    pub fn drift_of(self, x_i: &[f64]) -> Vec<f64> {
        match self {
            Dynamics::SingleIntegrator => vec![0.0; x_i.len()],
            Dynamics::DoubleIntegrator => {
                let m = x_i.len() / 2;
                let mut f = vec![0.0; x_i.len()];
                f[..m].copy_from_slice(&x_i[m..]);
                f
            }
        }
    }

    /// `g(x_i) u_i`.
    pub fn actuate(self, state_dim: usize, u_i: &[f64]) -> Vec<f64> {
        match self {
            Dynamics::SingleIntegrator => u_i.to_vec(),
            Dynamics::DoubleIntegrator => {
                let mut out = vec![0.0; state_dim];
                out[state_dim - u_i.len()..].copy_from_slice(u_i);
                out
            }
        }
    }

    /// `g(x_i)^T v` for a state-space vector `v`.
    pub fn actuate_transpose(self, control_dim: usize, v: &[f64]) -> Vec<f64> {
        match self {
            Dynamics::SingleIntegrator => v.to_vec(),
            Dynamics::DoubleIntegrator => v[v.len() - control_dim..].to_vec(),
        }
    }

    /// Dense `g(x_i)` as an n x m matrix.
    pub fn actuation_matrix(self, state_dim: usize, control_dim: usize) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(state_dim, control_dim);
        let offset = state_dim - control_dim;
        for k in 0..control_dim {
            g[(offset + k, k)] = 1.0;
        }
        g
    }
}

/// A validated [`SystemConfig`] with the model operations attached.
#[derive(Clone, Debug)]
pub struct SystemModel {
    config: SystemConfig,
}

impl SystemModel {
    pub fn new(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn dynamics(&self) -> Dynamics {
        self.config.dynamics
    }

    pub fn drift(&self, state: &SystemState, agent: usize) -> Vec<f64> {
        self.config.dynamics.drift_of(state.agent(agent))
    }

    pub fn actuation(&self, _state: &SystemState, _agent: usize) -> DMatrix<f64> {
        self.config.dynamics.actuation_matrix(self.config.state_dim, self.config.control_dim)
    }

    fn check_dims(&self, state: &SystemState) -> Result<()> {
        if state.n_agents() != self.config.n_agents || state.state_dim() != self.config.state_dim {
            return Err(Error::Config(format!(
                "state is {}x{}, model expects {}x{}",
                state.n_agents(),
                state.state_dim(),
                self.config.n_agents,
                self.config.state_dim
            )));
        }
        Ok(())
    }

    /// One explicit Euler step: `x_i + dt (f(x_i) + g(x_i) u_i + w_i)`.
    pub fn step(&self, state: &SystemState, u: &ControlVector, w: &DisturbanceSample, dt: f64) -> Result<SystemState> {
        self.check_dims(state)?;
        let (n_agents, n, m) = (self.config.n_agents, self.config.state_dim, self.config.control_dim);
        if u.matrix().agents() != n_agents || u.matrix().dim() != m {
            return Err(Error::Config(format!("control must be {n_agents}x{m}")));
        }
        if w.matrix().agents() != n_agents || w.matrix().dim() != n {
            return Err(Error::Config(format!("disturbance must be {n_agents}x{n}")));
        }
        let dynamics = self.config.dynamics;
        let mut next = state.x.clone();
        for i in 0..n_agents {
            let x_i = state.agent(i);
            let f = dynamics.drift_of(x_i);
            let gu = dynamics.actuate(n, u.agent(i));
            let w_i = w.agent(i);
            for (k, out) in next.row_mut(i).iter_mut().enumerate() {
                *out = x_i[k] + dt * (f[k] + gu[k] + w_i[k]);
            }
        }
        SystemState::new(next, state.t + dt)
    }

    /// Draws one disturbance per agent with `||w_i|| <= noise_bound`.
    ///
    /// The generator is advanced identically for every bound, so runs that differ
    /// only in `noise_bound` see proportionally scaled disturbances.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DisturbanceSample {
        let (n_agents, n) = (self.config.n_agents, self.config.state_dim);
        let bound = self.config.noise_bound;
        let mut w = AgentMatrix::zeros(n_agents, n);
        for i in 0..n_agents {
            let dir = unit_direction(rng, n);
            let radius = match self.config.noise_model {
                NoiseModel::Ball => bound * rng.random::<f64>().powf(1.0 / n as f64),
                NoiseModel::Sphere => bound,
            };
            for (out, d) in w.row_mut(i).iter_mut().zip(&dir) {
                *out = radius * d;
            }
            // Rounding can push the norm a hair past the bound; pull it back.
            let len = norm(w.row(i));
            if len > bound {
                let scale = bound / len;
                w.row_mut(i).iter_mut().for_each(|v| *v *= scale);
            }
        }
        DisturbanceSample(w)
    }

    /// Fails fast when N discs of diameter `min_initial_separation` clearly cannot
    /// be packed in the domain.
    fn check_packing(&self) -> Result<()> {
        let c = &self.config;
        if c.position_dim() != 2 {
            return Ok(());
        }
        let r = c.min_initial_separation / 2.0;
        let needed = c.n_agents as f64 * std::f64::consts::PI * r * r;
        let hex_density = std::f64::consts::PI / (2.0 * 3f64.sqrt());
        let available = hex_density * (c.domain_side + c.min_initial_separation).powi(2);
        if needed > available {
            return Err(Error::Setup(format!(
                "{} agents with separation {} cannot fit in a {}x{} domain",
                c.n_agents, c.min_initial_separation, c.domain_side, c.domain_side
            )));
        }
        Ok(())
    }

    /// Samples positions i.i.d. uniform on the square domain, redrawing the whole
    /// configuration until every pair is at least `min_initial_separation` apart.
    /// Velocities (double integrator) start at zero.
    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SystemState> {
        self.check_packing()?;
        for _ in 0..MAX_REJECTION_ROUNDS {
            let x = self.draw_positions(rng);
            if min_pairwise_distance(&x) >= self.config.min_initial_separation {
                return SystemState::new(x, 0.0);
            }
        }
        Err(Error::Setup(format!(
            "no configuration with separation {} found after {MAX_REJECTION_ROUNDS} rounds",
            self.config.min_initial_separation
        )))
    }

    fn draw_positions<R: Rng + ?Sized>(&self, rng: &mut R) -> AgentMatrix {
        let c = &self.config;
        let p = c.position_dim();
        let mut x = AgentMatrix::zeros(c.n_agents, c.state_dim);
        for i in 0..c.n_agents {
            for v in &mut x.row_mut(i)[..p] {
                *v = rng.random::<f64>() * c.domain_side;
            }
        }
        x
    }
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm(&v);
        if len > 1e-12 {
            return v.into_iter().map(|a| a / len).collect();
        }
    }
}

/// Smallest Euclidean distance over all agent pairs.
pub fn min_pairwise_distance(x: &AgentMatrix) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.agents() {
        for j in i + 1..x.agents() {
            let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}
