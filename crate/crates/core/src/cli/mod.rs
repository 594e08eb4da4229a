//! Command-line front end: `verify`, `reproduce-table1`, `sweep-psi` and
//! `print-config-schema`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 setup error,
//! 4 internal solver failure.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::bounds::CertificateReport;
use crate::error::Error;
use crate::rollout::{run_experiment, ExperimentConfig, GroupRecord};

pub use config::{config_hash, config_schema, load_config, parse_config, ConfigError, RunManifest};

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SETUP: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "psicert",
    version,
    about = "Monte Carlo safety certificates for psi-weighted CBF multi-agent control"
)]
pub struct Cli {
    /// JSON experiment configuration; omitted keys take defaults (see print-config-schema).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Override the configuration's base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Write one CSV per rollout under <out>/trajectories (verify only).
    #[arg(long, global = true)]
    pub dump_trajectories: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run groups x rollouts and write certificate.json and groups.csv.
    Verify,
    /// Sweep noise bound x agent count and write table1.csv.
    ReproduceTable1,
    /// Sweep psi and write psi_sweep.csv.
    SweepPsi,
    /// Print the configuration JSON Schema (also written to <out>/config.schema.json).
    PrintConfigSchema,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Run(Error),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Run(Error::Config(_)) => EXIT_CONFIG,
            CliError::Run(Error::Setup(_)) => EXIT_SETUP,
            CliError::Run(_) => EXIT_SOLVER,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Run(e @ (Error::Solver(_) | Error::SolverInput(_))) => {
                write!(f, "{e}\nthis is a bug; please report it with the config and seed")
            }
            CliError::Run(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("psicert: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => load_config(path).map_err(CliError::Config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.base_seed = seed;
    }
    Ok(config)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Command::PrintConfigSchema = cli.command {
        let schema = serde_json::to_string_pretty(&config_schema()).expect("schema serializes");
        println!("{schema}");
        fs::create_dir_all(&cli.out).map_err(io_err(&cli.out))?;
        let path = cli.out.join("config.schema.json");
        fs::write(&path, schema + "\n").map_err(io_err(&path))?;
        return Ok(());
    }

    let config = resolve_config(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        pool = pool.num_threads(jobs.max(1));
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    fs::create_dir_all(&cli.out).map_err(io_err(&cli.out))?;

    pool.install(|| match cli.command {
        Command::Verify => cmd_verify(cli, config),
        Command::ReproduceTable1 => cmd_reproduce_table1(cli, config),
        Command::SweepPsi => cmd_sweep_psi(cli, config),
        Command::PrintConfigSchema => unreachable!(),
    })
}

#[derive(Serialize)]
struct CertificateFile<'a> {
    manifest: &'a RunManifest,
    report: &'a CertificateReport,
}

/// Runs the configured experiment and writes `certificate.json` and `groups.csv`.
pub fn cmd_verify(cli: &Cli, config: ExperimentConfig) -> Result<(), CliError> {
    let manifest = RunManifest::new(cli.config.as_deref(), config.clone(), &cli.out);
    let groups = run_experiment(&config, cli.dump_trajectories)?;
    let report = CertificateReport::build(&config, &groups, manifest.config_hash.clone())?;

    let cert_path = cli.out.join("certificate.json");
    let body = serde_json::to_string_pretty(&CertificateFile { manifest: &manifest, report: &report })
        .expect("report serializes");
    fs::write(&cert_path, body + "\n").map_err(io_err(&cert_path))?;

    let csv_path = cli.out.join("groups.csv");
    output::write_groups_csv(&csv_path, &manifest, &report.groups).map_err(io_err(&csv_path))?;

    if cli.dump_trajectories {
        write_trajectories(&cli.out.join("trajectories"), &manifest, &groups)?;
    }

    match (report.pooled_violation_rate, report.satisfaction) {
        (Some(p), Some(s)) => eprintln!(
            "{} groups x {} rollouts: pooled rate {:.4}, B_sat {:.2}, H_sat {:.2}, S_sat {:.2}, analytic delta {:.4}",
            config.groups, config.rollouts_per_group, p, s.bernstein, s.hoeffding, s.scenario, report.analytic.delta
        ),
        _ => eprintln!("no groups requested; wrote empty report"),
    }
    Ok(())
}

fn write_trajectories(dir: &Path, manifest: &RunManifest, groups: &[GroupRecord]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for g in groups {
        for (p, r) in g.rollouts.iter().enumerate() {
            if let Some(rows) = &r.trajectory {
                let path = dir.join(format!("group{:04}_rollout{:04}.csv", g.group_index, p));
                output::write_trajectory_csv(&path, manifest, rows).map_err(io_err(&path))?;
            }
        }
    }
    Ok(())
}

/// One row of `table1.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table1Row {
    pub w_bar: f64,
    pub n_agents: usize,
    pub p_hat: f64,
    pub eps_b: f64,
    pub eps_h: f64,
    pub eps_s: f64,
    pub b_sat: f64,
    pub h_sat: f64,
    pub s_sat: f64,
}

/// Runs one (noise bound, agent count) cell of the bound-satisfaction table.
pub fn table1_cell(base: &ExperimentConfig, w_bar: f64, n_agents: usize) -> crate::Result<Table1Row> {
    let mut config = base.clone();
    config.system.noise_bound = w_bar;
    config.system.n_agents = n_agents;
    let groups = run_experiment(&config, false)?;
    let report = CertificateReport::build(&config, &groups, config_hash(&config))?;
    let (Some(p_hat), Some(sat)) = (report.mean_p_hat, report.satisfaction) else {
        return Err(Error::Config("groups: table reproduction needs at least one group".into()));
    };
    Ok(Table1Row {
        w_bar,
        n_agents,
        p_hat,
        eps_b: report.mean_eps_bernstein.unwrap_or(f64::NAN),
        eps_h: report.mean_eps_hoeffding.unwrap_or(f64::NAN),
        eps_s: report.mean_eps_scenario.unwrap_or(f64::NAN),
        b_sat: sat.bernstein,
        h_sat: sat.hoeffding,
        s_sat: sat.scenario,
    })
}

pub fn reproduce_table1(config: &ExperimentConfig) -> crate::Result<Vec<Table1Row>> {
    let mut rows = Vec::new();
    for &n in &config.sweeps.table1_agent_counts {
        for &w in &config.sweeps.table1_noise_bounds {
            rows.push(table1_cell(config, w, n)?);
        }
    }
    Ok(rows)
}

pub fn cmd_reproduce_table1(cli: &Cli, config: ExperimentConfig) -> Result<(), CliError> {
    let manifest = RunManifest::new(cli.config.as_deref(), config.clone(), &cli.out);
    let rows = reproduce_table1(&config)?;
    let path = cli.out.join("table1.csv");
    output::write_table1_csv(&path, &manifest, &rows).map_err(io_err(&path))?;
    for r in &rows {
        eprintln!(
            "N={} w_bar={}: p_hat {:.3} eps_B {:.3} eps_H {:.3} eps_S {:.3} B_sat {:.2} H_sat {:.2} S_sat {:.2}",
            r.n_agents, r.w_bar, r.p_hat, r.eps_b, r.eps_h, r.eps_s, r.b_sat, r.h_sat, r.s_sat
        );
    }
    Ok(())
}

/// One row of `psi_sweep.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiRow {
    pub psi: f64,
    pub n_agents: usize,
    pub p_hat_v: f64,
    /// Mean over rollouts of the per-rollout minimum inter-agent distance.
    pub min_dist: f64,
    /// Minimum over all rollouts.
    pub min_dist_worst: f64,
}

/// Runs the psi sweep rollouts for one agent count and psi value. All psi values
/// share the same seeds.
pub fn psi_cell(base: &ExperimentConfig, psi: f64, n_agents: usize) -> crate::Result<PsiRow> {
    let mut config = base.clone();
    config.safety.psi = psi;
    config.system.n_agents = n_agents;
    config.system.noise_bound = base.sweeps.psi_noise_bound;
    config.groups = 1;
    config.rollouts_per_group = base.sweeps.psi_rollouts;
    let groups = run_experiment(&config, false)?;
    let group = &groups[0];
    let distances: Vec<f64> = group.rollouts.iter().map(|r| r.min_distance).collect();
    Ok(PsiRow {
        psi,
        n_agents,
        p_hat_v: crate::bounds::empirical_mean(&group.x_flags)?,
        min_dist: distances.iter().sum::<f64>() / distances.len() as f64,
        min_dist_worst: distances.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

pub fn sweep_psi(config: &ExperimentConfig) -> crate::Result<Vec<PsiRow>> {
    let mut rows = Vec::new();
    for &n in &config.sweeps.psi_agent_counts {
        for &psi in &config.sweeps.psi_values {
            rows.push(psi_cell(config, psi, n)?);
        }
    }
    Ok(rows)
}

pub fn cmd_sweep_psi(cli: &Cli, config: ExperimentConfig) -> Result<(), CliError> {
    let manifest = RunManifest::new(cli.config.as_deref(), config.clone(), &cli.out);
    let rows = sweep_psi(&config)?;
    let path = cli.out.join("psi_sweep.csv");
    output::write_psi_csv(&path, &manifest, &rows).map_err(io_err(&path))?;
    for r in &rows {
        eprintln!(
            "N={} psi={}: p_hat_v {:.3} min_dist {:.3} (worst {:.3})",
            r.n_agents, r.psi, r.p_hat_v, r.min_dist, r.min_dist_worst
        );
    }
    Ok(())
}
