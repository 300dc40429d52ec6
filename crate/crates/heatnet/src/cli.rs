//! `heatnet simulate | instopt | optimize | verify`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use heatnet_core::closure::algebraic_residual;
use heatnet_core::instantaneous::{default_initial_guess, run_instantaneous, InstantConfig, StateBounds};
use heatnet_core::network::clamp_demand;
use heatnet_core::optimizer::{minimize, reduced_cost, CostConfig, LbfgsOptions, Problem, Weights};
use heatnet_core::simulator::simulate;
use heatnet_core::verification::{convergence_study, StudyOptions};
use heatnet_core::{
    Control, ControlBounds, DemandSeries, Network, NewtonConfig, PiecewiseLinear, TimeGrid, Trajectory,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CommandKind, GridSection, RunConfig, Settings};
use crate::format::{self, create, FormatError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("solver failure: {0}")]
    Solver(#[from] heatnet_core::Error),
    /// Outputs were written but the optimizer did not reach its tolerance.
    #[error("{0}")]
    NotConverged(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Format(_) => 2,
            CliError::Solver(_) | CliError::NotConverged(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "heatnet", version, about = "Simulation and optimal control of district heating networks")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the network under given controls.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Control table `t,P_p,P_w,P_g`, interpolated onto the grid
        /// (default: the middle of the box).
        #[arg(long)]
        controls: Option<PathBuf>,
        /// Initial value written by `instopt` (default: uniform guess).
        #[arg(long)]
        initial: Option<PathBuf>,
    },
    /// Instantaneous control: consistent initial value and desired trajectories.
    Instopt {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Minimize the regularized cost starting from the instantaneous solution.
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
        /// Desired trajectory table (default: `<out>/desired.csv`).
        #[arg(long)]
        desired: Option<PathBuf>,
    },
    /// Convergence study on the manufactured solution.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Step sizes, e.g. `0.0625,0.03125`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        dts: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Network description (JSON).
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Demand table `t,Q_1,...` in W.
    #[arg(long)]
    pub demand: Option<PathBuf>,
    /// Start time in s.
    #[arg(long, allow_hyphen_values = true)]
    pub t0: Option<f64>,
    /// End time in s.
    #[arg(long, allow_hyphen_values = true)]
    pub tf: Option<f64>,
    /// Number of implicit Euler steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Prices of P_p, P_w, P_g.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub omega: Option<Vec<f64>>,
    /// Regularization α, β, γ.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub reg: Option<Vec<f64>>,
    /// Control box `lo,hi`, shared by all three controls.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub bounds: Option<Vec<f64>>,
    /// Projected-gradient tolerance of the optimizer.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration limit of the optimizer.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Recorded in the summary; all pipelines are deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn fixed<const N: usize>(v: &Option<Vec<f64>>, flag: &str) -> Result<Option<[f64; N]>, CliError> {
    v.as_ref()
        .map(|v| {
            <[f64; N]>::try_from(v.as_slice())
                .map_err(|_| CliError::Usage(format!("--{flag} takes {N} comma-separated values")))
        })
        .transpose()
}

impl CommonArgs {
    fn to_config(&self) -> Result<(RunConfig, GridSection), CliError> {
        let cfg = RunConfig {
            network: self.network.clone(),
            demand: self.demand.clone(),
            out: self.out.clone(),
            omega: fixed(&self.omega, "omega")?,
            reg: fixed(&self.reg, "reg")?,
            bounds: fixed(&self.bounds, "bounds")?,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            ..RunConfig::default()
        };
        Ok((cfg, GridSection { t0: self.t0, tf: self.tf, steps: self.steps }))
    }
}

/// Resolved settings for a parsed command line.
pub fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let (common, kind, dts) = match &cli.command {
        Command::Simulate { common, .. } => (common, CommandKind::Simulate, None),
        Command::Instopt { common } => (common, CommandKind::Instopt, None),
        Command::Optimize { common, .. } => (common, CommandKind::Optimize, None),
        Command::Verify { common, dts } => (common, CommandKind::Verify, dts.clone()),
    };
    let (mut flags, flags_grid) = common.to_config()?;
    flags.dts = dts;
    let file = cli.config.as_deref().map(RunConfig::load).transpose()?.unwrap_or_default();
    let s = flags.over(file).resolve(kind, flags_grid);
    if !(s.t0 < s.tf) {
        return Err(CliError::Usage(format!("t0 = {} must be below tf = {}", s.t0, s.tf)));
    }
    if s.steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    if !(s.tol >= 0.0) {
        return Err(CliError::Usage("--tol must be non-negative".into()));
    }
    Ok(s)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let s = settings(cli)?;
    fs::create_dir_all(&s.out)
        .map_err(|source| FormatError::Io { path: s.out.clone(), source })?;
    match &cli.command {
        Command::Simulate { controls, initial, .. } => cmd_simulate(&s, controls.as_deref(), initial.as_deref()),
        Command::Instopt { .. } => cmd_instopt(&s),
        Command::Optimize { desired, .. } => cmd_optimize(&s, desired.as_deref()),
        Command::Verify { .. } => cmd_verify(&s),
    }
}

fn load_inputs(s: &Settings) -> Result<(Network, DemandSeries), CliError> {
    let net_path = s.network.as_deref().ok_or_else(|| CliError::Usage("--network is required".into()))?;
    let dem_path = s.demand.as_deref().ok_or_else(|| CliError::Usage("--demand is required".into()))?;
    let net = format::load_network(net_path)?;
    let demand = clamp_demand(&format::load_demand(dem_path)?).map_err(FormatError::from)?;
    net.check_demand(&demand).map_err(FormatError::from)?;
    Ok((net, demand))
}

fn grid(s: &Settings) -> Result<TimeGrid, CliError> {
    Ok(TimeGrid::uniform(s.t0, s.tf, s.steps)?)
}

fn bounds(s: &Settings) -> Result<ControlBounds, CliError> {
    ControlBounds::uniform(s.bounds[0], s.bounds[1])
        .ok_or_else(|| CliError::Usage(format!("invalid bounds {:?}", s.bounds)))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(FormatError::from)?;
    Ok(())
}

fn write_trajectory(path: &Path, traj: &Trajectory, net: &Network) -> Result<(), CliError> {
    format::write_trajectory(traj, net, BufWriter::new(create(path)?)).map_err(|e| match e {
        FormatError::Io { source, .. } => FormatError::Io { path: path.to_path_buf(), source },
        e => e,
    })?;
    Ok(())
}

/// Wall-clock time is kept out of the summaries so they are reproducible.
fn write_timing(out: &Path, seconds: f64) -> Result<(), CliError> {
    write_json(&out.join("timing.json"), &serde_json::json!({ "wall_time_s": seconds }))
}

/// Consistent initial value as written by `instopt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialValue {
    pub t: f64,
    pub x: Vec<f64>,
    /// Blocked layout: v, T_in, p(0), p(L).
    pub y: Vec<f64>,
    pub u: [f64; 3],
    /// ‖algebraic residual‖∞ at (t, x, y, u).
    pub closure_residual: f64,
}

pub fn load_initial(path: &Path) -> Result<InitialValue, FormatError> {
    Ok(serde_json::from_reader(std::io::BufReader::new(format::open(path)?))?)
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    command: &'static str,
    steps: usize,
    t0: f64,
    tf: f64,
    seed: u64,
    final_max_temperature: f64,
    final_min_temperature: f64,
}

fn cmd_simulate(s: &Settings, controls: Option<&Path>, initial: Option<&Path>) -> Result<(), CliError> {
    let (net, demand) = load_inputs(s)?;
    let grid = grid(s)?;
    let u: Vec<Control> = match controls {
        None => vec![bounds(s)?.midpoint(); grid.len()],
        Some(path) => {
            let (cg, cu) = format::parse_controls(format::open(path)?)?;
            let series: Vec<PiecewiseLinear> = (0..3)
                .map(|c| {
                    PiecewiseLinear::new(cg.nodes().to_vec(), cu.iter().map(|u| u.0[c]).collect())
                        .expect("grid times are increasing")
                })
                .collect();
            grid.nodes().iter().map(|&t| Control(std::array::from_fn(|c| series[c].eval(t)))).collect()
        }
    };
    let x0 = match initial {
        Some(path) => {
            let iv = load_initial(path)?;
            if iv.x.len() != net.state_dim() {
                return Err(CliError::Usage(format!(
                    "{}: initial state has {} entries, the network needs {}",
                    path.display(),
                    iv.x.len(),
                    net.state_dim()
                )));
            }
            iv.x
        }
        None => default_initial_guess(&net, s.t0),
    };
    let start = Instant::now();
    let traj = simulate(&x0, &u, &grid, &net, &demand, &NewtonConfig::default())?;
    let elapsed = start.elapsed().as_secs_f64();
    write_trajectory(&s.out.join("trajectory.csv"), &traj, &net)?;
    let last = traj.x.last().expect("non-empty grid");
    write_json(
        &s.out.join("summary.json"),
        &SimulateSummary {
            command: "simulate",
            steps: grid.steps(),
            t0: s.t0,
            tf: s.tf,
            seed: s.seed,
            final_max_temperature: last.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            final_min_temperature: last.iter().copied().fold(f64::INFINITY, f64::min),
        },
    )?;
    write_timing(&s.out, elapsed)
}

#[derive(Debug, Serialize)]
struct InstoptSummary {
    command: &'static str,
    steps: usize,
    t0: f64,
    tf: f64,
    seed: u64,
    warmup_iterations: usize,
    failed_steps: usize,
    flagged_steps: usize,
    /// ∫ ω·u dt of the instantaneous controls.
    operating_cost: f64,
    closure_residual: f64,
}

fn cmd_instopt(s: &Settings) -> Result<(), CliError> {
    let (net, demand) = load_inputs(s)?;
    let grid = grid(s)?;
    let mut cfg = InstantConfig::new(s.omega, bounds(s)?);
    if let Some(sb) = s.state_bounds {
        cfg.state_bounds = StateBounds::supply_minimum(&net, sb.min_supply_temperature, sb.min_supply_pressure);
        cfg.penalty = sb.penalty;
    }
    cfg.warmup_steps = s.warmup_steps;
    cfg.warmup_tol = s.warmup_tol;

    let start = Instant::now();
    let res = run_instantaneous(&grid, &default_initial_guess(&net, s.t0), &net, &demand, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let traj = &res.trajectory;

    write_trajectory(&s.out.join("desired.csv"), traj, &net)?;
    let residual = algebraic_residual(s.t0, &traj.x[0], &traj.y[0], &traj.u[0], &net, &demand)
        .iter()
        .fold(0.0f64, |m, r| m.max(r.abs()));
    write_json(
        &s.out.join("initial.json"),
        &InitialValue {
            t: s.t0,
            x: traj.x[0].clone(),
            y: traj.y[0].to_flat(),
            u: traj.u[0].0,
            closure_residual: residual,
        },
    )?;
    {
        let mut w = csv::Writer::from_writer(BufWriter::new(create(&s.out.join("diagnostics.csv"))?));
        let err = |e: csv::Error| CliError::Format(e.into());
        w.write_record(["t", "iterations", "objective", "projected_gradient", "residual", "flagged", "failed"])
            .map_err(err)?;
        for d in &res.diagnostics {
            w.write_record([
                d.t.to_string(),
                d.iterations.to_string(),
                d.objective.to_string(),
                d.projected_gradient.to_string(),
                d.residual.to_string(),
                d.flagged.to_string(),
                d.failed.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|source| FormatError::Io { path: s.out.join("diagnostics.csv"), source })?;
    }
    let failed = res.diagnostics.iter().filter(|d| d.failed).count();
    if failed > 0 {
        log::warn!("{failed} stationary problems failed; their previous controls were kept");
    }
    let operating = (1..grid.len())
        .map(|n| grid.dt(n) * s.omega.iter().zip(&traj.u[n].0).map(|(w, u)| w * u).sum::<f64>())
        .sum();
    write_json(
        &s.out.join("summary.json"),
        &InstoptSummary {
            command: "instopt",
            steps: grid.steps(),
            t0: s.t0,
            tf: s.tf,
            seed: s.seed,
            warmup_iterations: res.warmup_iterations,
            failed_steps: failed,
            flagged_steps: res.diagnostics.iter().filter(|d| d.flagged).count(),
            operating_cost: operating,
            closure_residual: residual,
        },
    )?;
    write_timing(&s.out, elapsed)
}

#[derive(Debug, Serialize)]
struct OptimizeSummary {
    command: &'static str,
    steps: usize,
    t0: f64,
    tf: f64,
    seed: u64,
    omega: [f64; 3],
    reg: [f64; 3],
    /// J at the optimized controls.
    cost: f64,
    /// Ĵ = ∫ ω·u dt at the optimized controls.
    operating_cost: f64,
    /// Ĵ at the instantaneous controls.
    initial_operating_cost: f64,
    iterations: usize,
    success: bool,
    line_search_failed: bool,
    projected_gradient: f64,
    pg_history: Vec<f64>,
    gradient: String,
    evaluations: usize,
    initial_closure_residual: f64,
}

fn cmd_optimize(s: &Settings, desired: Option<&Path>) -> Result<(), CliError> {
    let (net, demand) = load_inputs(s)?;
    let grid = grid(s)?;
    let desired_path = desired.map(Path::to_path_buf).unwrap_or_else(|| s.out.join("desired.csv"));
    let desired = format::parse_trajectory(format::open(&desired_path)?, &net)?.resample(&grid);
    let x0 = desired.x[0].clone();
    let residual = algebraic_residual(s.t0, &x0, &desired.y[0], &desired.u[0], &net, &demand)
        .iter()
        .fold(0.0f64, |m, r| m.max(r.abs()));
    if residual > 1e-8 {
        log::warn!("initial value is not consistent: closure residual {residual:e}");
    }
    let u0 = desired.u.clone();
    let cost = CostConfig::new(Weights::Constant(s.omega), (s.reg[0], s.reg[1], s.reg[2]), desired)?;
    let problem = Problem { net: &net, demand: &demand, grid: &grid, x0: &x0, cost: &cost, newton: NewtonConfig::default() };
    let opts = LbfgsOptions { tol: s.tol, max_iter: s.max_iter, ..LbfgsOptions::default() };

    let start = Instant::now();
    let (initial, _) = reduced_cost(&u0, &problem)?;
    let mut res = minimize(&u0, &bounds(s)?, &problem, &opts)?;
    let elapsed = start.elapsed().as_secs_f64();
    res.wall_time = Some(elapsed);

    write_trajectory(&s.out.join("optimal_trajectory.csv"), &res.trajectory, &net)?;
    format::write_controls(&grid, &res.controls, BufWriter::new(create(&s.out.join("controls.csv"))?))?;
    let summary = OptimizeSummary {
        command: "optimize",
        steps: grid.steps(),
        t0: s.t0,
        tf: s.tf,
        seed: s.seed,
        omega: s.omega,
        reg: s.reg,
        cost: res.cost.total,
        operating_cost: res.cost.operating,
        initial_operating_cost: initial.operating,
        iterations: res.iterations,
        success: res.converged,
        line_search_failed: res.line_search_failed,
        projected_gradient: *res.pg_history.last().expect("non-empty"),
        pg_history: res.pg_history.clone(),
        gradient: format!("{:?}", res.gradient),
        evaluations: res.evaluations,
        initial_closure_residual: residual,
    };
    write_json(&s.out.join("summary.json"), &summary)?;
    write_timing(&s.out, elapsed)?;
    if !res.converged {
        return Err(CliError::NotConverged(format!(
            "optimizer stopped after {} iterations with projected gradient {:e} > {:e}",
            res.iterations, summary.projected_gradient, s.tol
        )));
    }
    Ok(())
}

/// Accepted band for the fitted convergence order.
pub const ORDER_BAND: (f64, f64) = (0.8, 1.2);

fn cmd_verify(s: &Settings) -> Result<(), CliError> {
    if s.dts.len() < 2 {
        return Err(CliError::Usage("the convergence study needs at least two step sizes".into()));
    }
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut orders = Vec::new();
    for reg in [0.5, 1.0] {
        let report = convergence_study(&s.dts, reg, &StudyOptions::default())?;
        let path = s.out.join(format!("convergence_reg{reg}.csv"));
        format::write_convergence(&report.pairs(), BufWriter::new(create(&path)?))?;
        match report.order {
            Some(o) if (ORDER_BAND.0..=ORDER_BAND.1).contains(&o) => {
                log::info!("regularization {reg}: order {o:.3}");
            }
            Some(o) => failures.push(format!("regularization {reg}: order {o:.3} outside {ORDER_BAND:?}")),
            None => failures.push(format!("regularization {reg}: order undefined")),
        }
        orders.push(serde_json::json!({
            "regularization": reg,
            "order": report.order,
            "flagged": report.flagged,
        }));
    }
    write_json(&s.out.join("summary.json"), &serde_json::json!({ "command": "verify", "dts": s.dts, "studies": orders }))?;
    write_timing(&s.out, start.elapsed().as_secs_f64())?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failures.join("; ")))
    }
}
