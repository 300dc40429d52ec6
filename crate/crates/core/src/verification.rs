//! Manufactured solution on the six-pipe, two-consumer network and the
//! convergence studies built on it.
//!
//! With V(t) = 1/(6 − 3t), T(t) = e^{1+t}(2 − t) and P(t) = 1/(t − 2)², the
//! velocities are (3, 2, 1, 2, 1, 3)·V and every temperature profile is
//! c_i(x)·T(t). The return temperature T̄_out = T/2 and the stagnation
//! pressure p_d = 2P follow from the consumer equations and the pipe-6 outlet
//! pressure. The thermal control is negative because k = −1 makes every pipe
//! gain heat, so the box is [−10⁴, 10⁴] rather than [0, u_b].

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::closure::{AlgebraicVector, Control, ControlBounds};
use crate::error::Error;
use crate::math::{exp, ln, sqrt};
use crate::network::{DemandSeries, GlobalParams, Network, NetworkBuilder, NodeKind, PipeParams};
use crate::optimizer::{minimize, CostConfig, LbfgsOptions, Problem, Weights};
use crate::profile::TimeProfile;
use crate::simulator::{simulate, NewtonConfig, TimeGrid, Trajectory};

pub fn v_scale(t: f64) -> f64 {
    1.0 / (6.0 - 3.0 * t)
}

pub fn t_scale(t: f64) -> f64 {
    exp(1.0 + t) * (2.0 - t)
}

pub fn p_scale(t: f64) -> f64 {
    1.0 / ((t - 2.0) * (t - 2.0))
}

fn t_scale_dot(t: f64) -> f64 {
    exp(1.0 + t) * (1.0 - t)
}

const VELOCITY_FACTORS: [f64; 6] = [3.0, 2.0, 1.0, 2.0, 1.0, 3.0];

/// Cross section of every pipe (d = 1).
pub const AREA: f64 = PI / 4.0;

/// Six-pipe return temperature T̄_out(t) = T(t)/2.
pub fn return_temperature(t: f64) -> f64 {
    0.5 * t_scale(t)
}

/// Six-pipe stagnation pressure p_d(t) = 2P(t).
pub fn stagnation_pressure(t: f64) -> f64 {
    2.0 * p_scale(t)
}

pub fn demand_1(t: f64) -> f64 {
    (2.0 * exp(1.5) - 1.0) * PI * exp(1.0 + t) / 3.0
}

pub fn demand_2(t: f64) -> f64 {
    (2.0 * exp(3.0) - 1.0) * PI * exp(1.0 + t) / 6.0
}

/// Closed-form six-pipe solution. Pipes are 0-based here.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyticSolution;

impl AnalyticSolution {
    pub fn velocity(&self, pipe: usize, t: f64) -> f64 {
        VELOCITY_FACTORS[pipe] * v_scale(t)
    }

    /// Spatial profile c_i(x) with T_i(t, x) = c_i(x) T(t).
    fn profile(&self, pipe: usize, x: f64) -> f64 {
        match pipe {
            0 => exp(x - 1.0),
            1 => 0.5 * exp(1.5 * x),
            2 => 0.5 * exp(3.0 * x),
            3 => exp(1.5 * x),
            4 => exp(3.0 * x),
            5 => (2.0 + exp(1.5)) * exp(1.5 + x) / 6.0,
            _ => panic!("pipe index {pipe} out of range"),
        }
    }

    pub fn temperature(&self, pipe: usize, t: f64, x: f64) -> f64 {
        self.profile(pipe, x) * t_scale(t)
    }

    pub fn temperature_dt(&self, pipe: usize, t: f64, x: f64) -> f64 {
        self.profile(pipe, x) * t_scale_dot(t)
    }

    pub fn pressure_start(&self, pipe: usize, t: f64) -> f64 {
        let p = p_scale(t);
        match pipe {
            0 => 3.0 * p + 2.0,
            1 => 44.0 / 9.0 * p + 4.0,
            2 => 38.0 / 9.0 * p + 4.0,
            3 | 4 => p,
            5 => 4.0 * p + 2.0,
            _ => panic!("pipe index {pipe} out of range"),
        }
    }

    pub fn pressure_end(&self, pipe: usize, t: f64) -> f64 {
        let p = p_scale(t);
        match pipe {
            0 => p,
            1 | 2 => 4.0 * p + 2.0,
            3 => p / 9.0 - 2.0,
            4 => 7.0 / 9.0 * p - 2.0,
            5 => 2.0 * p,
            _ => panic!("pipe index {pipe} out of range"),
        }
    }

    /// P_p = A_1 v_1 (p_1(0) − p_6(L)).
    pub fn pump(&self, t: f64) -> f64 {
        AREA * self.velocity(0, t) * (self.pressure_start(0, t) - self.pressure_end(5, t))
    }

    /// P_w + P_g = c_p A_1 ρ v_1 (T_1(t, 0) − T_6(t, L)).
    pub fn heat(&self, t: f64) -> f64 {
        RHO * CP * AREA * self.velocity(0, t) * (self.temperature(0, t, 0.0) - self.temperature(5, t, 1.0))
    }

    /// (P_p, P_w, P_g) with the thermal power carried by P_w alone.
    pub fn control(&self, t: f64) -> Control {
        Control::new(self.pump(t), self.heat(t), 0.0)
    }

    /// Amplitude-doubled pipe-6 profile with a +5 offset. It does not satisfy
    /// the energy balance at its inlet node; kept for the consistency tests.
    pub fn alternative_pipe6_temperature(&self, t: f64, x: f64) -> f64 {
        (2.0 + exp(1.5)) * exp(1.5 + x) * t_scale(t) / 3.0 + 5.0
    }
}

const RHO: f64 = 2.0;
const CP: f64 = 2.0;

/// The six-pipe network with `n_points` grid points per pipe (Δx = 1/(n_points − 1)).
pub fn build_six_pipe(n_points: usize) -> Result<(Network, DemandSeries), Error> {
    let global = GlobalParams {
        density: RHO,
        heat_capacity: CP,
        external_temperature: 0.0,
        return_temperature: TimeProfile::Analytic(return_temperature),
        gravity: 1.0,
        stagnation_pressure: TimeProfile::Analytic(stagnation_pressure),
    };
    // k = −1, d = 1, λ = 2, L = 1, G Δh = 1
    let params = PipeParams::new(1.0, 1.0, 2.0, 1.0, n_points, -1.0);
    let mut b = NetworkBuilder::new(global);
    use NodeKind::*;
    let kinds = [Supply, Supply, Supply, Interior, Interior, Demand, Demand, Demand];
    let nodes: Vec<usize> = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| b.node(&format!("{}", i + 1), *k))
        .collect();
    let ends = [(0, 3), (1, 4), (2, 4), (3, 5), (3, 6), (4, 7)];
    let pipes: Vec<usize> = ends
        .iter()
        .enumerate()
        .map(|(i, &(a, z))| b.pipe(&format!("{}", i + 1), nodes[a], nodes[z], params.clone()))
        .collect();
    b.consumer("1", pipes[3], pipes[1]);
    b.consumer("2", pipes[4], pipes[2]);
    b.depot(pipes[0], pipes[5]);
    let net = b.build()?;
    let demand = DemandSeries::new(alloc::vec![
        TimeProfile::Analytic(demand_1),
        TimeProfile::Analytic(demand_2),
    ])?;
    Ok((net, demand))
}

/// Grid points per pipe for Δx = dx on the unit-length pipes.
pub fn points_for(dx: f64) -> usize {
    libm::round(1.0 / dx) as usize + 1
}

/// Box used for six-pipe controls.
pub fn six_pipe_bounds() -> ControlBounds {
    ControlBounds::uniform(-1e4, 1e4).expect("ordered")
}

/// Analytic (x, y, u) at time t on the grid of `net`.
pub fn analytic_reference(t: f64, net: &Network) -> (Vec<f64>, AlgebraicVector, Control) {
    let a = AnalyticSolution;
    let layout = net.layout();
    let mut x = alloc::vec![0.0; net.state_dim()];
    for (i, pipe) in net.pipes().iter().enumerate() {
        let dx = pipe.params.dx();
        for j in 2..=pipe.params.n_points {
            x[layout.cell(i, j)] = a.temperature(i, t, (j - 1) as f64 * dx);
        }
    }
    let n = net.n_pipes();
    let y = AlgebraicVector {
        v: (0..n).map(|i| a.velocity(i, t)).collect(),
        t_in: (0..n).map(|i| a.temperature(i, t, 0.0)).collect(),
        p0: (0..n).map(|i| a.pressure_start(i, t)).collect(),
        p_l: (0..n).map(|i| a.pressure_end(i, t)).collect(),
    };
    (x, y, a.control(t))
}

/// ∂_t of the analytic state at time t.
pub fn analytic_state_derivative(t: f64, net: &Network) -> Vec<f64> {
    let a = AnalyticSolution;
    let layout = net.layout();
    let mut out = alloc::vec![0.0; net.state_dim()];
    for (i, pipe) in net.pipes().iter().enumerate() {
        let dx = pipe.params.dx();
        for j in 2..=pipe.params.n_points {
            out[layout.cell(i, j)] = a.temperature_dt(i, t, (j - 1) as f64 * dx);
        }
    }
    out
}

pub fn analytic_trajectory(grid: &TimeGrid, net: &Network) -> Trajectory {
    let mut traj = Trajectory {
        grid: grid.clone(),
        x: Vec::with_capacity(grid.len()),
        y: Vec::with_capacity(grid.len()),
        u: Vec::with_capacity(grid.len()),
    };
    for &t in grid.nodes() {
        let (x, y, u) = analytic_reference(t, net);
        traj.x.push(x);
        traj.y.push(y);
        traj.u.push(u);
    }
    traj
}

/// (Σ_{n≥1} Δt_n |P_p,n − P_p(t_n)|²)^{1/2}
pub fn pump_error(grid: &TimeGrid, controls: &[Control]) -> f64 {
    let a = AnalyticSolution;
    let s: f64 = (1..grid.len())
        .map(|n| {
            let e = controls[n].pump() - a.pump(grid.t(n));
            grid.dt(n) * e * e
        })
        .sum();
    sqrt(s)
}

/// Space-time discrete L² distance of a state trajectory to the analytic state.
pub fn state_error(traj: &Trajectory, net: &Network) -> f64 {
    let layout = net.layout();
    let mut s = 0.0;
    for n in 1..traj.len() {
        let t = traj.grid.t(n);
        let (xa, _, _) = analytic_reference(t, net);
        let mut e = 0.0;
        for (i, pipe) in net.pipes().iter().enumerate() {
            let dx = pipe.params.dx();
            for idx in layout.range(i) {
                let d = traj.x[n][idx] - xa[idx];
                e += dx * d * d;
            }
        }
        s += traj.grid.dt(n) * e;
    }
    sqrt(s)
}

/// Least-squares slope of ln(error) against ln(Δt).
pub fn estimate_order(points: &[(f64, f64)]) -> Result<f64, Error> {
    if points.len() < 2 {
        return Err(Error::Input("at least two points are needed to estimate an order".into()));
    }
    if points.iter().any(|&(h, e)| !(h > 0.0 && e > 0.0)) {
        return Err(Error::Input("step sizes and errors must be positive".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| ln(p.0)).collect();
    let ys: Vec<f64> = points.iter().map(|p| ln(p.1)).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Input("step sizes must not all be equal".into()));
    }
    Ok(sxy / sxx)
}

/// Observed order between consecutive points; `None` for the first.
pub fn running_orders(points: &[(f64, f64)]) -> Vec<Option<f64>> {
    (0..points.len())
        .map(|k| {
            (k > 0).then(|| {
                let (h0, e0) = points[k - 1];
                let (h1, e1) = points[k];
                ln(e0 / e1) / ln(h0 / h1)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergencePoint {
    pub dt: f64,
    pub error: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// (α = β = γ) used for the study.
    pub regularization: f64,
    pub points: Vec<ConvergencePoint>,
    /// `None` with fewer than two points.
    pub order: Option<f64>,
    /// Some optimization stopped before reaching its tolerance.
    pub flagged: bool,
}

impl ConvergenceReport {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.dt, p.error)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    pub lbfgs: LbfgsOptions,
    pub newton: NewtonConfig,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsOptions { tol: 1e-9, max_iter: 500, ..LbfgsOptions::default() },
            newton: NewtonConfig::default(),
        }
    }
}

/// One optimization of the six-pipe problem with Δt = Δx = dt and α = β = γ = reg,
/// started from the desired control.
pub fn optimize_six_pipe(
    dt: f64,
    reg: f64,
    opts: &StudyOptions,
) -> Result<(ConvergencePoint, Vec<Control>), Error> {
    let (net, demand) = build_six_pipe(points_for(dt))?;
    let steps = libm::round(1.0 / dt) as usize;
    let grid = TimeGrid::uniform(0.0, 1.0, steps)?;
    let desired = analytic_trajectory(&grid, &net);
    let x0 = desired.x[0].clone();
    let u0 = desired.u.clone();
    let cost = CostConfig::new(Weights::Constant([0.0; 3]), (reg, reg, reg), desired)?;
    let problem = Problem {
        net: &net,
        demand: &demand,
        grid: &grid,
        x0: &x0,
        cost: &cost,
        newton: opts.newton,
    };
    let res = minimize(&u0, &six_pipe_bounds(), &problem, &opts.lbfgs)?;
    let point = ConvergencePoint {
        dt,
        error: pump_error(&grid, &res.controls),
        iterations: res.iterations,
        converged: res.converged,
    };
    Ok((point, res.controls))
}

/// Pump-control error of the optimized six-pipe problem for every Δt.
pub fn convergence_study(dts: &[f64], reg: f64, opts: &StudyOptions) -> Result<ConvergenceReport, Error> {
    let mut points = Vec::with_capacity(dts.len());
    for &dt in dts {
        let (p, _) = optimize_six_pipe(dt, reg, opts)?;
        log::info!("dt = {dt}: pump error {:e} after {} iterations", p.error, p.iterations);
        points.push(p);
    }
    let flagged = points.iter().any(|p| !p.converged);
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.dt, p.error)).collect();
    let order = estimate_order(&pairs).ok();
    Ok(ConvergenceReport { regularization: reg, points, order, flagged })
}

/// State error of plain simulation with the analytic controls, Δt = Δx = dt.
pub fn integrator_error(dt: f64, newton: &NewtonConfig) -> Result<f64, Error> {
    let (net, demand) = build_six_pipe(points_for(dt))?;
    let steps = libm::round(1.0 / dt) as usize;
    let grid = TimeGrid::uniform(0.0, 1.0, steps)?;
    let reference = analytic_trajectory(&grid, &net);
    let traj = simulate(&reference.x[0], &reference.u, &grid, &net, &demand, newton)?;
    Ok(state_error(&traj, &net))
}
