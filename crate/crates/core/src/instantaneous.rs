//! Instantaneous control: one small optimization per time node.
//!
//! At node t_i the state is eliminated through the implicit Euler relation
//! from x_{i−1}, the algebraic variables through the closure, and the price
//! ω·u (plus an optional exterior penalty on state bounds) is minimized over
//! the three depot controls with a box-constrained dogleg trust-region method
//! on a BFGS model. The stacked solutions give a consistent initial value and
//! desired trajectories for the full optimization.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use crate::closure::{AlgebraicVector, Control, ControlBounds};
use crate::error::Error;
use crate::math::{cbrt, norm_inf, sqrt};
use crate::network::{DemandSeries, Network};
use crate::simulator::{solve_step, NewtonConfig, StepSolution, TimeGrid, Trajectory};

/// Bounds on individual state or algebraic entries, enforced by penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryBound {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    /// Violations are measured in units of `scale`.
    pub scale: f64,
}

impl EntryBound {
    fn violation(&self, value: f64) -> f64 {
        let v = if value < self.lower {
            self.lower - value
        } else if value > self.upper {
            value - self.upper
        } else {
            0.0
        };
        v / self.scale
    }
}

/// Bounds on x (by flat index) and y (by flat index into the blocked layout).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateBounds {
    pub x: Vec<EntryBound>,
    pub y: Vec<EntryBound>,
}

impl StateBounds {
    /// Minimum temperature on every forward-pipe cell and minimum pressure at
    /// both ends of every forward pipe.
    pub fn supply_minimum(net: &Network, temperature: f64, pressure: f64) -> Self {
        let n = net.n_pipes();
        let mut b = StateBounds::default();
        let bound = |index, lower: f64| EntryBound {
            index,
            lower,
            upper: f64::INFINITY,
            scale: lower.abs().max(1.0),
        };
        for i in net.forward_pipes() {
            for idx in net.layout().range(i) {
                b.x.push(bound(idx, temperature));
            }
            b.y.push(bound(2 * n + i, pressure));
            b.y.push(bound(3 * n + i, pressure));
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty() && self.y.is_empty()
    }

    /// Σ squared scaled violations.
    pub fn penalty(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq = |b: &EntryBound, v: f64| {
            let e = b.violation(v);
            e * e
        };
        self.x.iter().map(|b| sq(b, x[b.index])).sum::<f64>()
            + self.y.iter().map(|b| sq(b, y[b.index])).sum::<f64>()
    }

    /// Largest scaled violation.
    pub fn max_violation(&self, x: &[f64], y: &[f64]) -> f64 {
        self.x
            .iter()
            .map(|b| b.violation(x[b.index]))
            .chain(self.y.iter().map(|b| b.violation(y[b.index])))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegionConfig {
    /// Stop when ‖P(u − ∇φ) − u‖∞ <= this.
    pub gradient_tol: f64,
    pub min_radius: f64,
    pub max_iter: usize,
    /// Initial radius as a fraction of ‖u_b − u_a‖₂.
    pub initial_radius: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self { gradient_tol: 1e-6, min_radius: 1e-12, max_iter: 100, initial_radius: 0.1 }
    }
}

/// min_u ω·u + μ/2 · penalty(x(u), y(u)) subject to the implicit Euler step
/// from `x_prev` and u in the box.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryProblem<'a> {
    pub t: f64,
    pub x_prev: &'a [f64],
    pub dt: f64,
    pub omega: [f64; 3],
    pub bounds: ControlBounds,
    pub state_bounds: &'a StateBounds,
    /// μ
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    pub x: Vec<f64>,
    pub y: AlgebraicVector,
    pub u: Control,
    pub objective: f64,
    /// Objective at the projected starting control.
    pub initial_objective: f64,
    pub iterations: usize,
    pub projected_gradient: f64,
    /// Implicit Euler residual of the returned state.
    pub residual: f64,
    /// Stopped on the radius or iteration limit instead of the gradient test.
    pub flagged: bool,
}

struct Evaluator<'a, 'b> {
    prob: &'b StationaryProblem<'a>,
    net: &'b Network,
    demand: &'b DemandSeries,
    newton: &'b NewtonConfig,
    /// Last converged state, used as Newton guess.
    guess: Vec<f64>,
}

impl Evaluator<'_, '_> {
    fn solve(&mut self, u: &Control) -> Result<StepSolution, Error> {
        let p = self.prob;
        let s = solve_step(p.t, p.x_prev, u, p.dt, self.net, self.demand, self.newton, Some(&self.guess))
            .or_else(|_| solve_step(p.t, p.x_prev, u, p.dt, self.net, self.demand, self.newton, None))?;
        self.guess.clone_from(&s.x);
        Ok(s)
    }

    fn objective_of(&self, u: &Control, s: &StepSolution) -> f64 {
        let p = self.prob;
        let mut phi = p.omega.iter().zip(&u.0).map(|(w, v)| w * v).sum::<f64>();
        if !p.state_bounds.is_empty() {
            phi += 0.5 * p.penalty * p.state_bounds.penalty(&s.x, &s.y.to_flat());
        }
        phi
    }

    fn objective(&mut self, u: &Control) -> f64 {
        match self.solve(u) {
            Ok(s) => self.objective_of(u, &s),
            Err(_) => f64::INFINITY,
        }
    }

    /// Central differences, h = ε^{1/3} (1 + |u|).
    fn gradient(&mut self, u: &Control) -> Option<[f64; 3]> {
        let mut g = [0.0; 3];
        if self.prob.state_bounds.is_empty() {
            return Some(self.prob.omega);
        }
        for c in 0..3 {
            let h = cbrt(f64::EPSILON) * (1.0 + u.0[c].abs());
            let mut up = *u;
            up.0[c] += h;
            let fp = self.objective(&up);
            up.0[c] = u.0[c] - h;
            let fm = self.objective(&up);
            if !(fp.is_finite() && fm.is_finite()) {
                return None;
            }
            g[c] = (fp - fm) / (2.0 * h);
        }
        Some(g)
    }
}

fn projected_gradient(u: &Control, g: &[f64; 3], b: &ControlBounds) -> f64 {
    (0..3)
        .map(|i| ((u.0[i] - g[i]).clamp(b.lower.0[i], b.upper.0[i]) - u.0[i]).abs())
        .fold(0.0, f64::max)
}

/// Dogleg step for min gᵀp + ½pᵀBp, ‖p‖ <= radius, on the free components.
fn dogleg(b: &Matrix3<f64>, g: &Vector3<f64>, free: [bool; 3], radius: f64) -> Vector3<f64> {
    let mask = Vector3::from_fn(|i, _| if free[i] { 1.0 } else { 0.0 });
    let g = g.component_mul(&mask);
    let mut bf = *b;
    for i in 0..3 {
        for j in 0..3 {
            if !free[i] || !free[j] {
                bf[(i, j)] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
    let gn = g.norm();
    if gn == 0.0 {
        return Vector3::zeros();
    }
    let newton = bf.cholesky().map(|c| -c.solve(&g));
    if let Some(pn) = newton {
        if pn.norm() <= radius {
            return pn.component_mul(&mask);
        }
    }
    let gbg = g.dot(&(bf * g));
    if gbg <= 0.0 {
        return -g * (radius / gn);
    }
    let pu = -g * (g.dot(&g) / gbg);
    if pu.norm() >= radius {
        return pu * (radius / pu.norm());
    }
    let Some(pn) = newton else { return pu };
    // pu + τ (pn − pu) on the boundary
    let d = pn - pu;
    let (a2, a1, a0) = (d.dot(&d), 2.0 * pu.dot(&d), pu.dot(&pu) - radius * radius);
    let tau = (-a1 + sqrt(a1 * a1 - 4.0 * a2 * a0)) / (2.0 * a2);
    (pu + d * tau).component_mul(&mask)
}

/// One stationary problem, solved from `u_init` (projected to the box).
pub fn solve_stationary_step(
    prob: &StationaryProblem,
    net: &Network,
    demand: &DemandSeries,
    u_init: &Control,
    tr: &TrustRegionConfig,
    newton: &NewtonConfig,
) -> Result<StationarySolution, Error> {
    let b = prob.bounds;
    let mut ev = Evaluator { prob, net, demand, newton, guess: prob.x_prev.to_vec() };
    let mut u = b.project(u_init);
    let mut sol = ev.solve(&u)?;
    let mut phi = ev.objective_of(&u, &sol);
    let initial_objective = phi;
    let mut g = ev.gradient(&u).ok_or(Error::NewtonFailed { iterations: 0, residual: f64::NAN })?;
    ev.guess.clone_from(&sol.x);

    let width = (0..3).map(|i| { let w = b.upper.0[i] - b.lower.0[i]; w * w }).sum::<f64>();
    let mut radius = tr.initial_radius * sqrt(width);
    if !(radius > 0.0) || !radius.is_finite() {
        radius = 1.0;
    }
    let gnorm = sqrt(g.iter().map(|v| v * v).sum::<f64>());
    let mut hess = Matrix3::identity() * if gnorm > 0.0 { gnorm / radius } else { 1.0 };

    let mut iterations = 0;
    let mut flagged = false;
    let mut pg = projected_gradient(&u, &g, &b);
    while pg > tr.gradient_tol {
        if radius < tr.min_radius || iterations >= tr.max_iter {
            flagged = true;
            break;
        }
        iterations += 1;
        let free: [bool; 3] = core::array::from_fn(|i| {
            !((u.0[i] <= b.lower.0[i] && g[i] > 0.0) || (u.0[i] >= b.upper.0[i] && g[i] < 0.0))
        });
        let gv = Vector3::from(g);
        let p = dogleg(&hess, &gv, free, radius);
        let trial = b.project(&Control([u.0[0] + p[0], u.0[1] + p[1], u.0[2] + p[2]]));
        let s = Vector3::from_fn(|i, _| trial.0[i] - u.0[i]);
        let snorm = s.norm();
        if snorm == 0.0 {
            radius *= 0.25;
            continue;
        }
        let pred = -(gv.dot(&s) + 0.5 * s.dot(&(hess * s)));
        let trial_sol = ev.solve(&trial).ok();
        let phi_t = trial_sol.as_ref().map_or(f64::INFINITY, |ts| ev.objective_of(&trial, ts));
        let ared = phi - phi_t;
        let ratio = if pred > 0.0 { ared / pred } else { -1.0 };
        if ratio < 0.25 {
            radius = 0.25 * snorm;
        } else if ratio > 0.75 && snorm >= 0.99 * radius {
            radius *= 2.0;
        }
        if ratio > 1e-4 && ared > 0.0 {
            let Some(gt) = ev.gradient(&trial) else {
                radius = 0.25 * snorm;
                continue;
            };
            let y = Vector3::from_fn(|i, _| gt[i] - g[i]);
            let sy = s.dot(&y);
            if sy > 1e-12 * snorm * y.norm() {
                let bs = hess * s;
                hess += y * y.transpose() / sy - bs * bs.transpose() / s.dot(&bs);
            }
            u = trial;
            sol = trial_sol.expect("finite objective");
            ev.guess.clone_from(&sol.x);
            phi = phi_t;
            g = gt;
            pg = projected_gradient(&u, &g, &b);
        }
    }
    Ok(StationarySolution {
        x: sol.x,
        y: sol.y,
        u,
        objective: phi,
        initial_objective,
        iterations,
        projected_gradient: pg,
        residual: sol.residual,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstantConfig {
    pub omega: [f64; 3],
    pub bounds: ControlBounds,
    pub state_bounds: StateBounds,
    /// Penalty weight μ for `state_bounds`.
    pub penalty: f64,
    pub trust_region: TrustRegionConfig,
    pub newton: NewtonConfig,
    /// Step used for the frozen-time solves at t_0; defaults to the first grid
    /// step (or 1 s on a single-node grid).
    pub warmup_dt: Option<f64>,
    /// Maximum number of frozen-time solves at t_0 (at least one is done).
    pub warmup_steps: usize,
    /// Warm-up stops once ‖x_k − x_{k−1}‖∞ <= this.
    pub warmup_tol: f64,
}

impl InstantConfig {
    pub fn new(omega: [f64; 3], bounds: ControlBounds) -> Self {
        Self {
            omega,
            bounds,
            state_bounds: StateBounds::default(),
            penalty: 1e4,
            trust_region: TrustRegionConfig::default(),
            newton: NewtonConfig::default(),
            warmup_dt: None,
            warmup_steps: 1,
            warmup_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub t: f64,
    pub iterations: usize,
    pub objective: f64,
    pub projected_gradient: f64,
    pub residual: f64,
    pub flagged: bool,
    /// The solve failed; the previous control was kept.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstantResult {
    /// One stationary solution per grid node; node 0 is the consistent
    /// initial value.
    pub trajectory: Trajectory,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Frozen-time solves performed at t_0.
    pub warmup_iterations: usize,
}

impl InstantResult {
    pub fn initial_state(&self) -> &[f64] {
        &self.trajectory.x[0]
    }

    pub fn any_failed(&self) -> bool {
        self.diagnostics.iter().any(|d| d.failed)
    }
}

/// Initial guess: T̄_out + 10 on forward pipes, T̄_out on return pipes.
pub fn default_initial_guess(net: &Network, t: f64) -> Vec<f64> {
    let t_out = net.global().t_out(t);
    let mut x = vec![t_out; net.state_dim()];
    for i in net.forward_pipes() {
        for idx in net.layout().range(i) {
            x[idx] = t_out + 10.0;
        }
    }
    x
}

/// Runs the stationary problems over `grid`, warm-starting each from the
/// previous control (the box midpoint at t_0).
pub fn run_instantaneous(
    grid: &TimeGrid,
    x_guess: &[f64],
    net: &Network,
    demand: &DemandSeries,
    cfg: &InstantConfig,
) -> Result<InstantResult, Error> {
    if x_guess.len() != net.state_dim() {
        return Err(Error::StateShape { expected: net.state_dim(), got: x_guess.len() });
    }
    let warm_dt = cfg.warmup_dt.unwrap_or(if grid.len() > 1 { grid.dt(1) } else { 1.0 });
    let stationary = |t: f64, x_prev: &[f64], dt: f64, u: &Control| {
        let prob = StationaryProblem {
            t,
            x_prev,
            dt,
            omega: cfg.omega,
            bounds: cfg.bounds,
            state_bounds: &cfg.state_bounds,
            penalty: cfg.penalty,
        };
        solve_stationary_step(&prob, net, demand, u, &cfg.trust_region, &cfg.newton)
    };
    let diag = |t: f64, s: &StationarySolution| StepDiagnostics {
        t,
        iterations: s.iterations,
        objective: s.objective,
        projected_gradient: s.projected_gradient,
        residual: s.residual,
        flagged: s.flagged,
        failed: false,
    };

    let t0 = grid.t0();
    let mut x = x_guess.to_vec();
    let mut u = cfg.bounds.midpoint();
    let mut warmup_iterations = 0;
    let mut first = None;
    while warmup_iterations < cfg.warmup_steps.max(1) {
        let s = stationary(t0, &x, warm_dt, &u).map_err(|e| e.at_step(0))?;
        warmup_iterations += 1;
        let change = norm_inf(&s.x.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        x.clone_from(&s.x);
        u = s.u;
        first = Some(s);
        if change <= cfg.warmup_tol {
            break;
        }
    }
    let first = first.expect("at least one warm-up solve");
    log::info!("warm-up finished after {warmup_iterations} frozen-time solves");

    let mut traj = Trajectory {
        grid: grid.clone(),
        x: Vec::with_capacity(grid.len()),
        y: Vec::with_capacity(grid.len()),
        u: Vec::with_capacity(grid.len()),
    };
    let mut diagnostics = vec![diag(t0, &first)];
    traj.x.push(first.x);
    traj.y.push(first.y);
    traj.u.push(first.u);

    for n in 1..grid.len() {
        let (t, dt) = (grid.t(n), grid.dt(n));
        let u_prev = traj.u[n - 1];
        match stationary(t, &traj.x[n - 1], dt, &u_prev) {
            Ok(s) => {
                diagnostics.push(diag(t, &s));
                traj.x.push(s.x);
                traj.y.push(s.y);
                traj.u.push(s.u);
            }
            Err(e) => {
                log::warn!("stationary problem at t = {t} failed ({e}); keeping previous control");
                let s = solve_step(t, &traj.x[n - 1], &u_prev, dt, net, demand, &cfg.newton, None)
                    .map_err(|e| e.at_step(n))?;
                diagnostics.push(StepDiagnostics {
                    t,
                    iterations: 0,
                    objective: f64::NAN,
                    projected_gradient: f64::NAN,
                    residual: s.residual,
                    flagged: true,
                    failed: true,
                });
                traj.x.push(s.x);
                traj.y.push(s.y);
                traj.u.push(u_prev);
            }
        }
    }
    Ok(InstantResult { trajectory: traj, diagnostics, warmup_iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dogleg_takes_newton_step_inside_radius() {
        let b = Matrix3::identity() * 2.0;
        let g = Vector3::new(1.0, -2.0, 0.5);
        let p = dogleg(&b, &g, [true; 3], 10.0);
        assert!((p - Vector3::new(-0.5, 1.0, -0.25)).norm() < 1e-14);
        let p = dogleg(&b, &g, [true, false, true], 10.0);
        assert_eq!(p[1], 0.0);
        let p = dogleg(&b, &g, [true; 3], 0.1);
        assert!((p.norm() - 0.1).abs() < 1e-14);
    }

    #[test]
    fn entry_bound_violation() {
        let b = EntryBound { index: 0, lower: 70.0, upper: f64::INFINITY, scale: 70.0 };
        assert_eq!(b.violation(80.0), 0.0);
        assert_eq!(b.violation(63.0), 0.1);
    }
}
