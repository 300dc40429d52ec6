//! Discretize-before-optimize: cost on the implicit Euler grid, reduced
//! gradients and a projected L-BFGS method for box-constrained controls.
//!
//! The cost integral uses the implicit Euler nodes: sample n >= 1 carries the
//! weight Δt_n, the initial sample none. Controls are indexed like the grid,
//! so u_0 only enters y_0 and its gradient is zero.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::closure::{assemble_algebraic, AlgebraicVector, Control, ControlBounds};
use crate::error::Error;
use crate::math::{cbrt, dot, norm2, sqrt};
use crate::network::{DemandSeries, Network};
use crate::simulator::{
    rhs, rhs_with_algebraic, simulate, solve_step, step_matrix, NewtonConfig, TimeGrid,
    Trajectory,
};

/// Price weights ω (per W), constant or one triple per grid node.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Constant([f64; 3]),
    PerNode(Vec<[f64; 3]>),
}

impl Weights {
    pub fn at(&self, n: usize) -> [f64; 3] {
        match self {
            Weights::Constant(w) => *w,
            Weights::PerNode(ws) => ws[n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostConfig {
    pub omega: Weights,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// (x_d, y_d, u_d), sampled on the optimization grid.
    pub desired: Trajectory,
}

impl CostConfig {
    pub fn new(
        omega: Weights,
        (alpha, beta, gamma): (f64, f64, f64),
        desired: Trajectory,
    ) -> Result<Self, Error> {
        if !(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0) {
            return Err(Error::Input("regularization weights must be non-negative".into()));
        }
        if let Weights::PerNode(ws) = &omega {
            if ws.len() != desired.len() {
                return Err(Error::GridMismatch("one weight triple per node is required"));
            }
        }
        Ok(Self { omega, alpha, beta, gamma, desired })
    }
}

/// J and its penalty-free part Ĵ = Σ w_n ω·u_n.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostValue {
    pub total: f64,
    pub operating: f64,
}

/// Quadrature weight of node n.
pub fn node_weight(grid: &TimeGrid, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        grid.dt(n)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Unweighted integrand (full, operating part) at node n.
fn stage(cfg: &CostConfig, n: usize, x: &[f64], y: &AlgebraicVector, u: &Control) -> (f64, f64) {
    let d = &cfg.desired;
    let operating = dot(&cfg.omega.at(n), &u.0);
    let mut full = operating;
    if cfg.alpha != 0.0 {
        full += 0.5 * cfg.alpha * sq_dist(x, &d.x[n]);
    }
    if cfg.beta != 0.0 {
        full += 0.5 * cfg.beta * sq_dist(&y.to_flat(), &d.y[n].to_flat());
    }
    if cfg.gamma != 0.0 {
        full += 0.5 * cfg.gamma * sq_dist(&u.0, &d.u[n].0);
    }
    (full, operating)
}

fn check_grid(traj: &Trajectory, cfg: &CostConfig) -> Result<(), Error> {
    let a = traj.grid.nodes();
    let b = cfg.desired.grid.nodes();
    if a.len() != b.len() {
        return Err(Error::GridMismatch("different number of time nodes"));
    }
    if a.iter().zip(b).any(|(s, t)| (s - t).abs() > 1e-9 * (1.0 + s.abs())) {
        return Err(Error::GridMismatch("time nodes differ"));
    }
    if traj.x.first().map(Vec::len) != cfg.desired.x.first().map(Vec::len) {
        return Err(Error::GridMismatch("state dimension differs"));
    }
    Ok(())
}

/// J = Σ_n w_n [ω·u_n + α/2‖x_n − x_d‖² + β/2‖y_n − y_d‖² + γ/2‖u_n − u_d‖²].
pub fn evaluate_cost(traj: &Trajectory, cfg: &CostConfig) -> Result<CostValue, Error> {
    check_grid(traj, cfg)?;
    let mut c = CostValue::default();
    for n in 1..traj.len() {
        let w = node_weight(&traj.grid, n);
        let (full, op) = stage(cfg, n, &traj.x[n], &traj.y[n], &traj.u[n]);
        c.total += w * full;
        c.operating += w * op;
    }
    Ok(c)
}

/// Everything the reduced cost depends on besides the controls.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub net: &'a Network,
    pub demand: &'a DemandSeries,
    pub grid: &'a TimeGrid,
    pub x0: &'a [f64],
    pub cost: &'a CostConfig,
    pub newton: NewtonConfig,
}

/// Simulate, then evaluate the cost.
pub fn reduced_cost(u: &[Control], p: &Problem) -> Result<(CostValue, Trajectory), Error> {
    let traj = simulate(p.x0, u, p.grid, p.net, p.demand, &p.newton)?;
    let c = evaluate_cost(&traj, p.cost)?;
    Ok((c, traj))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMethod {
    /// Central differences, one re-simulation per perturbed sample.
    FiniteDifference,
    /// Discrete adjoint of the implicit Euler scheme.
    Adjoint,
    /// Adjoint if it agrees with central differences at the first iterate,
    /// finite differences otherwise.
    Auto,
}

/// Central-difference gradient, h = √ε (1 + |u|). Each perturbation of u_n
/// re-simulates from step n only.
pub fn reduced_gradient_fd(
    u: &[Control],
    p: &Problem,
    base: Option<&Trajectory>,
) -> Result<Vec<[f64; 3]>, Error> {
    let owned;
    let traj = match base {
        Some(t) => t,
        None => {
            owned = reduced_cost(u, p)?.1;
            &owned
        }
    };
    check_grid(traj, p.cost)?;
    let len = p.grid.len();
    let mut prefix = vec![0.0; len + 1];
    for n in 0..len {
        let w = node_weight(p.grid, n);
        let full = if w == 0.0 { 0.0 } else { stage(p.cost, n, &traj.x[n], &traj.y[n], &u[n]).0 };
        prefix[n + 1] = prefix[n] + w * full;
    }
    let mut grad = vec![[0.0; 3]; len];
    let mut work = u.to_vec();
    for n in 1..len {
        for c in 0..3 {
            let h = sqrt(f64::EPSILON) * (1.0 + u[n].0[c].abs());
            let mut vals = [0.0; 2];
            for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
                work[n].0[c] = u[n].0[c] + sign * h;
                let mut total = prefix[n];
                let mut x_prev = traj.x[n - 1].clone();
                for m in n..len {
                    let s = solve_step(
                        p.grid.t(m),
                        &x_prev,
                        &work[m],
                        p.grid.dt(m),
                        p.net,
                        p.demand,
                        &p.newton,
                        Some(&traj.x[m]),
                    )
                    .map_err(|e| e.at_step(m))?;
                    total += p.grid.dt(m) * stage(p.cost, m, &s.x, &s.y, &work[m]).0;
                    x_prev = s.x;
                }
                vals[k] = total;
            }
            work[n].0[c] = u[n].0[c];
            grad[n][c] = (vals[0] - vals[1]) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Discrete adjoint gradient.
///
/// With M_n = I − Δt_n ∂F/∂x at (t_n, x_n, u_n), the multipliers solve
/// M_nᵀ λ_n = ∂ℓ_n/∂x_n + λ_{n+1} backwards in time, and
/// ∂J/∂u_n = ∂ℓ_n/∂u_n + Δt_n (∂F/∂u)ᵀ λ_n. The sensitivities of y to x (only
/// through outlet cells) and of y, F to u (affine) are differenced.
pub fn reduced_gradient_adjoint(
    u: &[Control],
    p: &Problem,
    base: Option<&Trajectory>,
) -> Result<Vec<[f64; 3]>, Error> {
    let owned;
    let traj = match base {
        Some(t) => t,
        None => {
            owned = reduced_cost(u, p)?.1;
            &owned
        }
    };
    check_grid(traj, p.cost)?;
    let cfg = p.cost;
    let len = p.grid.len();
    let nx = p.x0.len();
    let layout = p.net.layout();
    let mut grad = vec![[0.0; 3]; len];
    let mut lambda = vec![0.0; nx];
    for n in (1..len).rev() {
        let (t, dt) = (p.grid.t(n), p.grid.dt(n));
        let w = dt;
        let x = &traj.x[n];
        let un = &u[n];
        let d = &cfg.desired;

        let mut dldx: Vec<f64> = if cfg.alpha != 0.0 {
            x.iter().zip(&d.x[n]).map(|(a, b)| w * cfg.alpha * (a - b)).collect()
        } else {
            vec![0.0; nx]
        };
        let omega = cfg.omega.at(n);
        let mut dldu: [f64; 3] =
            core::array::from_fn(|c| omega[c] + cfg.gamma * (un.0[c] - d.u[n].0[c]));
        if cfg.beta != 0.0 {
            let y = traj.y[n].to_flat();
            let ry: Vec<f64> =
                y.iter().zip(d.y[n].to_flat()).map(|(a, b)| cfg.beta * (a - b)).collect();
            let mut xp = x.clone();
            for i in 0..p.net.n_pipes() {
                let s = layout.outlet(i);
                let h = sqrt(f64::EPSILON) * (1.0 + x[s].abs());
                xp[s] = x[s] + h;
                let yp = assemble_algebraic(t, &xp, un, p.net, p.demand)
                    .map_err(|e| e.at_step(n))?
                    .to_flat();
                xp[s] = x[s];
                let dy: f64 = yp.iter().zip(&y).zip(&ry).map(|((a, b), r)| r * (a - b)).sum();
                dldx[s] += w * dy / h;
            }
            for c in 0..3 {
                let mut up = *un;
                let h = 1.0 + un.0[c].abs();
                up.0[c] += h;
                let yp = assemble_algebraic(t, x, &up, p.net, p.demand)
                    .map_err(|e| e.at_step(n))?
                    .to_flat();
                dldu[c] += yp.iter().zip(&y).zip(&ry).map(|((a, b), r)| r * (a - b)).sum::<f64>() / h;
            }
        }

        let (f0, _) = rhs_with_algebraic(t, x, un, p.net, p.demand).map_err(|e| e.at_step(n))?;
        let factor = step_matrix(t, x, un, dt, p.net, p.demand, &f0)
            .map_err(|e| e.at_step(n))?
            .factor()
            .ok_or(Error::NewtonFailed { iterations: 0, residual: f64::NAN })
            .map_err(|e| e.at_step(n))?;
        for (l, g) in lambda.iter_mut().zip(&dldx) {
            *l += g;
        }
        lambda = factor.solve_transpose(&lambda);

        for c in 0..3 {
            let mut up = *un;
            let h = 1.0 + un.0[c].abs();
            up.0[c] += h;
            let fp = rhs(t, x, &up, p.net, p.demand).map_err(|e| e.at_step(n))?;
            let fu_lambda: f64 =
                fp.iter().zip(&f0).zip(&lambda).map(|((a, b), l)| l * (a - b)).sum::<f64>() / h;
            grad[n][c] = w * dldu[c] + dt * fu_lambda;
        }
    }
    Ok(grad)
}

fn flatten(u: &[Control]) -> Vec<f64> {
    u.iter().flat_map(|c| c.0).collect()
}

fn unflatten(z: &[f64]) -> Vec<Control> {
    z.chunks_exact(3).map(|c| Control([c[0], c[1], c[2]])).collect()
}

/// Deterministic quasi-random directions in [-1, 1], scaled by 1 + |u|,
/// zero on the initial sample.
fn probe_direction(u: &[f64], k: usize) -> Vec<f64> {
    const PHI: f64 = 0.618_033_988_749_894_9;
    u.iter()
        .enumerate()
        .map(|(i, ui)| {
            if i < 3 {
                return 0.0;
            }
            let s = ((i + 1) as f64 * (k as f64 + 1.0) * PHI + 0.5 * k as f64) % 1.0;
            (2.0 * s - 1.0) * (1.0 + ui.abs())
        })
        .collect()
}

/// Largest relative mismatch between gᵀd and a central difference of J along
/// `directions` deterministic directions.
pub fn gradient_check(
    u: &[Control],
    grad: &[[f64; 3]],
    p: &Problem,
    directions: usize,
) -> Result<f64, Error> {
    let z = flatten(u);
    let g: Vec<f64> = grad.iter().flatten().copied().collect();
    let mut worst: f64 = 0.0;
    for k in 0..directions {
        let d = probe_direction(&z, k);
        let h = cbrt(f64::EPSILON);
        let at = |s: f64| -> Result<f64, Error> {
            let zs: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + s * b).collect();
            Ok(reduced_cost(&unflatten(&zs), p)?.0.total)
        };
        let (jp, jm) = (at(h)?, at(-h)?);
        let fd = (jp - jm) / (2.0 * h);
        let an = dot(&g, &d);
        let scale = an.abs().max(fd.abs());
        let noise = f64::EPSILON * (1.0 + jp.abs()) / h;
        let err = if scale <= 100.0 * noise { 0.0 } else { (an - fd).abs() / scale };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Tolerance of the adjoint-versus-differences gate.
pub const ADJOINT_GATE_TOL: f64 = 1e-5;

/// Gradient with the requested method; `Auto` runs the gate and reports
/// which method was used.
pub fn reduced_gradient(
    u: &[Control],
    p: &Problem,
    method: GradientMethod,
    base: Option<&Trajectory>,
) -> Result<(Vec<[f64; 3]>, GradientMethod), Error> {
    match method {
        GradientMethod::FiniteDifference => {
            Ok((reduced_gradient_fd(u, p, base)?, GradientMethod::FiniteDifference))
        }
        GradientMethod::Adjoint => Ok((reduced_gradient_adjoint(u, p, base)?, method)),
        GradientMethod::Auto => {
            let g = reduced_gradient_adjoint(u, p, base)?;
            let err = gradient_check(u, &g, p, 3)?;
            if err <= ADJOINT_GATE_TOL {
                Ok((g, GradientMethod::Adjoint))
            } else {
                log::warn!("adjoint gradient off by {err:e} relative; using finite differences");
                Ok((reduced_gradient_fd(u, p, base)?, GradientMethod::FiniteDifference))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Stop when ‖P(u − ∇J) − u‖∞ <= tol.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo constant.
    pub c1: f64,
    pub max_backtracks: usize,
    pub gradient: GradientMethod,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            tol: 1e-4,
            max_iter: 200,
            c1: 1e-4,
            max_backtracks: 30,
            gradient: GradientMethod::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub controls: Vec<Control>,
    pub cost: CostValue,
    pub trajectory: Trajectory,
    /// Projected-gradient ∞-norm at every iterate, starting with u0.
    pub pg_history: Vec<f64>,
    pub iterations: usize,
    /// The stopping tolerance was reached.
    pub converged: bool,
    pub line_search_failed: bool,
    pub gradient: GradientMethod,
    /// Number of cost evaluations (simulations).
    pub evaluations: usize,
    /// Seconds; filled in by callers that have a clock.
    pub wall_time: Option<f64>,
}

fn bounds_flat(bounds: &ControlBounds, len: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = (0..len).flat_map(|_| bounds.lower.0).collect();
    let hi = (0..len).flat_map(|_| bounds.upper.0).collect();
    (lo, hi)
}

fn project(z: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    z.iter().zip(lo.iter().zip(hi)).map(|(v, (a, b))| v.clamp(*a, *b)).collect()
}

/// ‖P(u − g) − u‖∞
pub fn projected_gradient_norm(z: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    z.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .fold(0.0, |m, ((u, g), (a, b))| m.max(((u - g).clamp(*a, *b) - u).abs()))
}

/// Projected L-BFGS with an Armijo search along the projected path.
///
/// Variables at a bound whose gradient points outward are held fixed for the
/// step; the two-loop recursion acts on the rest.
pub fn minimize(
    u0: &[Control],
    bounds: &ControlBounds,
    p: &Problem,
    opts: &LbfgsOptions,
) -> Result<OptimizeResult, Error> {
    let len = p.grid.len();
    if u0.len() != len {
        return Err(Error::GridMismatch("one control sample per time node is required"));
    }
    let (lo, hi) = bounds_flat(bounds, len);
    let mut z = project(&flatten(u0), &lo, &hi);
    let mut evaluations = 1;
    let (mut cost, mut traj) = reduced_cost(&unflatten(&z), p)?;
    let (g0, mut method) = reduced_gradient(&unflatten(&z), p, opts.gradient, Some(&traj))?;
    let mut g: Vec<f64> = g0.iter().flatten().copied().collect();
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut pg_history = vec![projected_gradient_norm(&z, &g, &lo, &hi)];
    let mut iterations = 0;
    let mut converged = false;
    let mut line_search_failed = false;

    loop {
        let pg = *pg_history.last().expect("non-empty");
        if pg <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let free: Vec<bool> = (0..z.len())
            .map(|i| !((z[i] <= lo[i] && g[i] > 0.0) || (z[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let mask = |v: &mut Vec<f64>| {
            for (x, f) in v.iter_mut().zip(&free) {
                if !f {
                    *x = 0.0;
                }
            }
        };

        let mut q = g.clone();
        mask(&mut q);
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = memory.back() {
            let scale = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= scale);
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        mask(&mut d);
        if dot(&g, &d) >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            mask(&mut d);
            memory.clear();
        }
        let fresh = memory.is_empty();
        let mut step = if fresh { 1.0 / norm2(&d).max(f64::MIN_POSITIVE) } else { 1.0 };

        let trial = |s: f64, evaluations: &mut usize| {
            let zt: Vec<f64> = project(
                &z.iter().zip(&d).map(|(a, b)| a + s * b).collect::<Vec<_>>(),
                &lo,
                &hi,
            );
            *evaluations += 1;
            let res = reduced_cost(&unflatten(&zt), p).ok();
            (zt, res)
        };
        let armijo = |zt: &[f64], jt: f64| {
            let decrease: f64 = g.iter().zip(zt.iter().zip(&z)).map(|(gi, (a, b))| gi * (a - b)).sum();
            jt <= cost.total + opts.c1 * decrease.min(0.0) && jt <= cost.total
                && zt.iter().zip(&z).any(|(a, b)| a != b)
        };

        let mut accepted = None;
        for k in 0..=opts.max_backtracks {
            let (zt, res) = trial(step, &mut evaluations);
            if let Some((ct, tt)) = res {
                if ct.total.is_finite() && armijo(&zt, ct.total) {
                    accepted = Some((zt, ct, tt, k));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((mut zn, mut cn, mut tn, backtracks)) = accepted else {
            line_search_failed = true;
            break;
        };
        if fresh && backtracks == 0 {
            // no curvature information yet: extrapolate while it pays off
            for _ in 0..40 {
                step *= 2.0;
                let (zt, res) = trial(step, &mut evaluations);
                match res {
                    Some((ct, tt)) if ct.total < cn.total && armijo(&zt, ct.total) => {
                        (zn, cn, tn) = (zt, ct, tt);
                    }
                    _ => break,
                }
            }
        }

        let un = unflatten(&zn);
        let (gn, m) = reduced_gradient(&un, p, method, Some(&tn))?;
        method = m;
        let gn: Vec<f64> = gn.iter().flatten().copied().collect();
        let s: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) && sy > 0.0 {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        z = zn;
        g = gn;
        cost = cn;
        traj = tn;
        iterations += 1;
        pg_history.push(projected_gradient_norm(&z, &g, &lo, &hi));
        log::debug!("iteration {iterations}: J = {:e}, pg = {:e}", cost.total, pg_history[iterations]);
    }

    Ok(OptimizeResult {
        controls: unflatten(&z),
        cost,
        trajectory: traj,
        pg_history,
        iterations,
        converged,
        line_search_failed,
        gradient: method,
        evaluations,
        wall_time: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projected_gradient_respects_bounds() {
        let z = [0.0, 1.0, 0.5];
        let g = [1.0, -1.0, 0.25];
        let lo = [0.0; 3];
        let hi = [1.0; 3];
        assert_eq!(projected_gradient_norm(&z, &g, &lo, &hi), 0.25);
    }

    #[test]
    fn probe_directions_skip_initial_sample() {
        let d = probe_direction(&[1.0; 9], 2);
        assert_eq!(&d[..3], [0.0; 3]);
        assert!(d[3..].iter().all(|v| v.abs() <= 2.0 && *v != 0.0));
    }
}
