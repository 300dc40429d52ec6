//! Method-of-lines right-hand side and implicit Euler integration.
//!
//! Every pipe carries first-order upwind transport with a linear heat loss:
//! Ṫ_{i,j} = −(v_i/Δx_i)(T_{i,j} − T_{i,j−1}) − κ_i (T_{i,j} − T_ext), with
//! κ_i = 4k/(c_p d ρ). The inlet T_{i,1} and velocity v_i come from the
//! closure, so the reduced system is an ODE in the interior temperatures.

use alloc::vec;
use alloc::vec::Vec;

use crate::closure::{assemble_algebraic, check_state, AlgebraicVector, Control};
use crate::error::Error;
use crate::linalg::{BorderedBidiagonal, BorderedFactor};
use crate::math::{norm_inf, sqrt};
use crate::network::{DemandSeries, Network};

/// Time nodes t_0 < t_1 < ... < t_n; step n spans (t_{n−1}, t_n].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self, Error> {
        if nodes.is_empty() {
            return Err(Error::Grid("no time nodes"));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::Grid("non-finite time node"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Grid("time nodes must be strictly increasing"));
        }
        Ok(Self { nodes })
    }

    /// `steps` equal steps on [t0, tf]; `steps = 0` gives the single node t0.
    pub fn uniform(t0: f64, tf: f64, steps: usize) -> Result<Self, Error> {
        if steps == 0 {
            return Self::new(vec![t0]);
        }
        if !(tf > t0) {
            return Err(Error::Grid("tf must exceed t0"));
        }
        let h = (tf - t0) / steps as f64;
        let mut nodes: Vec<f64> = (0..=steps).map(|n| t0 + h * n as f64).collect();
        nodes[steps] = tf;
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn t(&self, n: usize) -> f64 {
        self.nodes[n]
    }

    /// t_n − t_{n−1}, for n >= 1.
    pub fn dt(&self, n: usize) -> f64 {
        self.nodes[n] - self.nodes[n - 1]
    }

    pub fn t0(&self) -> f64 {
        self.nodes[0]
    }

    pub fn tf(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }
}

/// Samples of (x, y, u) at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<AlgebraicVector>,
    pub u: Vec<Control>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear interpolation onto another grid, held constant outside this one.
    pub fn resample(&self, grid: &TimeGrid) -> Trajectory {
        let src = self.grid.nodes();
        let locate = |t: f64| -> (usize, usize, f64) {
            let last = src.len() - 1;
            if t <= src[0] {
                return (0, 0, 0.0);
            }
            if t >= src[last] {
                return (last, last, 0.0);
            }
            let k = src.partition_point(|&s| s <= t);
            (k - 1, k, (t - src[k - 1]) / (src[k] - src[k - 1]))
        };
        let lerp = |a: &[f64], b: &[f64], w: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(p, q)| p + w * (q - p)).collect()
        };
        let mut out = Trajectory {
            grid: grid.clone(),
            x: Vec::with_capacity(grid.len()),
            y: Vec::with_capacity(grid.len()),
            u: Vec::with_capacity(grid.len()),
        };
        for &t in grid.nodes() {
            let (a, b, w) = locate(t);
            out.x.push(lerp(&self.x[a], &self.x[b], w));
            let y = lerp(&self.y[a].to_flat(), &self.y[b].to_flat(), w);
            out.y.push(AlgebraicVector::from_flat(&y).expect("flat length"));
            out.u.push(Control(lerp(&self.u[a].0, &self.u[b].0, w).try_into().expect("3")));
        }
        out
    }
}

/// Upwind transport with heat loss for given inlet temperatures and velocities.
pub fn transport(x: &[f64], t_in: &[f64], v: &[f64], net: &Network) -> Vec<f64> {
    let g = net.global();
    let layout = net.layout();
    let mut out = vec![0.0; x.len()];
    for (i, pipe) in net.pipes().iter().enumerate() {
        let rate = v[i] / pipe.params.dx();
        let kappa = pipe.params.cooling_rate(g);
        let mut upwind = t_in[i];
        for idx in layout.range(i) {
            out[idx] = -rate * (x[idx] - upwind) - kappa * (x[idx] - g.external_temperature);
            upwind = x[idx];
        }
    }
    out
}

/// F(t, x) = f(t, x, 𝗒(t, x, u), u), together with the algebraic vector.
pub fn rhs_with_algebraic(
    t: f64,
    x: &[f64],
    u: &Control,
    net: &Network,
    demand: &DemandSeries,
) -> Result<(Vec<f64>, AlgebraicVector), Error> {
    let y = assemble_algebraic(t, x, u, net, demand)?;
    let f = transport(x, &y.t_in, &y.v, net);
    Ok((f, y))
}

pub fn rhs(
    t: f64,
    x: &[f64],
    u: &Control,
    net: &Network,
    demand: &DemandSeries,
) -> Result<Vec<f64>, Error> {
    rhs_with_algebraic(t, x, u, net, demand).map(|(f, _)| f)
}

/// The right-hand side with the inlet temperatures substituted, written so
/// that it is affine in (y, u) for fixed (t, x).
///
/// The first cell of each pipe sees the inflow flux v_i T_{i,1} replaced by
/// v_1 T_{N,n_N} + (P_w + P_g)/(A_1 ρ c_p) for the depot pipe, v_i T̄_out
/// behind a consumer, v_i T_{parent,n} in the forward network and
/// Σ A_s v_s T_{s,n_s} / A_i in the return network. Only `y.v` and `u` are read.
pub fn flux_form(t: f64, x: &[f64], y: &AlgebraicVector, u: &Control, net: &Network) -> Vec<f64> {
    let g = net.global();
    let layout = net.layout();
    let pipes = net.pipes();
    let v = &y.v;
    let depot = net.depot();
    let outlet = |i: usize| x[layout.outlet(i)];
    let mut out = vec![0.0; x.len()];
    for (i, pipe) in pipes.iter().enumerate() {
        let dx = pipe.params.dx();
        let kappa = pipe.params.cooling_rate(g);
        let inflow = if i == depot.pipe_first {
            v[i] * outlet(depot.pipe_last)
                + u.heat() / (pipe.params.area * g.density * g.heat_capacity)
        } else if net.consumer_draining_into(i).is_some() {
            v[i] * g.t_out(t)
        } else if net.is_forward(i) {
            v[i] * outlet(net.incoming(pipe.from)[0])
        } else {
            net.incoming(pipe.from)
                .iter()
                .map(|&s| pipes[s].params.area * v[s] * outlet(s))
                .sum::<f64>()
                / pipe.params.area
        };
        let range = layout.range(i);
        let first = range.start;
        out[first] = -(v[i] * x[first] - inflow) / dx
            - kappa * (x[first] - g.external_temperature);
        for idx in range.skip(1) {
            out[idx] = -(v[i] / dx) * (x[idx] - x[idx - 1])
                - kappa * (x[idx] - g.external_temperature);
        }
    }
    out
}

/// ‖F(a) + F(b) − F(0) − F(a + b)‖∞ / (1 + max ‖F(·)‖∞), the relative defect
/// of affinity along the parallelogram spanned by `a` and `b`.
pub fn second_difference_defect(f: impl Fn(&[f64]) -> Vec<f64>, a: &[f64], b: &[f64]) -> f64 {
    let zero = vec![0.0; a.len()];
    let ab: Vec<f64> = a.iter().zip(b).map(|(p, q)| p + q).collect();
    let (fa, fb, f0, fab) = (f(a), f(b), f(&zero), f(&ab));
    let defect: Vec<f64> = (0..f0.len()).map(|i| fa[i] + fb[i] - f0[i] - fab[i]).collect();
    let scale = 1.0
        + norm_inf(&fa).max(norm_inf(&fb)).max(norm_inf(&f0)).max(norm_inf(&fab));
    norm_inf(&defect) / scale
}

/// Largest affinity defect of (y, u) ↦ [`flux_form`] over consecutive pairs
/// of `samples`.
pub fn affine_decomposition_check(
    t: f64,
    x: &[f64],
    net: &Network,
    samples: &[(AlgebraicVector, Control)],
) -> f64 {
    let n = net.n_pipes();
    let pack = |(y, u): &(AlgebraicVector, Control)| {
        let mut v = y.to_flat();
        v.extend_from_slice(&u.0);
        v
    };
    let f = |z: &[f64]| {
        let y = AlgebraicVector::from_flat(&z[..4 * n]).expect("flat length");
        let u = Control([z[4 * n], z[4 * n + 1], z[4 * n + 2]]);
        flux_form(t, x, &y, &u, net)
    };
    samples
        .windows(2)
        .map(|w| second_difference_defect(f, &pack(&w[0]), &pack(&w[1])))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Absolute ∞-norm tolerance on the step residual.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Take one extra Newton step after convergence.
    pub polish: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, max_halvings: 8, polish: true }
    }
}

/// A converged implicit Euler step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub x: Vec<f64>,
    pub y: AlgebraicVector,
    pub iterations: usize,
    /// ‖x − x_prev − Δt F(t, x)‖∞ at the returned x.
    pub residual: f64,
}

/// Finite-difference step matrix I − Δt ∂F/∂x at x.
///
/// Outlet columns are differenced one at a time; all other columns only touch
/// their own row and the next cell downstream, so they are differenced in two
/// interleaved groups. That is N + 2 evaluations of F.
pub fn step_matrix(
    t: f64,
    x: &[f64],
    u: &Control,
    dt: f64,
    net: &Network,
    demand: &DemandSeries,
    f0: &[f64],
) -> Result<BorderedBidiagonal, Error> {
    let n = x.len();
    let layout = net.layout();
    let n_pipes = net.n_pipes();
    let step = |v: f64| sqrt(f64::EPSILON) * (1.0 + v.abs());
    let mut diag = vec![1.0; n];
    let mut sub = vec![0.0; n];
    let mut special = Vec::with_capacity(n_pipes);
    let mut border = vec![0.0; n * n_pipes];

    for parity in 0..2 {
        let mut xp = x.to_vec();
        let mut cols = Vec::new();
        for i in 0..n_pipes {
            let range = layout.range(i);
            let outlet = layout.outlet(i);
            for idx in range {
                if idx != outlet && (idx - layout.range(i).start) % 2 == parity {
                    xp[idx] += step(x[idx]);
                    cols.push(idx);
                }
            }
        }
        if cols.is_empty() {
            continue;
        }
        let fp = rhs(t, &xp, u, net, demand)?;
        for &c in &cols {
            let h = xp[c] - x[c];
            diag[c] = 1.0 - dt * (fp[c] - f0[c]) / h;
            // c is never an outlet, so c + 1 lies in the same pipe
            sub[c + 1] = -dt * (fp[c + 1] - f0[c + 1]) / h;
        }
    }
    for i in 0..n_pipes {
        let s = layout.outlet(i);
        let mut xp = x.to_vec();
        xp[s] += step(x[s]);
        let h = xp[s] - x[s];
        let fp = rhs(t, &xp, u, net, demand)?;
        let col = &mut border[i * n..(i + 1) * n];
        for r in 0..n {
            col[r] = -dt * (fp[r] - f0[r]) / h;
        }
        diag[s] = 1.0 + col[s];
        col[s] = 0.0;
        special.push(s);
    }
    Ok(BorderedBidiagonal { diag, sub, special, border })
}

fn step_residual(x: &[f64], x_prev: &[f64], f: &[f64], dt: f64) -> Vec<f64> {
    (0..x.len()).map(|i| x[i] - x_prev[i] - dt * f[i]).collect()
}

/// Checks what the closure needs downstream: consumer in-pipe outlets strictly
/// above T̄_out and positive temperatures everywhere.
pub fn check_domain(t: f64, x: &[f64], net: &Network) -> Result<(), Error> {
    let t_out = net.global().t_out(t);
    for c in net.consumers() {
        let cell = net.layout().outlet(c.pipe_in);
        if !(x[cell] > t_out + 1e-9) {
            return Err(Error::Domain { cell, value: x[cell] });
        }
    }
    if let Some(cell) = x.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Domain { cell, value: x[cell] });
    }
    Ok(())
}

/// Solves x − x_prev − Δt F(t_next, x) = 0 by Newton's method with residual
/// halving, starting from `guess` (or x_prev).
#[allow(clippy::too_many_arguments)]
pub fn solve_step(
    t_next: f64,
    x_prev: &[f64],
    u_next: &Control,
    dt: f64,
    net: &Network,
    demand: &DemandSeries,
    cfg: &NewtonConfig,
    guess: Option<&[f64]>,
) -> Result<StepSolution, Error> {
    check_state(x_prev, net)?;
    if !(dt > 0.0) {
        return Err(Error::Grid("step size must be positive"));
    }
    let mut x = guess.unwrap_or(x_prev).to_vec();
    let (mut f, mut y) = rhs_with_algebraic(t_next, &x, u_next, net, demand)?;
    let mut r = step_residual(&x, x_prev, &f, dt);
    let mut rn = norm_inf(&r);
    let mut factor: Option<BorderedFactor> = None;
    let mut iterations = 0;

    let trial = |x: &[f64], delta: &[f64], s: f64| {
        let xt: Vec<f64> = x.iter().zip(delta).map(|(a, d)| a + s * d).collect();
        let (ft, yt) = rhs_with_algebraic(t_next, &xt, u_next, net, demand).ok()?;
        let rt = step_residual(&xt, x_prev, &ft, dt);
        Some((xt, ft, yt, rt))
    };

    loop {
        if rn <= cfg.tol {
            if cfg.polish && rn > 0.0 {
                if factor.is_none() {
                    factor = step_matrix(t_next, &x, u_next, dt, net, demand, &f)?.factor();
                }
                if let Some(fac) = &factor {
                    let delta: Vec<f64> = fac.solve(&r).iter().map(|d| -d).collect();
                    if let Some((xt, ft, yt, rt)) = trial(&x, &delta, 1.0) {
                        let rtn = norm_inf(&rt);
                        if rtn <= rn {
                            let _ = (ft, rt);
                            (x, y, rn) = (xt, yt, rtn);
                        }
                    }
                }
            }
            break;
        }
        if iterations >= cfg.max_iter {
            return Err(Error::NewtonFailed { iterations, residual: rn });
        }
        let fac = step_matrix(t_next, &x, u_next, dt, net, demand, &f)?
            .factor()
            .ok_or(Error::NewtonFailed { iterations, residual: rn })?;
        let delta: Vec<f64> = fac.solve(&r).iter().map(|d| -d).collect();
        factor = Some(fac);
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            if let Some((xt, ft, yt, rt)) = trial(&x, &delta, s) {
                let rtn = norm_inf(&rt);
                if rtn < rn {
                    (x, f, y, r, rn) = (xt, ft, yt, rt, rtn);
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        iterations += 1;
        if !accepted {
            return Err(Error::NewtonFailed { iterations, residual: rn });
        }
    }
    check_domain(t_next, &x, net)?;
    Ok(StepSolution { x, y, iterations, residual: rn })
}

/// One implicit Euler step; returns x_next.
pub fn implicit_euler_step(
    t_next: f64,
    x_prev: &[f64],
    u_next: &Control,
    dt: f64,
    net: &Network,
    demand: &DemandSeries,
    cfg: &NewtonConfig,
) -> Result<Vec<f64>, Error> {
    solve_step(t_next, x_prev, u_next, dt, net, demand, cfg, None).map(|s| s.x)
}

/// Integrates from x0 at t_0 with the control samples `u` (one per node; u_0
/// only enters y_0). A failing step is reported as [`Error::Step`].
pub fn simulate(
    x0: &[f64],
    u: &[Control],
    grid: &TimeGrid,
    net: &Network,
    demand: &DemandSeries,
    cfg: &NewtonConfig,
) -> Result<Trajectory, Error> {
    check_state(x0, net)?;
    if u.len() != grid.len() {
        return Err(Error::GridMismatch("one control sample per time node is required"));
    }
    let y0 = assemble_algebraic(grid.t0(), x0, &u[0], net, demand).map_err(|e| e.at_step(0))?;
    let mut traj = Trajectory {
        grid: grid.clone(),
        x: Vec::with_capacity(grid.len()),
        y: Vec::with_capacity(grid.len()),
        u: u.to_vec(),
    };
    traj.x.push(x0.to_vec());
    traj.y.push(y0);
    for n in 1..grid.len() {
        let step = solve_step(grid.t(n), &traj.x[n - 1], &u[n], grid.dt(n), net, demand, cfg, None)
            .map_err(|e| e.at_step(n))?;
        traj.x.push(step.x);
        traj.y.push(step.y);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid() {
        let g = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        assert_eq!(g.nodes(), [0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.dt(3), 0.25);
        assert_eq!(TimeGrid::uniform(2.0, 1.0, 0).unwrap().len(), 1);
        assert!(TimeGrid::uniform(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn affine_map_has_no_defect_and_square_does() {
        let a = [1.0, 2.0];
        let b = [-0.5, 3.0];
        let affine = |z: &[f64]| vec![2.0 * z[0] - z[1] + 1.0, 3.0 * z[1]];
        assert_eq!(second_difference_defect(affine, &a, &b), 0.0);
        let square = |z: &[f64]| vec![z[0] * z[0]];
        assert!(second_difference_defect(square, &a, &b) > 0.1);
    }
}
