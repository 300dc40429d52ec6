//! Closed-form elimination of the algebraic variables.
//!
//! Given time, pipe temperatures and depot controls, the velocities follow from
//! the consumer demands (leaves to depot), inlet temperatures from perfect
//! mixing and the depot heat input, and pressures from the stagnation pressure
//! and the depot pump (one sweep per sub-network). Every step is explicit, so
//! the result is exact up to rounding and O(N).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ClosureError, Error};
use crate::math::norm_inf;
use crate::network::{DemandSeries, Network};

/// Depot controls (P_p, P_w, P_g) in W.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Control(pub [f64; 3]);

impl Control {
    pub const ZERO: Control = Control([0.0; 3]);

    pub fn new(pump: f64, waste: f64, gas: f64) -> Self {
        Self([pump, waste, gas])
    }

    /// P_p, the pressure lift power.
    pub fn pump(&self) -> f64 {
        self.0[0]
    }

    /// P_w + P_g, the thermal input.
    pub fn heat(&self) -> f64 {
        self.0[1] + self.0[2]
    }

    pub fn project(&self, lower: &Control, upper: &Control) -> Control {
        let mut c = *self;
        for i in 0..3 {
            c.0[i] = c.0[i].clamp(lower.0[i], upper.0[i]);
        }
        c
    }

    pub fn add(&self, other: &Control) -> Control {
        Control([self.0[0] + other.0[0], self.0[1] + other.0[1], self.0[2] + other.0[2]])
    }

    pub fn scale(&self, c: f64) -> Control {
        Control([c * self.0[0], c * self.0[1], c * self.0[2]])
    }
}

/// Componentwise box u_a <= u <= u_b on the depot controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds {
    pub lower: Control,
    pub upper: Control,
}

impl ControlBounds {
    /// `None` unless every lower bound is finite and not above its upper bound.
    pub fn new(lower: Control, upper: Control) -> Option<Self> {
        let ok = (0..3).all(|i| lower.0[i].is_finite() && !(lower.0[i] > upper.0[i]));
        ok.then_some(Self { lower, upper })
    }

    /// The same interval [lo, hi] for all three controls.
    pub fn uniform(lo: f64, hi: f64) -> Option<Self> {
        Self::new(Control([lo; 3]), Control([hi; 3]))
    }

    pub fn project(&self, u: &Control) -> Control {
        u.project(&self.lower, &self.upper)
    }

    pub fn contains(&self, u: &Control) -> bool {
        (0..3).all(|i| u.0[i] >= self.lower.0[i] && u.0[i] <= self.upper.0[i])
    }

    pub fn midpoint(&self) -> Control {
        Control(core::array::from_fn(|i| 0.5 * (self.lower.0[i] + self.upper.0[i])))
    }
}

/// Per-pipe velocity, inlet temperature and end pressures.
///
/// The flat layout is blocked: `[v_1..v_N, T_in_1..T_in_N, p0_1..p0_N, pL_1..pL_N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraicVector {
    pub v: Vec<f64>,
    pub t_in: Vec<f64>,
    pub p0: Vec<f64>,
    pub p_l: Vec<f64>,
}

impl AlgebraicVector {
    pub fn zeros(n_pipes: usize) -> Self {
        Self {
            v: vec![0.0; n_pipes],
            t_in: vec![0.0; n_pipes],
            p0: vec![0.0; n_pipes],
            p_l: vec![0.0; n_pipes],
        }
    }

    pub fn n_pipes(&self) -> usize {
        self.v.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.v.len());
        out.extend_from_slice(&self.v);
        out.extend_from_slice(&self.t_in);
        out.extend_from_slice(&self.p0);
        out.extend_from_slice(&self.p_l);
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat); `None` unless the length is a multiple of 4.
    pub fn from_flat(flat: &[f64]) -> Option<Self> {
        if flat.len() % 4 != 0 {
            return None;
        }
        let n = flat.len() / 4;
        Some(Self {
            v: flat[..n].to_vec(),
            t_in: flat[n..2 * n].to_vec(),
            p0: flat[2 * n..3 * n].to_vec(),
            p_l: flat[3 * n..].to_vec(),
        })
    }
}

fn outlet(net: &Network, x: &[f64], pipe: usize) -> f64 {
    x[net.layout().outlet(pipe)]
}

/// Velocities from the demands: demand pipes carry Q_k / ((T_out_pipe − T̄_out) c_p A ρ),
/// every other forward pipe the area-weighted sum of its children, consumer
/// out-pipes copy their in-pipe, and return pipes sum what flows into them.
pub fn solve_velocities(
    t: f64,
    x: &[f64],
    net: &Network,
    demand: &DemandSeries,
) -> Result<Vec<f64>, ClosureError> {
    let g = net.global();
    let t_out = g.t_out(t);
    let pipes = net.pipes();
    let mut v = vec![0.0; net.n_pipes()];
    let order = net.flow_order();
    for &p in &order.forward_aggregation {
        let a = pipes[p].params.area;
        if let Some(k) = net.consumer_fed_by(p) {
            let q = demand.eval(k, t);
            if !q.is_finite() {
                return Err(ClosureError::NonFiniteDemand { consumer: k, value: q });
            }
            let temp = outlet(net, x, p);
            if !(temp > t_out) {
                return Err(ClosureError::OutletBelowReturn { pipe: p, outlet: temp, t_out });
            }
            v[p] = q / ((temp - t_out) * g.heat_capacity * a * g.density);
        } else {
            let flow: f64 = net
                .outgoing(pipes[p].to)
                .iter()
                .map(|&c| pipes[c].params.area * v[c])
                .sum();
            v[p] = flow / a;
        }
    }
    for &p in &order.return_aggregation {
        if let Some(k) = net.consumer_draining_into(p) {
            v[p] = v[net.consumers()[k].pipe_in];
        } else {
            let flow: f64 = net
                .incoming(pipes[p].from)
                .iter()
                .map(|&c| pipes[c].params.area * v[c])
                .sum();
            v[p] = flow / pipes[p].params.area;
        }
    }
    Ok(v)
}

/// Inlet temperatures: depot heating on the first pipe, T̄_out behind each
/// consumer, and the flow-weighted mixture of incoming outlet temperatures
/// everywhere else.
pub fn solve_inlet_temperatures(
    t: f64,
    x: &[f64],
    v: &[f64],
    u: &Control,
    net: &Network,
) -> Result<Vec<f64>, ClosureError> {
    let g = net.global();
    let pipes = net.pipes();
    let depot = net.depot();
    let first = depot.pipe_first;
    if !(v[first] > 0.0) {
        return Err(ClosureError::DepotVelocity(v[first]));
    }
    let t_out = g.t_out(t);
    let mut t_in = vec![0.0; net.n_pipes()];
    for p in 0..net.n_pipes() {
        t_in[p] = if p == first {
            u.heat() / (pipes[first].params.area * g.density * v[first] * g.heat_capacity)
                + outlet(net, x, depot.pipe_last)
        } else if net.consumer_draining_into(p).is_some() {
            t_out
        } else {
            let (mut flux, mut flow) = (0.0, 0.0);
            for &s in net.incoming(pipes[p].from) {
                let av = pipes[s].params.area * v[s];
                flux += av * outlet(net, x, s);
                flow += av;
            }
            flux / flow
        };
    }
    Ok(t_in)
}

/// End pressures `(p0, pL)`: p_d at the depot inlet, propagated against the
/// flow through the return network, then the pump lift P_p / (A_1 v_1) on top
/// of p_d at the depot outlet, propagated with the flow.
pub fn solve_pressures(
    t: f64,
    v: &[f64],
    u: &Control,
    net: &Network,
) -> Result<(Vec<f64>, Vec<f64>), ClosureError> {
    let g = net.global();
    let pipes = net.pipes();
    let depot = net.depot();
    let first = depot.pipe_first;
    if !(v[first] > 0.0) {
        return Err(ClosureError::DepotVelocity(v[first]));
    }
    let p_d = g.p_d(t);
    let n = net.n_pipes();
    let (mut p0, mut p_l) = (vec![0.0; n], vec![0.0; n]);
    let order = net.flow_order();
    for &p in &order.return_propagation {
        p_l[p] = if p == depot.pipe_last {
            p_d
        } else {
            p0[net.outgoing(pipes[p].to)[0]]
        };
        p0[p] = p_l[p] + pipes[p].params.pressure_drop(g, v[p]);
    }
    for &p in &order.forward_propagation {
        p0[p] = if p == first {
            u.pump() / (pipes[first].params.area * v[first]) + p_d
        } else {
            p_l[net.incoming(pipes[p].from)[0]]
        };
        p_l[p] = p0[p] - pipes[p].params.pressure_drop(g, v[p]);
    }
    Ok((p0, p_l))
}

/// y = 𝗒(t, x, u).
pub fn assemble_algebraic(
    t: f64,
    x: &[f64],
    u: &Control,
    net: &Network,
    demand: &DemandSeries,
) -> Result<AlgebraicVector, Error> {
    check_state(x, net)?;
    let v = solve_velocities(t, x, net, demand)?;
    let t_in = solve_inlet_temperatures(t, x, &v, u, net)?;
    let (p0, p_l) = solve_pressures(t, &v, u, net)?;
    Ok(AlgebraicVector { v, t_in, p0, p_l })
}

pub(crate) fn check_state(x: &[f64], net: &Network) -> Result<(), Error> {
    if x.len() != net.state_dim() {
        return Err(Error::StateShape { expected: net.state_dim(), got: x.len() });
    }
    Ok(())
}

/// Residual of the algebraic equations, 4N rows in this order:
///
/// 1. momentum per pipe, `(pL − p0 + drop) / p_ref`
/// 2. per consumer: `v_in − v_out`, `(c_p A ρ v_in (T_out_in − T̄_out) − Q) / (ρ c_p)`,
///    `T_in_out − T̄_out`
/// 3. mass per interior node, `Σ_in A v − Σ_out A v`
/// 4. energy per interior node, `Σ_in A v T_outlet − Σ_out A v T_in`
/// 5. continuity per interior node and (incoming, outgoing) pair, `(pL_in − p0_out) / p_ref`
/// 6. mixing per interior node, consecutive outgoing pairs, `T_in_a − T_in_b`
/// 7. depot, `(P_p − A_1 v_1 (p0_1 − pL_N)) / p_ref` and
///    `(P_w + P_g − c_p A_1 ρ v_1 (T_in_1 − T_outlet_N)) / (ρ c_p)`
/// 8. stagnation, `(pL_N − p_d) / p_ref`
///
/// with p_ref = max(ρ, |p_d(t)|), so pressure rows stay O(1) for Pa-scale
/// networks. Interior nodes are taken in ascending index order.
pub fn algebraic_residual(
    t: f64,
    x: &[f64],
    y: &AlgebraicVector,
    u: &Control,
    net: &Network,
    demand: &DemandSeries,
) -> Vec<f64> {
    let g = net.global();
    let (rho, cp) = (g.density, g.heat_capacity);
    let pipes = net.pipes();
    let area = |i: usize| pipes[i].params.area;
    let t_out = g.t_out(t);
    let p_ref = rho.max(g.p_d(t).abs());
    let mut r = Vec::with_capacity(net.algebraic_dim());

    for (i, pipe) in pipes.iter().enumerate() {
        r.push((y.p_l[i] - y.p0[i] + pipe.params.pressure_drop(g, y.v[i])) / p_ref);
    }
    for (k, c) in net.consumers().iter().enumerate() {
        let a = c.pipe_in;
        let b = c.pipe_out.expect("validated network");
        r.push(y.v[a] - y.v[b]);
        let power = cp * area(a) * rho * y.v[a] * (outlet(net, x, a) - t_out);
        r.push((power - demand.eval(k, t)) / (rho * cp));
        r.push(y.t_in[b] - t_out);
    }
    let nodes = net.interior_nodes();
    for &j in nodes {
        let inflow: f64 = net.incoming(j).iter().map(|&i| area(i) * y.v[i]).sum();
        let outflow: f64 = net.outgoing(j).iter().map(|&i| area(i) * y.v[i]).sum();
        r.push(inflow - outflow);
    }
    for &j in nodes {
        let inflow: f64 =
            net.incoming(j).iter().map(|&i| area(i) * y.v[i] * outlet(net, x, i)).sum();
        let outflow: f64 = net.outgoing(j).iter().map(|&i| area(i) * y.v[i] * y.t_in[i]).sum();
        r.push(inflow - outflow);
    }
    for &j in nodes {
        for &s in net.incoming(j) {
            for &o in net.outgoing(j) {
                r.push((y.p_l[s] - y.p0[o]) / p_ref);
            }
        }
    }
    for &j in nodes {
        for w in net.outgoing(j).windows(2) {
            r.push(y.t_in[w[0]] - y.t_in[w[1]]);
        }
    }
    let depot = net.depot();
    let (first, last) = (depot.pipe_first, depot.pipe_last);
    r.push((u.pump() - area(first) * y.v[first] * (y.p0[first] - y.p_l[last])) / p_ref);
    let heat = cp * area(first) * rho * y.v[first] * (y.t_in[first] - outlet(net, x, last));
    r.push((u.heat() - heat) / (rho * cp));
    r.push((y.p_l[last] - g.p_d(t)) / p_ref);
    r
}

/// Relative second-difference defect of u ↦ 𝗒(t, x, u):
/// ‖y(u₁) + y(u₂) − y(0) − y(u₁ + u₂)‖∞ / (1 + max ‖y‖∞).
///
/// Zero (up to rounding) exactly when the closure is affine in the control.
pub fn control_affinity_defect(
    t: f64,
    x: &[f64],
    u1: &Control,
    u2: &Control,
    net: &Network,
    demand: &DemandSeries,
) -> Result<f64, Error> {
    let y1 = assemble_algebraic(t, x, u1, net, demand)?.to_flat();
    let y2 = assemble_algebraic(t, x, u2, net, demand)?.to_flat();
    let y0 = assemble_algebraic(t, x, &Control::ZERO, net, demand)?.to_flat();
    let y12 = assemble_algebraic(t, x, &u1.add(u2), net, demand)?.to_flat();
    let defect: Vec<f64> = (0..y0.len()).map(|i| y1[i] + y2[i] - y0[i] - y12[i]).collect();
    let scale = 1.0 + norm_inf(&y1).max(norm_inf(&y2)).max(norm_inf(&y0)).max(norm_inf(&y12));
    Ok(norm_inf(&defect) / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{GlobalParams, NetworkBuilder, NodeKind, PipeParams};
    use crate::profile::TimeProfile;

    fn unit_global() -> GlobalParams {
        GlobalParams {
            density: 1.0,
            heat_capacity: 1.0,
            external_temperature: 0.0,
            return_temperature: 0.0.into(),
            gravity: 9.80665,
            stagnation_pressure: 5.0.into(),
        }
    }

    fn chain(global: GlobalParams, params: PipeParams) -> Network {
        let mut b = NetworkBuilder::new(global);
        let s = b.node("s", NodeKind::Supply);
        let ci = b.node("ci", NodeKind::Demand);
        let co = b.node("co", NodeKind::Supply);
        let d = b.node("d", NodeKind::Demand);
        let p1 = b.pipe("1", s, ci, params.clone());
        let p2 = b.pipe("2", co, d, params);
        b.consumer("c", p1, p2);
        b.depot(p1, p2);
        b.build().unwrap()
    }

    fn unit_area() -> PipeParams {
        let mut p = PipeParams::new(1.0, 1.0, 0.0, 0.0, 2, 0.0);
        p.area = 1.0;
        p
    }

    #[test]
    fn chain_unit_velocities() {
        let net = chain(unit_global(), unit_area());
        let demand = DemandSeries::new(vec![TimeProfile::Constant(1.0)]).unwrap();
        let v = solve_velocities(0.0, &[1.0, 1.0], &net, &demand).unwrap();
        assert_eq!(v, [1.0, 1.0]);
    }

    #[test]
    fn outlet_at_return_temperature_is_rejected() {
        let net = chain(unit_global(), unit_area());
        let demand = DemandSeries::new(vec![TimeProfile::Constant(1.0)]).unwrap();
        let err = solve_velocities(0.0, &[0.0, 1.0], &net, &demand).unwrap_err();
        assert!(matches!(err, ClosureError::OutletBelowReturn { pipe: 0, .. }));
    }

    #[test]
    fn no_thermal_input_passes_return_temperature() {
        let net = chain(unit_global(), unit_area());
        let t_in =
            solve_inlet_temperatures(0.0, &[3.0, 7.0], &[1.0, 1.0], &Control::ZERO, &net).unwrap();
        assert_eq!(t_in, [7.0, 0.0]);
    }

    #[test]
    fn lossless_pressures_equal_stagnation() {
        let net = chain(unit_global(), unit_area());
        let (p0, p_l) = solve_pressures(0.0, &[2.0, 2.0], &Control::ZERO, &net).unwrap();
        assert_eq!(p0, [5.0, 5.0]);
        assert_eq!(p_l, [5.0, 5.0]);
    }

    #[test]
    fn friction_drop_hand_value() {
        let g = GlobalParams { density: 2.0, ..unit_global() };
        let p = PipeParams::new(1.0, 1.0, 2.0, 0.0, 2, 0.0);
        assert_eq!(p.pressure_drop(&g, 3.0), 18.0);
    }

    #[test]
    fn residual_vanishes_and_detects_perturbation() {
        let g = GlobalParams { density: 2.0, heat_capacity: 3.0, ..unit_global() };
        let net = chain(g, PipeParams::new(1.0, 0.5, 0.1, 1.0, 4, 0.0));
        let demand = DemandSeries::new(vec![TimeProfile::Constant(4.0)]).unwrap();
        let x = [9.0, 8.0, 7.0, 3.0, 2.5, 2.0];
        let u = Control::new(10.0, 20.0, 5.0);
        let mut y = assemble_algebraic(0.0, &x, &u, &net, &demand).unwrap();
        let r = algebraic_residual(0.0, &x, &y, &u, &net, &demand);
        assert_eq!(r.len(), 8);
        assert!(norm_inf(&r) < 1e-12, "{r:?}");
        y.v[0] += 1.0;
        let r = algebraic_residual(0.0, &x, &y, &u, &net, &demand);
        assert!(r[0].abs() > 1e-3, "momentum row");
        assert!(r[6].abs() > 1e-3, "depot pump row");
    }

    #[test]
    fn flat_round_trip() {
        let y = AlgebraicVector {
            v: vec![1.0, 2.0],
            t_in: vec![3.0, 4.0],
            p0: vec![5.0, 6.0],
            p_l: vec![7.0, 8.0],
        };
        let flat = y.to_flat();
        assert_eq!(flat, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(AlgebraicVector::from_flat(&flat).unwrap(), y);
        assert!(AlgebraicVector::from_flat(&flat[..3]).is_none());
    }
}
