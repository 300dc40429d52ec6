mod common;

use heatnet_core::closure::assemble_algebraic;
use heatnet_core::network::NetworkBuilder;
use heatnet_core::simulator::{flux_form, implicit_euler_step, rhs, simulate, transport};
use heatnet_core::verification::integrator_error;
use heatnet_core::{
    Control, DemandSeries, GlobalParams, Network, NewtonConfig, NodeKind, PipeParams, TimeGrid,
    TimeProfile,
};
use rand::rngs::StdRng;
use rand::SeedableRng;

/// One forward and one return pipe with ρ = c_p = d = 1, T_ext = 0 and T̄_out = 1.
fn chain(n_points: usize, heat_transfer: f64) -> (Network, DemandSeries) {
    let global = GlobalParams {
        density: 1.0,
        heat_capacity: 1.0,
        external_temperature: 0.0,
        return_temperature: TimeProfile::Constant(1.0),
        gravity: 1.0,
        stagnation_pressure: TimeProfile::Constant(1.0),
    };
    let mut b = NetworkBuilder::new(global);
    let n0 = b.node("depot out", NodeKind::Supply);
    let n1 = b.node("consumer in", NodeKind::Demand);
    let n2 = b.node("consumer out", NodeKind::Supply);
    let n3 = b.node("depot in", NodeKind::Demand);
    let params = PipeParams::new(1.0, 1.0, 0.1, 0.0, n_points, heat_transfer);
    let p1 = b.pipe("1", n0, n1, params.clone());
    let p2 = b.pipe("2", n2, n3, params);
    b.consumer("c", p1, p2);
    b.depot(p1, p2);
    let demand = DemandSeries::new(vec![TimeProfile::Constant(1.0)]).unwrap();
    (b.build().unwrap(), demand)
}

#[test]
fn still_water_decays_to_four_thirds_after_one_step() {
    // k = 1/4 gives a relaxation rate of exactly 1
    let (net, _) = chain(2, 0.25);
    let f = |x: f64| transport(&[x, x], &[0.0, 0.0], &[0.0, 0.0], &net)[0];
    assert_eq!(f(1.0), -1.0);
    let next: f64 = 2.0 / (1.0 + 0.5);
    assert!((next - 4.0 / 3.0).abs() < 1e-15);
    assert!((next - 2.0 - 0.5 * f(next)).abs() < 1e-15);
}

#[test]
fn single_segment_upwind_difference() {
    let (net, _) = chain(2, 0.0);
    let f = transport(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0], &net);
    assert_eq!(f, [-1.0, -1.0]);
}

#[test]
fn lossless_balanced_state_is_a_fixed_point() {
    let (net, demand) = chain(4, 0.0);
    // forward pipe one degree above the return temperature, return pipe at it
    let x = [2.0, 2.0, 2.0, 1.0, 1.0, 1.0];
    // A v_1 = Q / (c_p ρ ΔT) = 1, so one watt restores the lost degree
    let u = Control::new(2.0, 1.0, 0.0);
    let f = rhs(0.0, &x, &u, &net, &demand).unwrap();
    assert!(f.iter().all(|v| v.abs() < 1e-14), "{f:?}");
    let next = implicit_euler_step(0.1, &x, &u, 0.1, &net, &demand, &NewtonConfig::default()).unwrap();
    assert!(common::rel_diff(&next, &x) < 1e-12);
}

#[test]
fn upwind_and_flux_forms_agree_at_the_closure() {
    let mut rng = StdRng::seed_from_u64(8);
    for _ in 0..30 {
        let (net, demand) = common::random_network(&mut rng, 5);
        let (x, u) = common::random_sample(&mut rng, &net, 0.0);
        let y = assemble_algebraic(0.0, &x, &u, &net, &demand).unwrap();
        let a = rhs(0.0, &x, &u, &net, &demand).unwrap();
        let b = flux_form(0.0, &x, &y, &u, &net);
        assert!(common::rel_diff(&a, &b) < 1e-12);
    }
}

#[test]
fn single_node_grid_gives_the_initial_sample() {
    let (net, demand) = chain(3, 0.1);
    let grid = TimeGrid::uniform(0.0, 1.0, 0).unwrap();
    let x0 = vec![2.0, 2.0, 1.5, 1.5];
    let traj = simulate(&x0, &[Control::new(1.0, 1.0, 0.0)], &grid, &net, &demand, &NewtonConfig::default()).unwrap();
    assert_eq!(traj.len(), 1);
    assert_eq!(traj.x[0], x0);
}

#[test]
fn simulation_rejects_mismatched_controls() {
    let (net, demand) = chain(3, 0.1);
    let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
    let x0 = vec![2.0, 2.0, 1.5, 1.5];
    let u = vec![Control::new(1.0, 1.0, 0.0); 3];
    assert!(simulate(&x0, &u, &grid, &net, &demand, &NewtonConfig::default()).is_err());
}

#[test]
fn implicit_euler_is_first_order_on_the_manufactured_solution() {
    let cfg = NewtonConfig::default();
    let coarse = integrator_error(1.0 / 16.0, &cfg).unwrap();
    let fine = integrator_error(1.0 / 64.0, &cfg).unwrap();
    let ratio = coarse / fine;
    assert!((4.0 * 0.7..=4.0 * 1.3).contains(&ratio), "ratio {ratio}");
}
