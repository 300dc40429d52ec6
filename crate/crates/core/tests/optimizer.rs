use heatnet_core::network::NetworkBuilder;
use heatnet_core::optimizer::{
    minimize, reduced_cost, reduced_gradient, CostConfig, GradientMethod, LbfgsOptions, Problem,
    Weights,
};
use heatnet_core::simulator::simulate;
use heatnet_core::{
    Control, ControlBounds, DemandSeries, GlobalParams, Network, NewtonConfig, NodeKind, PipeParams,
    TimeGrid, TimeProfile, Trajectory,
};

struct Setup {
    net: Network,
    demand: DemandSeries,
    grid: TimeGrid,
    x0: Vec<f64>,
    desired: Trajectory,
}

/// A lossy two-pipe loop on [0, 1] with four steps, desired = simulation
/// with u ≡ (1, 1, 0.5).
fn setup() -> Setup {
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
    let params = PipeParams::new(1.0, 1.0, 0.1, 0.0, 3, 0.05);
    let p1 = b.pipe("1", n0, n1, params.clone());
    let p2 = b.pipe("2", n2, n3, params);
    b.consumer("c", p1, p2);
    b.depot(p1, p2);
    let net = b.build().unwrap();
    let demand = DemandSeries::new(vec![TimeProfile::Constant(1.0)]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
    let x0 = vec![2.0, 2.0, 1.5, 1.5];
    let u = vec![Control::new(1.0, 1.0, 0.5); grid.len()];
    let desired = simulate(&x0, &u, &grid, &net, &demand, &NewtonConfig::default()).unwrap();
    Setup { net, demand, grid, x0, desired }
}

fn problem<'a>(s: &'a Setup, cost: &'a CostConfig) -> Problem<'a> {
    Problem {
        net: &s.net,
        demand: &s.demand,
        grid: &s.grid,
        x0: &s.x0,
        cost,
        newton: NewtonConfig::default(),
    }
}

fn shifted(s: &Setup, by: [f64; 3]) -> Vec<Control> {
    s.desired.u.iter().map(|u| u.add(&Control(by))).collect()
}

#[test]
fn control_penalty_gradient_is_weighted_offset() {
    let s = setup();
    let cost = CostConfig::new(Weights::Constant([0.0; 3]), (0.0, 0.0, 2.0), s.desired.clone()).unwrap();
    let p = problem(&s, &cost);
    let u = shifted(&s, [0.3, -0.2, 0.1]);
    for method in [GradientMethod::Adjoint, GradientMethod::FiniteDifference] {
        let (g, _) = reduced_gradient(&u, &p, method, None).unwrap();
        assert_eq!(g[0], [0.0; 3]);
        for n in 1..s.grid.len() {
            for c in 0..3 {
                let want = s.grid.dt(n) * 2.0 * (u[n].0[c] - s.desired.u[n].0[c]);
                assert!((g[n][c] - want).abs() <= 1e-7, "{method:?} n={n} c={c}");
            }
        }
    }
}

#[test]
fn price_gradient_is_weighted_price() {
    let s = setup();
    let omega = [1e-2, 3.0, 0.5];
    let cost = CostConfig::new(Weights::Constant(omega), (0.0, 0.0, 0.0), s.desired.clone()).unwrap();
    let (g, _) = reduced_gradient(&s.desired.u, &problem(&s, &cost), GradientMethod::Adjoint, None).unwrap();
    for n in 1..s.grid.len() {
        for c in 0..3 {
            assert!((g[n][c] - s.grid.dt(n) * omega[c]).abs() <= 1e-12);
        }
    }
}

#[test]
fn cost_examples() {
    let s = setup();
    let unit = CostConfig::new(Weights::Constant([1.0; 3]), (0.0, 0.0, 0.0), s.desired.clone()).unwrap();
    let ones = vec![Control::new(1.0, 1.0, 1.0); s.grid.len()];
    let (c, _) = reduced_cost(&ones, &problem(&s, &unit)).unwrap();
    assert!((c.total - 3.0).abs() <= 1e-14 && (c.operating - 3.0).abs() <= 1e-14);

    let penalty = CostConfig::new(Weights::Constant([0.0; 3]), (0.0, 0.0, 2.0), s.desired.clone()).unwrap();
    let (c, _) = reduced_cost(&shifted(&s, [1.0, 0.0, 0.0]), &problem(&s, &penalty)).unwrap();
    assert!((c.total - 1.0).abs() <= 1e-14);
    assert_eq!(c.operating, 0.0);
}

#[test]
fn perturbing_one_sample_increases_the_tracking_cost() {
    let s = setup();
    let cost = CostConfig::new(Weights::Constant([0.0; 3]), (1.0, 1.0, 1.0), s.desired.clone()).unwrap();
    let p = problem(&s, &cost);
    let (at_desired, _) = reduced_cost(&s.desired.u, &p).unwrap();
    assert!(at_desired.total.abs() <= 1e-20);
    let mut u = s.desired.u.clone();
    u[2].0[1] += 0.1;
    assert!(reduced_cost(&u, &p).unwrap().0.total > 1e-6);
}

#[test]
fn convex_control_tracking_converges_quickly() {
    let s = setup();
    let cost = CostConfig::new(Weights::Constant([0.0; 3]), (0.0, 0.0, 1.0), s.desired.clone()).unwrap();
    let bounds = ControlBounds::uniform(0.0, 10.0).unwrap();
    let opts = LbfgsOptions { tol: 1e-8, gradient: GradientMethod::Adjoint, ..LbfgsOptions::default() };
    let res = minimize(&shifted(&s, [0.4, 0.3, -0.2]), &bounds, &problem(&s, &cost), &opts).unwrap();
    assert!(res.converged);
    assert!(res.iterations <= 5, "{} iterations", res.iterations);
    for n in 1..s.grid.len() {
        for c in 0..3 {
            assert!((res.controls[n].0[c] - s.desired.u[n].0[c]).abs() <= 1e-6);
        }
    }
    assert_eq!(res.pg_history.len(), res.iterations + 1);
}

#[test]
fn infinite_tolerance_stops_before_the_first_iteration() {
    let s = setup();
    let cost = CostConfig::new(Weights::Constant([1.0; 3]), (1.0, 1.0, 1.0), s.desired.clone()).unwrap();
    let bounds = ControlBounds::uniform(0.0, 10.0).unwrap();
    let opts = LbfgsOptions { tol: f64::INFINITY, ..LbfgsOptions::default() };
    let u0 = shifted(&s, [0.2, 0.2, 0.2]);
    let res = minimize(&u0, &bounds, &problem(&s, &cost), &opts).unwrap();
    assert_eq!(res.iterations, 0);
    assert!(res.converged);
    assert_eq!(res.controls, u0);
}

#[test]
fn optimizer_keeps_controls_in_the_box() {
    let s = setup();
    // a strong price pushes every control to its lower bound
    let cost = CostConfig::new(Weights::Constant([10.0; 3]), (0.0, 0.0, 1e-2), s.desired.clone()).unwrap();
    let bounds = ControlBounds::uniform(0.2, 10.0).unwrap();
    let opts = LbfgsOptions { tol: 1e-8, ..LbfgsOptions::default() };
    let res = minimize(&s.desired.u, &bounds, &problem(&s, &cost), &opts).unwrap();
    assert!(res.controls.iter().all(|u| bounds.contains(u)));
    assert!(res.controls[1..].iter().all(|u| u.0.iter().all(|&v| v == 0.2)));
}

#[test]
fn mismatched_desired_grid_is_rejected() {
    let s = setup();
    let other = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
    let desired = s.desired.resample(&other);
    let cost = CostConfig::new(Weights::Constant([1.0; 3]), (1.0, 0.0, 0.0), desired).unwrap();
    assert!(reduced_cost(&s.desired.u, &problem(&s, &cost)).is_err());
}
