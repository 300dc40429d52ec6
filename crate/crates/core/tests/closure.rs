mod common;

use heatnet_core::closure::{algebraic_residual, assemble_algebraic};
use heatnet_core::network::NetworkBuilder;
use heatnet_core::verification::{analytic_reference, build_six_pipe};
use heatnet_core::{Control, DemandSeries, GlobalParams, NodeKind, PipeParams, TimeProfile};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closure_solves_the_algebraic_system_on_random_trees(seed in any::<u64>(), pipes in 2usize..7) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (net, demand) = common::random_network(&mut rng, pipes);
        let (x, u) = common::random_sample(&mut rng, &net, 0.0);
        let y = assemble_algebraic(0.0, &x, &u, &net, &demand).unwrap();
        prop_assert!(max_abs(&algebraic_residual(0.0, &x, &y, &u, &net, &demand)) <= 1e-10);
        let y0 = common::naive_guess(&net, &x, 0.0);
        if let Some(oracle) = common::newton_oracle(0.0, &x, &u, &net, &demand, &y0) {
            prop_assert!(common::rel_diff(&y.to_flat(), &oracle.to_flat()) <= 1e-8);
        }
    }
}

/// Depot → junction → two consumers → junction → depot, unit parameters.
fn two_consumer_fork() -> (heatnet_core::Network, DemandSeries) {
    let global = GlobalParams {
        density: 1.0,
        heat_capacity: 1.0,
        external_temperature: 0.0,
        return_temperature: TimeProfile::Constant(0.0),
        gravity: 1.0,
        stagnation_pressure: TimeProfile::Constant(1.0),
    };
    let mut b = NetworkBuilder::new(global);
    use NodeKind::*;
    let f0 = b.node("F0", Supply);
    let f1 = b.node("F1", Interior);
    let f2 = b.node("F2", Demand);
    let f3 = b.node("F3", Demand);
    let r2 = b.node("R2", Supply);
    let r3 = b.node("R3", Supply);
    let r1 = b.node("R1", Interior);
    let r0 = b.node("R0", Demand);
    let params = PipeParams::new(1.0, 1.0, 0.1, 0.0, 2, 0.0);
    let p1 = b.pipe("1", f0, f1, params.clone());
    let p2 = b.pipe("2", f1, f2, params.clone());
    let p3 = b.pipe("3", f1, f3, params.clone());
    let p4 = b.pipe("4", r2, r1, params.clone());
    let p5 = b.pipe("5", r3, r1, params.clone());
    let p6 = b.pipe("6", r1, r0, params);
    b.consumer("a", p2, p4);
    b.consumer("b", p3, p5);
    b.depot(p1, p6);
    let demand = DemandSeries::new(vec![TimeProfile::Constant(1.0), TimeProfile::Constant(1.0)]).unwrap();
    (b.build().unwrap(), demand)
}

#[test]
fn equal_flows_at_60_and_80_mix_to_70() {
    let (net, demand) = two_consumer_fork();
    // one cell per pipe: forward outlets at 2, return outlets at 60 and 80
    let x = [2.0, 2.0, 2.0, 60.0, 80.0, 65.0];
    let y = assemble_algebraic(0.0, &x, &Control::new(1.0, 0.0, 0.0), &net, &demand).unwrap();
    assert_eq!(y.v[3], y.v[4]);
    assert!((y.t_in[5] - 70.0).abs() <= 1e-12);
}

#[test]
fn scaling_demand_scales_velocities_only() {
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..20 {
        let (net, demand) = common::random_network(&mut rng, 5);
        let (x, u) = common::random_sample(&mut rng, &net, 0.0);
        // depot heating raises the inlet by P/(c_p ρ A v), which does not scale
        let u = Control::new(u.pump(), 0.0, 0.0);
        let scaled = DemandSeries::new(
            (0..demand.len()).map(|i| TimeProfile::Constant(2.5 * demand.eval(i, 0.0))).collect(),
        )
        .unwrap();
        let y = assemble_algebraic(0.0, &x, &u, &net, &demand).unwrap();
        let ys = assemble_algebraic(0.0, &x, &u, &net, &scaled).unwrap();
        for i in 0..net.n_pipes() {
            assert!((ys.v[i] - 2.5 * y.v[i]).abs() <= 1e-12 * ys.v[i].abs(), "{} vs {}", ys.v[i], 2.5 * y.v[i]);
        }
        let d = common::rel_diff(&ys.t_in, &y.t_in);
        assert!(d <= 1e-12, "{d}");
    }
}

#[test]
fn without_heat_input_the_depot_passes_the_return_temperature_through() {
    let mut rng = StdRng::seed_from_u64(5);
    let (net, demand) = common::random_network(&mut rng, 4);
    let (x, _) = common::random_sample(&mut rng, &net, 0.0);
    let y = assemble_algebraic(0.0, &x, &Control::new(3.0, 0.0, 0.0), &net, &demand).unwrap();
    let depot = net.depot();
    let outlet = x[net.layout().outlet(depot.pipe_last)];
    assert!((y.t_in[depot.pipe_first] - outlet).abs() <= 1e-12 * outlet.abs());
}

#[test]
fn six_pipe_closure_reproduces_the_analytic_algebraic_state() {
    let (net, demand) = build_six_pipe(9).unwrap();
    let (x, y, u) = analytic_reference(0.0, &net);
    for (got, want) in y.v.iter().zip([3.0, 2.0, 1.0, 2.0, 1.0, 3.0]) {
        assert!((got - want / 6.0).abs() <= 1e-15);
    }
    assert!((y.t_in[0] - 2.0).abs() <= 1e-12);
    for t in [0.0, 0.3, 0.7, 1.0] {
        let (x, y, u) = analytic_reference(t, &net);
        let closed = assemble_algebraic(t, &x, &u, &net, &demand).unwrap();
        assert!(common::rel_diff(&closed.to_flat(), &y.to_flat()) <= 1e-10, "t = {t}");
    }
    let mut perturbed = y.clone();
    perturbed.v[0] += 1.0;
    assert!(max_abs(&algebraic_residual(0.0, &x, &perturbed, &u, &net, &demand)) > 1e-3);
}
