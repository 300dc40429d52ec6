//! Random networks and an independent solver for the algebraic system.
#![allow(dead_code)]

use heatnet_core::closure::algebraic_residual;
use heatnet_core::network::NetworkBuilder;
use heatnet_core::{
    AlgebraicVector, Control, DemandSeries, GlobalParams, Network, NodeKind, PipeParams, TimeProfile,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

/// A random admissible network: a forward tree with `forward_pipes` pipes
/// (at least 2), its mirrored return tree and one consumer per forward leaf,
/// paired with a randomly permuted return leaf. Parameters are drawn from
/// ranges around unity.
pub fn random_network(rng: &mut impl Rng, forward_pipes: usize) -> (Network, DemandSeries) {
    assert!(forward_pipes >= 2);
    let t_out = rng.gen_range(1.0..2.0);
    let global = GlobalParams {
        density: rng.gen_range(1.0..3.0),
        heat_capacity: rng.gen_range(1.0..3.0),
        external_temperature: rng.gen_range(-1.0..1.0),
        return_temperature: TimeProfile::Constant(t_out),
        gravity: 1.0,
        stagnation_pressure: TimeProfile::Constant(rng.gen_range(1.0..3.0)),
    };
    // parent[k] of forward node k (node 0 is the depot outlet)
    let mut parent = vec![usize::MAX, 0, 1];
    while parent.len() < forward_pipes + 1 {
        let p = rng.gen_range(1..parent.len());
        parent.push(p);
    }
    let n = parent.len();
    let has_child = |k: usize| parent.iter().skip(1).any(|&p| p == k);
    let leaves: Vec<usize> = (1..n).filter(|&k| !has_child(k)).collect();

    let mut b = NetworkBuilder::new(global);
    let kind_f = |k: usize| match k {
        0 => NodeKind::Supply,
        k if leaves.contains(&k) => NodeKind::Demand,
        _ => NodeKind::Interior,
    };
    let kind_r = |k: usize| match k {
        0 => NodeKind::Demand,
        k if leaves.contains(&k) => NodeKind::Supply,
        _ => NodeKind::Interior,
    };
    let f: Vec<usize> = (0..n).map(|k| b.node(&format!("F{k}"), kind_f(k))).collect();
    let r: Vec<usize> = (0..n).map(|k| b.node(&format!("R{k}"), kind_r(k))).collect();
    let params = |rng: &mut dyn rand::RngCore| {
        let mut p = PipeParams::new(
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.5..1.5),
            rng.gen_range(0.01..2.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(2..6),
            rng.gen_range(-0.5..1.0),
        );
        p.area *= rng.gen_range(0.8..1.2);
        p
    };
    let fwd: Vec<usize> = (1..n)
        .map(|k| b.pipe(&format!("f{k}"), f[parent[k]], f[k], params(rng)))
        .collect();
    let ret: Vec<usize> = (1..n)
        .map(|k| b.pipe(&format!("r{k}"), r[k], r[parent[k]], params(rng)))
        .collect();
    let mut partners = leaves.clone();
    partners.shuffle(rng);
    for (c, (&lf, &lr)) in leaves.iter().zip(&partners).enumerate() {
        b.consumer(&format!("C{c}"), fwd[lf - 1], ret[lr - 1]);
    }
    b.depot(fwd[0], ret[0]);
    let net = b.build().expect("generated network is valid");
    let demand = DemandSeries::new(
        (0..leaves.len()).map(|_| TimeProfile::Constant(rng.gen_range(1.0..5.0))).collect(),
    )
    .expect("non-empty");
    (net, demand)
}

/// Temperatures in (T̄_out + 0.5, T̄_out + 3) and controls in [0, 5]³.
pub fn random_sample(rng: &mut impl Rng, net: &Network, t: f64) -> (Vec<f64>, Control) {
    let t_out = net.global().t_out(t);
    let x = (0..net.state_dim()).map(|_| t_out + rng.gen_range(0.5..3.0)).collect();
    let u = Control(std::array::from_fn(|_| rng.gen_range(0.0..5.0)));
    (x, u)
}

/// Solves algebraic_residual(t, x, ·, u) = 0 by damped Newton with a dense
/// forward-difference Jacobian, starting from `y0`.
pub fn newton_oracle(
    t: f64,
    x: &[f64],
    u: &Control,
    net: &Network,
    demand: &DemandSeries,
    y0: &AlgebraicVector,
) -> Option<AlgebraicVector> {
    let res = |y: &DVector<f64>| {
        let av = AlgebraicVector::from_flat(y.as_slice()).expect("length");
        DVector::from_vec(algebraic_residual(t, x, &av, u, net, demand))
    };
    let mut y = DVector::from_vec(y0.to_flat());
    let mut r = res(&y);
    for _ in 0..200 {
        if r.amax() < 1e-13 {
            break;
        }
        let m = y.len();
        let mut jac = DMatrix::zeros(r.len(), m);
        for j in 0..m {
            let h = 1e-7 * (1.0 + y[j].abs());
            let mut yp = y.clone();
            yp[j] += h;
            jac.set_column(j, &((res(&yp) - &r) / h));
        }
        let step = jac.lu().solve(&(-&r))?;
        let mut lambda = 1.0;
        loop {
            let yt = &y + &step * lambda;
            let rt = res(&yt);
            if rt.norm() < (1.0 - 1e-4 * lambda) * r.norm() || lambda < 1e-8 {
                y = yt;
                r = rt;
                break;
            }
            lambda *= 0.5;
        }
    }
    (r.amax() < 1e-10).then(|| AlgebraicVector::from_flat(y.as_slice()).expect("length"))
}

/// A crude starting point that carries no information from the closure.
pub fn naive_guess(net: &Network, x: &[f64], t: f64) -> AlgebraicVector {
    let n = net.n_pipes();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    AlgebraicVector {
        v: vec![1.0; n],
        t_in: vec![mean; n],
        p0: vec![net.global().p_d(t); n],
        p_l: vec![net.global().p_d(t); n],
    }
}

/// ‖a − b‖∞ / ‖b‖∞
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let inf = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0, |m: f64, x| m.max(x.abs()));
    inf(&mut a.iter().zip(b).map(|(p, q)| p - q)) / inf(&mut b.iter().copied())
}
