//! Network topology, physical parameters and the derived tree structure.
//!
//! A valid network is a forward tree rooted at the depot outlet pipe, whose
//! leaves are consumer in-pipes, and a return tree rooted at the depot inlet
//! pipe, whose leaves are consumer out-pipes. [`Network::new`] checks this and
//! precomputes the traversal orders the closure needs.

use alloc::collections::VecDeque;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use thiserror::Error;

use crate::error::NetworkError;
use crate::profile::TimeProfile;

/// Minimum consumer demand in W.
pub const MIN_DEMAND: f64 = 1.0;

pub const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, PartialEq)]
pub struct PipeParams {
    /// m
    pub length: f64,
    /// m
    pub diameter: f64,
    /// m², defaults to π d²/4
    pub area: f64,
    /// Darcy friction factor λ.
    pub friction: f64,
    /// Height difference between outlet and inlet, m.
    pub height_difference: f64,
    /// Number of temperature grid points n_i (>= 2), including the inlet.
    pub n_points: usize,
    /// Heat transfer coefficient k, W m⁻² C⁻¹.
    pub heat_transfer: f64,
    /// Wall roughness, m. Stored for reference only.
    pub roughness: Option<f64>,
}

impl PipeParams {
    pub fn new(
        length: f64,
        diameter: f64,
        friction: f64,
        height_difference: f64,
        n_points: usize,
        heat_transfer: f64,
    ) -> Self {
        Self {
            length,
            diameter,
            area: core::f64::consts::PI * diameter * diameter / 4.0,
            friction,
            height_difference,
            n_points,
            heat_transfer,
            roughness: None,
        }
    }

    /// Grid spacing L / (n_i - 1).
    pub fn dx(&self) -> f64 {
        self.length / (self.n_points - 1) as f64
    }

    /// 4k / (c_p d ρ), the relaxation rate towards the external temperature.
    pub fn cooling_rate(&self, global: &GlobalParams) -> f64 {
        4.0 * self.heat_transfer / (global.heat_capacity * self.diameter * global.density)
    }

    /// Pressure loss along the pipe: λρLv²/(2d) + GΔhρ.
    pub fn pressure_drop(&self, global: &GlobalParams, velocity: f64) -> f64 {
        let friction = self.friction * global.density * self.length * velocity * velocity
            / (2.0 * self.diameter);
        friction + global.gravity * self.height_difference * global.density
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalParams {
    /// ρ, kg m⁻³
    pub density: f64,
    /// c_p, J kg⁻¹ C⁻¹
    pub heat_capacity: f64,
    /// T_ext, C
    pub external_temperature: f64,
    /// T̄_out, the fixed temperature behind every consumer, C.
    pub return_temperature: TimeProfile,
    /// G, m s⁻²
    pub gravity: f64,
    /// p_d, the pressure at the depot inlet, Pa.
    pub stagnation_pressure: TimeProfile,
}

impl GlobalParams {
    pub fn t_out(&self, t: f64) -> f64 {
        self.return_temperature.eval(t)
    }

    pub fn p_d(&self, t: f64) -> f64 {
        self.stagnation_pressure.eval(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Supply,
    Demand,
    Interior,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Supply => "supply",
            NodeKind::Demand => "demand",
            NodeKind::Interior => "interior",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipe {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub params: PipeParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consumer {
    pub id: String,
    pub pipe_in: usize,
    pub pipe_out: Option<usize>,
}

/// The depot sits between the last and the first pipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Depot {
    pub pipe_first: usize,
    pub pipe_last: usize,
}

/// Raw network description with dense 0-based indices in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub global: GlobalParams,
    pub nodes: Vec<Node>,
    pub pipes: Vec<Pipe>,
    pub consumers: Vec<Consumer>,
    pub depot: Depot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subnet {
    Forward,
    Return,
}

impl fmt::Display for Subnet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subnet::Forward => "forward",
            Subnet::Return => "return",
        })
    }
}

/// One failed structural check. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationIssue {
    #[error("{what} index {index} is out of range")]
    IndexOutOfRange { what: &'static str, index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no consumer closes the circuit between depot outlet and inlet")]
    NoConsumer,
    #[error("depot uses the same pipe {0} as first and last pipe")]
    DepotPipes(usize),
    #[error("depot node {node} is shared with other pipes")]
    DepotNodeShared { node: usize },
    #[error("consumer {consumer} has no out-pipe")]
    MissingOutPipe { consumer: usize },
    #[error("consumer {consumer}: {detail}")]
    ConsumerPairing { consumer: usize, detail: &'static str },
    #[error("{subnet} network is not a tree at node {node}: {detail}")]
    NotATree {
        subnet: Subnet,
        node: usize,
        detail: &'static str,
    },
    #[error("{subnet} network revisits pipe {pipe}")]
    Cycle { subnet: Subnet, pipe: usize },
    #[error("{subnet} network dead-ends at node {node}")]
    DeadEnd { subnet: Subnet, node: usize },
    #[error("pipe {0} belongs to neither the forward nor the return network")]
    Unreachable(usize),
    #[error("pipe {0} belongs to both the forward and the return network")]
    InBothSubnets(usize),
    #[error("node {node} is declared {declared} but acts as {derived}")]
    KindMismatch {
        node: usize,
        declared: NodeKind,
        derived: NodeKind,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return f.write_str("all checks passed");
        }
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Pipe orders for the closure traversals.
///
/// Aggregation orders list every pipe after all pipes further from the depot
/// in the same sub-network; propagation orders are their reverse.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowOrder {
    pub forward_aggregation: Vec<usize>,
    pub forward_propagation: Vec<usize>,
    pub return_aggregation: Vec<usize>,
    pub return_propagation: Vec<usize>,
}

/// Position of the temperature unknowns T_{i,2..n_i} in the flat state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    offsets: Vec<usize>,
    dim: usize,
}

impl StateLayout {
    fn new(pipes: &[Pipe]) -> Self {
        let mut offsets = Vec::with_capacity(pipes.len() + 1);
        let mut acc = 0;
        for p in pipes {
            offsets.push(acc);
            acc += p.params.n_points - 1;
        }
        offsets.push(acc);
        Self { offsets, dim: acc }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn range(&self, pipe: usize) -> Range<usize> {
        self.offsets[pipe]..self.offsets[pipe + 1]
    }

    /// Index of T_{i,n_i}.
    pub fn outlet(&self, pipe: usize) -> usize {
        self.offsets[pipe + 1] - 1
    }

    /// Index of T_{i,j} for 2 <= j <= n_i (grid points counted from 1).
    pub fn cell(&self, pipe: usize, j: usize) -> usize {
        debug_assert!(j >= 2 && self.offsets[pipe] + j - 2 < self.offsets[pipe + 1]);
        self.offsets[pipe] + j - 2
    }

    pub fn pipe_of(&self, index: usize) -> usize {
        self.offsets.partition_point(|&o| o <= index) - 1
    }

    pub fn is_outlet(&self, index: usize) -> bool {
        self.offsets[1..].contains(&(index + 1))
    }
}

/// A validated network. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    subnet: Vec<Subnet>,
    consumer_by_in: Vec<Option<usize>>,
    consumer_by_out: Vec<Option<usize>>,
    interior_nodes: Vec<usize>,
    derived_kinds: Vec<NodeKind>,
    order: FlowOrder,
    layout: StateLayout,
}

struct Analysis {
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    subnet: Vec<Option<Subnet>>,
    consumer_by_in: Vec<Option<usize>>,
    consumer_by_out: Vec<Option<usize>>,
    derived_kinds: Vec<NodeKind>,
    forward_propagation: Vec<usize>,
    return_propagation: Vec<usize>,
}

fn check_params(spec: &NetworkSpec, issues: &mut Vec<ValidationIssue>) {
    let g = &spec.global;
    if !(g.density > 0.0) {
        issues.push(ValidationIssue::InvalidParameter("density must be positive".to_string()));
    }
    if !(g.heat_capacity > 0.0) {
        issues.push(ValidationIssue::InvalidParameter(
            "heat capacity must be positive".to_string(),
        ));
    }
    for (i, p) in spec.pipes.iter().enumerate() {
        let q = &p.params;
        let bad = if !(q.length > 0.0) {
            Some("length must be positive")
        } else if !(q.diameter > 0.0) {
            Some("diameter must be positive")
        } else if !(q.area > 0.0) {
            Some("cross section must be positive")
        } else if q.n_points < 2 {
            Some("at least two grid points are required")
        } else if !(q.friction >= 0.0) {
            Some("friction must be non-negative")
        } else if !q.height_difference.is_finite() || !q.heat_transfer.is_finite() {
            Some("height difference and heat transfer must be finite")
        } else {
            None
        };
        if let Some(msg) = bad {
            issues.push(ValidationIssue::InvalidParameter(alloc::format!(
                "pipe {} ({}): {msg}",
                i,
                p.id
            )));
        }
    }
}

fn analyze(spec: &NetworkSpec, issues: &mut Vec<ValidationIssue>) -> Option<Analysis> {
    let n_nodes = spec.nodes.len();
    let n_pipes = spec.pipes.len();
    let before = issues.len();
    for p in &spec.pipes {
        for idx in [p.from, p.to] {
            if idx >= n_nodes {
                issues.push(ValidationIssue::IndexOutOfRange { what: "node", index: idx });
            }
        }
    }
    for c in &spec.consumers {
        for idx in core::iter::once(c.pipe_in).chain(c.pipe_out) {
            if idx >= n_pipes {
                issues.push(ValidationIssue::IndexOutOfRange { what: "pipe", index: idx });
            }
        }
    }
    for idx in [spec.depot.pipe_first, spec.depot.pipe_last] {
        if idx >= n_pipes {
            issues.push(ValidationIssue::IndexOutOfRange { what: "pipe", index: idx });
        }
    }
    check_params(spec, issues);
    if issues.len() > before {
        return None;
    }

    let mut incoming = vec![Vec::new(); n_nodes];
    let mut outgoing = vec![Vec::new(); n_nodes];
    for (i, p) in spec.pipes.iter().enumerate() {
        outgoing[p.from].push(i);
        incoming[p.to].push(i);
    }

    if spec.consumers.is_empty() {
        issues.push(ValidationIssue::NoConsumer);
    }
    let Depot { pipe_first: first, pipe_last: last } = spec.depot;
    if first == last {
        issues.push(ValidationIssue::DepotPipes(first));
        return None;
    }
    let depot_out = spec.pipes[first].from;
    let depot_in = spec.pipes[last].to;
    if outgoing[depot_out] != [first] || !incoming[depot_out].is_empty() {
        issues.push(ValidationIssue::DepotNodeShared { node: depot_out });
    }
    if incoming[depot_in] != [last] || !outgoing[depot_in].is_empty() {
        issues.push(ValidationIssue::DepotNodeShared { node: depot_in });
    }

    let mut consumer_by_in = vec![None; n_pipes];
    let mut consumer_by_out = vec![None; n_pipes];
    // node roles: consumer demand node (end of pipe_in) and supply node (start of pipe_out)
    let mut demand_node = vec![false; n_nodes];
    let mut supply_node = vec![false; n_nodes];
    for (k, c) in spec.consumers.iter().enumerate() {
        if consumer_by_in[c.pipe_in].is_some() || consumer_by_out[c.pipe_in].is_some() {
            issues.push(ValidationIssue::ConsumerPairing {
                consumer: k,
                detail: "in-pipe is already used by another consumer",
            });
        }
        consumer_by_in[c.pipe_in] = Some(k);
        let end = spec.pipes[c.pipe_in].to;
        demand_node[end] = true;
        if incoming[end] != [c.pipe_in] || !outgoing[end].is_empty() {
            issues.push(ValidationIssue::ConsumerPairing {
                consumer: k,
                detail: "in-pipe must end at a node of its own",
            });
        }
        let Some(out) = c.pipe_out else {
            issues.push(ValidationIssue::MissingOutPipe { consumer: k });
            continue;
        };
        if out == c.pipe_in {
            issues.push(ValidationIssue::ConsumerPairing {
                consumer: k,
                detail: "in-pipe and out-pipe coincide",
            });
            continue;
        }
        if consumer_by_out[out].is_some() || consumer_by_in[out].is_some() {
            issues.push(ValidationIssue::ConsumerPairing {
                consumer: k,
                detail: "out-pipe is already used by another consumer",
            });
        }
        consumer_by_out[out] = Some(k);
        let start = spec.pipes[out].from;
        supply_node[start] = true;
        if outgoing[start] != [out] || !incoming[start].is_empty() {
            issues.push(ValidationIssue::ConsumerPairing {
                consumer: k,
                detail: "out-pipe must start at a node of its own",
            });
        }
    }

    let mut subnet: Vec<Option<Subnet>> = vec![None; n_pipes];
    let mut flagged_nodes = vec![false; n_nodes];

    // forward tree, walking with the flow
    let mut forward_propagation = Vec::new();
    let mut queue = VecDeque::from([first]);
    while let Some(p) = queue.pop_front() {
        if subnet[p].is_some() {
            issues.push(ValidationIssue::Cycle { subnet: Subnet::Forward, pipe: p });
            continue;
        }
        subnet[p] = Some(Subnet::Forward);
        forward_propagation.push(p);
        if consumer_by_in[p].is_some() {
            continue;
        }
        let node = spec.pipes[p].to;
        if node == depot_in || node == depot_out || supply_node[node] || demand_node[node] {
            issues.push(ValidationIssue::NotATree {
                subnet: Subnet::Forward,
                node,
                detail: "reaches a depot or consumer node without passing a consumer",
            });
            continue;
        }
        if incoming[node].len() != 1 && !flagged_nodes[node] {
            flagged_nodes[node] = true;
            issues.push(ValidationIssue::NotATree {
                subnet: Subnet::Forward,
                node,
                detail: "node has more than one incoming pipe",
            });
        }
        if outgoing[node].is_empty() {
            issues.push(ValidationIssue::DeadEnd { subnet: Subnet::Forward, node });
        }
        queue.extend(outgoing[node].iter().copied());
    }

    // return tree, walking against the flow from the depot inlet
    let mut return_propagation = Vec::new();
    let mut queue = VecDeque::from([last]);
    while let Some(p) = queue.pop_front() {
        match subnet[p] {
            Some(Subnet::Forward) => {
                issues.push(ValidationIssue::InBothSubnets(p));
                continue;
            }
            Some(Subnet::Return) => {
                issues.push(ValidationIssue::Cycle { subnet: Subnet::Return, pipe: p });
                continue;
            }
            None => {}
        }
        subnet[p] = Some(Subnet::Return);
        return_propagation.push(p);
        if consumer_by_out[p].is_some() {
            continue;
        }
        let node = spec.pipes[p].from;
        if node == depot_in || node == depot_out || supply_node[node] || demand_node[node] {
            issues.push(ValidationIssue::NotATree {
                subnet: Subnet::Return,
                node,
                detail: "reaches a depot or consumer node without passing a consumer",
            });
            continue;
        }
        if outgoing[node].len() != 1 && !flagged_nodes[node] {
            flagged_nodes[node] = true;
            issues.push(ValidationIssue::NotATree {
                subnet: Subnet::Return,
                node,
                detail: "node has more than one outgoing pipe",
            });
        }
        if incoming[node].is_empty() {
            issues.push(ValidationIssue::DeadEnd { subnet: Subnet::Return, node });
        }
        queue.extend(incoming[node].iter().copied());
    }

    for (p, s) in subnet.iter().enumerate() {
        if s.is_none() {
            issues.push(ValidationIssue::Unreachable(p));
        }
    }
    for (k, c) in spec.consumers.iter().enumerate() {
        if subnet[c.pipe_in] != Some(Subnet::Forward) {
            issues.push(ValidationIssue::ConsumerPairing {
                consumer: k,
                detail: "in-pipe is not a leaf of the forward network",
            });
        }
        if let Some(out) = c.pipe_out {
            if subnet[out] != Some(Subnet::Return) {
                issues.push(ValidationIssue::ConsumerPairing {
                    consumer: k,
                    detail: "out-pipe is not a leaf of the return network",
                });
            }
        }
    }

    let derived_kinds: Vec<NodeKind> = (0..n_nodes)
        .map(|j| {
            if j == depot_out || supply_node[j] {
                NodeKind::Supply
            } else if j == depot_in || demand_node[j] {
                NodeKind::Demand
            } else {
                NodeKind::Interior
            }
        })
        .collect();
    for (j, node) in spec.nodes.iter().enumerate() {
        if node.kind != derived_kinds[j] {
            issues.push(ValidationIssue::KindMismatch {
                node: j,
                declared: node.kind,
                derived: derived_kinds[j],
            });
        }
    }

    Some(Analysis {
        incoming,
        outgoing,
        subnet,
        consumer_by_in,
        consumer_by_out,
        derived_kinds,
        forward_propagation,
        return_propagation,
    })
}

/// Runs every structural and parameter check; failures are report entries.
pub fn validate_topology(spec: &NetworkSpec) -> ValidationReport {
    let mut issues = Vec::new();
    analyze(spec, &mut issues);
    ValidationReport { issues }
}

/// Traversal orders of a (possibly unvalidated) network. Fails only if a
/// sub-network revisits a pipe.
pub fn flow_order(spec: &NetworkSpec) -> Result<FlowOrder, NetworkError> {
    let mut issues = Vec::new();
    let analysis = analyze(spec, &mut issues)
        .ok_or_else(|| NetworkError::Invalid(ValidationReport { issues: issues.clone() }))?;
    if let Some(ValidationIssue::Cycle { pipe, .. }) =
        issues.iter().find(|i| matches!(i, ValidationIssue::Cycle { .. }))
    {
        return Err(NetworkError::Cycle { pipe: *pipe });
    }
    Ok(order_from(&analysis))
}

fn order_from(a: &Analysis) -> FlowOrder {
    let rev = |v: &Vec<usize>| v.iter().rev().copied().collect::<Vec<_>>();
    FlowOrder {
        forward_aggregation: rev(&a.forward_propagation),
        forward_propagation: a.forward_propagation.clone(),
        return_aggregation: rev(&a.return_propagation),
        return_propagation: a.return_propagation.clone(),
    }
}

impl Network {
    /// Validates `spec` and derives incidence sets and traversal orders.
    pub fn new(spec: NetworkSpec) -> Result<Self, NetworkError> {
        let mut issues = Vec::new();
        let analysis = analyze(&spec, &mut issues);
        let analysis = match analysis {
            Some(a) if issues.is_empty() => a,
            _ => return Err(NetworkError::Invalid(ValidationReport { issues })),
        };
        let order = order_from(&analysis);
        let depot_nodes = [
            spec.pipes[spec.depot.pipe_first].from,
            spec.pipes[spec.depot.pipe_last].to,
        ];
        let interior_nodes = (0..spec.nodes.len())
            .filter(|j| {
                analysis.derived_kinds[*j] == NodeKind::Interior && !depot_nodes.contains(j)
            })
            .collect();
        let layout = StateLayout::new(&spec.pipes);
        Ok(Self {
            incoming: analysis.incoming,
            outgoing: analysis.outgoing,
            subnet: analysis.subnet.into_iter().map(|s| s.expect("validated")).collect(),
            consumer_by_in: analysis.consumer_by_in,
            consumer_by_out: analysis.consumer_by_out,
            interior_nodes,
            derived_kinds: analysis.derived_kinds,
            order,
            layout,
            spec,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn global(&self) -> &GlobalParams {
        &self.spec.global
    }

    pub fn pipes(&self) -> &[Pipe] {
        &self.spec.pipes
    }

    pub fn pipe(&self, i: usize) -> &PipeParams {
        &self.spec.pipes[i].params
    }

    pub fn nodes(&self) -> &[Node] {
        &self.spec.nodes
    }

    pub fn consumers(&self) -> &[Consumer] {
        &self.spec.consumers
    }

    pub fn depot(&self) -> Depot {
        self.spec.depot
    }

    /// N
    pub fn n_pipes(&self) -> usize {
        self.spec.pipes.len()
    }

    /// n_q
    pub fn n_consumers(&self) -> usize {
        self.spec.consumers.len()
    }

    /// σ_j
    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }

    /// Σ_j
    pub fn outgoing(&self, node: usize) -> &[usize] {
        &self.outgoing[node]
    }

    pub fn subnet(&self, pipe: usize) -> Subnet {
        self.subnet[pipe]
    }

    pub fn is_forward(&self, pipe: usize) -> bool {
        self.subnet[pipe] == Subnet::Forward
    }

    /// Consumer fed by `pipe`, if `pipe` is a consumer in-pipe.
    pub fn consumer_fed_by(&self, pipe: usize) -> Option<usize> {
        self.consumer_by_in[pipe]
    }

    /// Consumer discharging into `pipe`, if `pipe` is a consumer out-pipe.
    pub fn consumer_draining_into(&self, pipe: usize) -> Option<usize> {
        self.consumer_by_out[pipe]
    }

    /// Nodes that are neither depot nor consumer endpoints, ascending.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    pub fn node_kind(&self, node: usize) -> NodeKind {
        self.derived_kinds[node]
    }

    /// (n_s, n_d, n_junc)
    pub fn node_counts(&self) -> (usize, usize, usize) {
        let count = |k| self.derived_kinds.iter().filter(|&&d| d == k).count();
        (count(NodeKind::Supply), count(NodeKind::Demand), count(NodeKind::Interior))
    }

    /// I_f
    pub fn forward_pipes(&self) -> Vec<usize> {
        (0..self.n_pipes()).filter(|&i| self.is_forward(i)).collect()
    }

    /// I_b
    pub fn return_pipes(&self) -> Vec<usize> {
        (0..self.n_pipes()).filter(|&i| !self.is_forward(i)).collect()
    }

    /// I_S: pipes leaving a supply node (depot outlet or consumer).
    pub fn supply_pipes(&self) -> Vec<usize> {
        (0..self.n_pipes())
            .filter(|&i| self.derived_kinds[self.spec.pipes[i].from] == NodeKind::Supply)
            .collect()
    }

    /// I_D: pipes entering a demand node (consumer or depot inlet).
    pub fn demand_pipes(&self) -> Vec<usize> {
        (0..self.n_pipes())
            .filter(|&i| self.derived_kinds[self.spec.pipes[i].to] == NodeKind::Demand)
            .collect()
    }

    /// I_I
    pub fn interior_pipes(&self) -> Vec<usize> {
        let s = self.supply_pipes();
        let d = self.demand_pipes();
        (0..self.n_pipes()).filter(|i| !s.contains(i) && !d.contains(i)).collect()
    }

    pub fn flow_order(&self) -> &FlowOrder {
        &self.order
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    /// n_x
    pub fn state_dim(&self) -> usize {
        self.layout.dim()
    }

    /// n_y = 4N
    pub fn algebraic_dim(&self) -> usize {
        4 * self.n_pipes()
    }

    pub fn check_demand(&self, demand: &DemandSeries) -> Result<(), NetworkError> {
        if demand.len() != self.n_consumers() {
            return Err(NetworkError::DemandShape {
                expected: self.n_consumers(),
                got: demand.len(),
            });
        }
        Ok(())
    }
}

/// Thermal power demand Q_k(t) per consumer, W.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSeries {
    profiles: Vec<TimeProfile>,
    floor: Option<f64>,
}

impl DemandSeries {
    pub fn new(profiles: Vec<TimeProfile>) -> Result<Self, NetworkError> {
        if profiles.is_empty() {
            return Err(NetworkError::EmptyDemand);
        }
        Ok(Self { profiles, floor: None })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profiles(&self) -> &[TimeProfile] {
        &self.profiles
    }

    pub fn eval(&self, consumer: usize, t: f64) -> f64 {
        let q = self.profiles[consumer].eval(t);
        match self.floor {
            Some(f) => q.max(f),
            None => q,
        }
    }

    /// Scales every consumer's demand by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let profiles = self
            .profiles
            .iter()
            .map(|p| match p {
                TimeProfile::Constant(q) => TimeProfile::Constant(c * q),
                TimeProfile::Sampled(s) => {
                    let mut s = s.clone();
                    s.map_values(|q| c * q);
                    TimeProfile::Sampled(s)
                }
                TimeProfile::Analytic(_) => {
                    panic!("closed-form demands cannot be rescaled")
                }
            })
            .collect();
        Self { profiles, floor: self.floor }
    }
}

/// Q_k(t) <- max(Q_k(t), 1 W) pointwise.
pub fn clamp_demand(series: &DemandSeries) -> Result<DemandSeries, NetworkError> {
    if series.is_empty() {
        return Err(NetworkError::EmptyDemand);
    }
    let mut clamped = 0usize;
    let profiles = series
        .profiles
        .iter()
        .map(|p| match p {
            TimeProfile::Constant(q) => {
                if *q < MIN_DEMAND {
                    clamped += 1;
                }
                TimeProfile::Constant(q.max(MIN_DEMAND))
            }
            TimeProfile::Sampled(s) => {
                let mut s = s.clone();
                clamped += s.values().iter().filter(|&&q| q < MIN_DEMAND).count();
                s.map_values(|q| q.max(MIN_DEMAND));
                TimeProfile::Sampled(s)
            }
            TimeProfile::Analytic(f) => TimeProfile::Analytic(*f),
        })
        .collect();
    if clamped > 0 {
        log::info!("clamped {clamped} demand samples to the {MIN_DEMAND} W floor");
    }
    Ok(DemandSeries { profiles, floor: Some(MIN_DEMAND) })
}

/// Incremental construction by index, for networks built in code.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    spec: NetworkSpec,
}

impl NetworkBuilder {
    pub fn new(global: GlobalParams) -> Self {
        Self {
            spec: NetworkSpec {
                global,
                nodes: Vec::new(),
                pipes: Vec::new(),
                consumers: Vec::new(),
                depot: Depot { pipe_first: 0, pipe_last: 0 },
            },
        }
    }

    pub fn node(&mut self, id: &str, kind: NodeKind) -> usize {
        self.spec.nodes.push(Node { id: id.to_string(), kind });
        self.spec.nodes.len() - 1
    }

    pub fn pipe(&mut self, id: &str, from: usize, to: usize, params: PipeParams) -> usize {
        self.spec.pipes.push(Pipe { id: id.to_string(), from, to, params });
        self.spec.pipes.len() - 1
    }

    pub fn consumer(&mut self, id: &str, pipe_in: usize, pipe_out: usize) -> usize {
        self.spec.consumers.push(Consumer {
            id: id.to_string(),
            pipe_in,
            pipe_out: Some(pipe_out),
        });
        self.spec.consumers.len() - 1
    }

    pub fn depot(&mut self, pipe_first: usize, pipe_last: usize) -> &mut Self {
        self.spec.depot = Depot { pipe_first, pipe_last };
        self
    }

    pub fn spec(self) -> NetworkSpec {
        self.spec
    }

    pub fn build(self) -> Result<Network, NetworkError> {
        Network::new(self.spec)
    }
}
