//! Simulation and optimal control of dynamic district heating networks.
//!
//! The network model is an index-1 DAE: pipe temperatures on a method-of-lines
//! grid are the differential state, and velocities, inlet temperatures and end
//! pressures are algebraic. Because the network is a pair of trees (supply and
//! return) joined by consumers and a single depot, the algebraic part can be
//! eliminated in closed form by three tree traversals ([`closure`]). What is left
//! is an ODE that [`simulator`] integrates with implicit Euler.
//!
//! On top of the simulator sit two controllers:
//!
//! - [`instantaneous`]: a sequence of one-step stationary problems solved with a
//!   box-constrained trust-region method, used to find consistent initial data
//!   and desired trajectories;
//! - [`optimizer`]: discretize-before-optimize minimization of a regularized
//!   operating cost with a projected limited-memory BFGS method.
//!
//! [`verification`] carries a manufactured solution on a six-pipe network and
//! the convergence study built on it.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! wall-clock timing live in the `heatnet` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod closure;
pub mod error;
pub mod instantaneous;
pub mod linalg;
pub mod network;
pub mod optimizer;
pub mod profile;
pub mod simulator;
pub mod verification;

mod math;

pub use closure::{AlgebraicVector, Control, ControlBounds};
pub use error::{ClosureError, Error, NetworkError};
pub use network::{
    Consumer, DemandSeries, Depot, FlowOrder, GlobalParams, Network, NetworkSpec, Node, NodeKind,
    Pipe, PipeParams, StateLayout, ValidationIssue, ValidationReport,
};
pub use profile::{PiecewiseLinear, TimeProfile};
pub use simulator::{NewtonConfig, TimeGrid, Trajectory};
