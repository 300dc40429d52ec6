use alloc::string::String;

use thiserror::Error;

use crate::network::ValidationReport;

/// Failures while assembling or validating a network.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{what} refers to unknown {kind} `{id}`")]
    DanglingReference {
        what: String,
        kind: &'static str,
        id: String,
    },
    #[error("network failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("cycle detected while ordering pipes at pipe {pipe}")]
    Cycle { pipe: usize },
    #[error("demand series is empty")]
    EmptyDemand,
    #[error("demand series has {got} consumers, network has {expected}")]
    DemandShape { expected: usize, got: usize },
}

/// Failures of the algebraic closure. Pipe indices are 0-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClosureError {
    #[error(
        "pipe {pipe}: outlet temperature {outlet} does not exceed return temperature {t_out}"
    )]
    OutletBelowReturn { pipe: usize, outlet: f64, t_out: f64 },
    #[error("consumer {consumer}: demand {value} is not finite")]
    NonFiniteDemand { consumer: usize, value: f64 },
    #[error("depot velocity {0} is not positive")]
    DepotVelocity(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Closure(#[from] ClosureError),
    #[error("state dimension {got} does not match network ({expected})")]
    StateShape { expected: usize, got: usize },
    #[error("newton did not converge in {iterations} iterations (residual {residual:e})")]
    NewtonFailed { iterations: usize, residual: f64 },
    #[error("state left the domain at cell {cell} (value {value})")]
    Domain { cell: usize, value: f64 },
    #[error("time step {index} failed: {source}")]
    Step {
        index: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("invalid time grid: {0}")]
    Grid(&'static str),
    #[error("trajectory does not match the cost grid: {0}")]
    GridMismatch(&'static str),
    #[error("invalid input: {0}")]
    Input(String),
}

impl Error {
    pub(crate) fn at_step(self, index: usize) -> Self {
        Error::Step {
            index,
            source: alloc::boxed::Box::new(self),
        }
    }
}
