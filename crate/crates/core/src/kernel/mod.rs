//! Parallel DEVS simulation kernel.
//!
//! Leaf behavior is written against the [`Atomic`] trait and wrapped into an
//! [`AtomicModel`] that declares its ports. [`CoupledModel`]s compose children
//! through EIC/IC/EOC couplings, and a [`Coordinator`] runs the root:
//! at each event time it collects the outputs of every imminent atomic, routes
//! the bags (following coupling chains across the hierarchy), and then applies
//! the confluent, internal or external transition to each affected atomic.

mod coordinator;
mod coupled;
mod model;
mod time;

#[cfg(test)]
mod tests;

pub use coordinator::{Coordinator, Delivery, Exogenous, PortId, StepReport, Transition, MAX_ROUNDS_PER_INSTANT};
pub use coupled::{Component, CoupledModel, Coupling, CouplingKind, PortRef};
pub use model::{Atomic, AtomicModel, Context, Inputs, Outputs, Payload, Status};
pub use time::SimTime;

use thiserror::Error;

use crate::trace::TraceError;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid simulation time {0}")]
    InvalidTime(f64),
    #[error("invalid schedule: phase {phase:?} with sigma {sigma}")]
    InvalidSchedule { phase: String, sigma: f64 },
    #[error("invalid identifier {0:?}")]
    InvalidName(String),
    #[error("duplicate port {port:?} on {component}")]
    DuplicatePort { component: String, port: String },
    #[error("duplicate component {name:?} in {parent}")]
    DuplicateComponent { parent: String, name: String },
    #[error("unknown component {name:?} in {parent}")]
    MissingComponent { parent: String, name: String },
    #[error("unknown port {port:?} on {component}")]
    MissingPort { component: String, port: String },
    #[error("illegal coupling {src} -> {dst} in {parent}: {reason}")]
    CouplingClass {
        parent: String,
        src: String,
        dst: String,
        reason: String,
    },
    #[error("livelock at t={time}: {rounds} rounds at one instant involving {components:?}")]
    Livelock {
        time: f64,
        rounds: usize,
        components: Vec<String>,
    },
    #[error("exogenous input {index} is out of time order")]
    InputOrder { index: usize },
    #[error("{component} sent on undeclared output port {port:?}")]
    UnknownOutputPort { component: String, port: String },
    #[error("output function of {component} is not idempotent")]
    ImpureOutput { component: String },
    #[error("model {component}: {message}")]
    Model { component: String, message: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Checks `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub(crate) fn validate_identifier(name: &str) -> Result<(), KernelError> {
    if is_identifier(name) {
        Ok(())
    } else {
        Err(KernelError::InvalidName(name.to_string()))
    }
}
