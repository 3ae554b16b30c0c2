//! Discrete-event world models on a Parallel DEVS kernel.
//!
//! - [`kernel`]: atomic/coupled models and the root coordinator.
//! - [`trace`]: the JSONL trace record, serializer and validating parser.
//! - [`scenarios`]: reference ABP, SEIRD, barbershop and IOBS models.
//! - [`conformance`]: rule catalogs, suites and simulator scoring.
//! - [`genpipe`]: spec-to-simulator generation pipeline and script runtime.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conformance;
pub mod genpipe;
pub mod kernel;
pub mod scenarios;
pub mod trace;

pub use kernel::{Atomic, AtomicModel, Coordinator, CoupledModel, Exogenous, KernelError, SimTime};
pub use scenarios::ScenarioKind;
pub use trace::{TraceRecord, TraceValidationReport};
