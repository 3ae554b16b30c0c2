//! Reference scenario models and their command-line contracts.

pub mod abp;
pub mod barbershop;
pub mod iobs;
pub mod seird;

mod flags;
mod rng;

use std::fmt;
use std::str::FromStr;

use serde_json::Value;
use thiserror::Error;

pub use flags::{parse_value, Args, FlagKind, FlagSpec, FlagValue};
pub use rng::substream;

use crate::kernel::{Coordinator, CoupledModel, Exogenous, KernelError, Payload};
use crate::trace::{MemorySink, TraceRecord, TraceSink};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("invalid input stream: {0}")]
    Input(String),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// A ready-to-run model: root, exogenous schedule and horizon.
pub struct Built {
    pub root: CoupledModel,
    pub exogenous: Vec<Exogenous>,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    Abp,
    Seird,
    Barbershop,
    Iobs,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Abp,
        ScenarioKind::Seird,
        ScenarioKind::Barbershop,
        ScenarioKind::Iobs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Abp => "abp",
            ScenarioKind::Seird => "seird",
            ScenarioKind::Barbershop => "barbershop",
            ScenarioKind::Iobs => "iobs",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            ScenarioKind::Abp => "Alternating bit protocol over two noisy channels",
            ScenarioKind::Seird => "SEIRD epidemic, forward Euler",
            ScenarioKind::Barbershop => "Bounded reception queue with inspection/cutting handshake",
            ScenarioKind::Iobs => "Five-stage banking request pipeline",
        }
    }

    pub fn flags(self) -> &'static [FlagSpec] {
        match self {
            ScenarioKind::Abp => abp::FLAGS,
            ScenarioKind::Seird => seird::FLAGS,
            ScenarioKind::Barbershop => barbershop::FLAGS,
            ScenarioKind::Iobs => iobs::FLAGS,
        }
    }

    /// Whether this configuration reads an input stream from stdin.
    pub fn reads_stdin(self, args: &Args) -> bool {
        self == ScenarioKind::Barbershop && args.str("arrivals") == "stdin"
    }

    pub fn parse_args<S: AsRef<str>>(self, tokens: &[S]) -> Result<Args, ConfigError> {
        Args::parse(self.flags(), tokens)
    }

    pub fn build(self, args: &Args, stdin: Option<&str>) -> Result<Built, ConfigError> {
        match self {
            ScenarioKind::Abp => abp::build(&abp::AbpConfig::from_args(args)?),
            ScenarioKind::Seird => seird::build(&seird::SeirdConfig::from_args(args)?),
            ScenarioKind::Barbershop => barbershop::build(&barbershop::BarbershopConfig::from_args(args, stdin)?),
            ScenarioKind::Iobs => iobs::build(&iobs::IobsConfig::from_args(args)?),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ConfigError::Usage(format!("unknown scenario {s:?}")))
    }
}

/// Runs a built model to its horizon, streaming records into `sink`.
pub fn run_into<S: TraceSink>(built: Built, sink: S) -> Result<S, KernelError> {
    let mut coord = Coordinator::with_sink(built.root, sink)?;
    coord.run_until(built.horizon, built.exogenous)?;
    Ok(coord.into_sink())
}

pub fn run_built(built: Built) -> Result<Vec<TraceRecord>, KernelError> {
    Ok(run_into(built, MemorySink::default())?.records)
}

/// Parses `tokens`, builds the scenario and streams its trace into `sink`.
pub fn simulate<S: TraceSink, T: AsRef<str>>(
    kind: ScenarioKind,
    tokens: &[T],
    stdin: Option<&str>,
    sink: S,
) -> Result<S, ScenarioError> {
    let args = kind.parse_args(tokens)?;
    let built = kind.build(&args, stdin)?;
    Ok(run_into(built, sink)?)
}

/// In-memory convenience wrapper around [`simulate`].
pub fn simulate_records<T: AsRef<str>>(
    kind: ScenarioKind,
    tokens: &[T],
    stdin: Option<&str>,
) -> Result<Vec<TraceRecord>, ScenarioError> {
    Ok(simulate(kind, tokens, stdin, MemorySink::default())?.records)
}

pub(crate) fn payload(v: Value) -> Payload {
    match v {
        Value::Object(map) => map,
        other => panic!("payload must be an object, got {other}"),
    }
}
