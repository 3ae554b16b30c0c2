use serde_json::{Map, Value};

use super::{validate_identifier, KernelError, SimTime};
use crate::trace::TraceRecord;

/// Payload attached to a trace record: a string-keyed map in insertion order.
pub type Payload = Map<String, Value>;

/// Behavior of a leaf model.
///
/// The kernel owns the clock. Transition hooks receive a [`Context`] through
/// which they schedule their next internal event (`hold_in`) and write trace
/// records. `output` only reads state; it runs before the transition of the
/// same instant.
pub trait Atomic {
    /// Called once at time zero, before any event is processed.
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.passivate();
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError>;

    fn delta_ext(&mut self, ctx: &mut Context<'_>, elapsed: f64, inputs: &Inputs<'_>) -> Result<(), KernelError>;

    /// Input arriving exactly at the scheduled internal time. The default runs
    /// the internal transition first, then the external one with zero elapsed.
    fn delta_con(&mut self, ctx: &mut Context<'_>, inputs: &Inputs<'_>) -> Result<(), KernelError> {
        self.delta_int(ctx)?;
        self.delta_ext(ctx, 0.0, inputs)
    }

    fn output(&self, status: &Status<'_>, out: &mut Outputs<'_>);

    /// Final hook, run once when a run completes.
    fn exit(&mut self, _ctx: &mut Context<'_>) -> Result<(), KernelError> {
        Ok(())
    }
}

/// Read-only view handed to [`Atomic::output`].
#[derive(Debug, Clone, Copy)]
pub struct Status<'a> {
    pub now: SimTime,
    pub phase: &'a str,
}

/// Scheduling and logging handle for a transition.
pub struct Context<'a> {
    pub(crate) now: SimTime,
    pub(crate) phase: &'a mut String,
    pub(crate) next: &'a mut SimTime,
    pub(crate) entity: &'a str,
    pub(crate) logs: &'a mut Vec<TraceRecord>,
}

impl<'a> Context<'a> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn phase(&self) -> &str {
        self.phase
    }

    /// Time left until the next scheduled internal event (infinite when passive).
    pub fn sigma(&self) -> f64 {
        self.next.since(self.now)
    }

    /// Same as [`Context::sigma`]; named after the DEVS time-advance function.
    pub fn time_advance(&self) -> f64 {
        self.sigma()
    }

    /// Sets the phase and schedules the next internal event `sigma` from now.
    /// `f64::INFINITY` makes the model passive.
    pub fn hold_in(&mut self, phase: &str, sigma: f64) -> Result<(), KernelError> {
        if sigma.is_nan() || sigma < 0.0 {
            return Err(KernelError::InvalidSchedule {
                phase: phase.to_string(),
                sigma,
            });
        }
        phase.clone_into(self.phase);
        *self.next = self.now.after(sigma);
        Ok(())
    }

    /// Schedules the next internal event at an absolute time, avoiding the
    /// rounding of `now + (at - now)` for models that track due times.
    pub fn hold_until(&mut self, phase: &str, at: SimTime) -> Result<(), KernelError> {
        if at < self.now {
            return Err(KernelError::InvalidSchedule {
                phase: phase.to_string(),
                sigma: at.value() - self.now.value(),
            });
        }
        phase.clone_into(self.phase);
        *self.next = at;
        Ok(())
    }

    pub fn passivate_in(&mut self, phase: &str) {
        phase.clone_into(self.phase);
        *self.next = SimTime::PASSIVE;
    }

    pub fn passivate(&mut self) {
        *self.next = SimTime::PASSIVE;
    }

    /// Records a trace event attributed to this model's entity.
    pub fn log(&mut self, event: &str, payload: Payload) {
        let entity = self.entity.to_string();
        self.log_as(entity, event, payload);
    }

    pub fn log_as(&mut self, entity: impl Into<String>, event: &str, payload: Payload) {
        self.logs.push(TraceRecord {
            time: self.now.value(),
            entity: entity.into(),
            event: event.to_string(),
            payload,
        });
    }
}

/// Bags delivered to a model at one instant, indexed by input port.
#[derive(Debug, Clone, Copy)]
pub struct Inputs<'a> {
    pub(crate) names: &'a [String],
    pub(crate) bags: &'a [Vec<Value>],
}

impl<'a> Inputs<'a> {
    /// Values on `port`, in delivery order; empty if nothing arrived.
    pub fn get(&self, port: &str) -> &'a [Value] {
        self.names
            .iter()
            .position(|n| n == port)
            .map(|i| self.bags[i].as_slice())
            .unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.bags.iter().all(Vec::is_empty)
    }

    /// Non-empty bags as `(port, values)` in port declaration order.
    pub fn iter(&self) -> impl Iterator<Item = (&'a str, &'a [Value])> + 'a {
        let bags = self.bags;
        self.names
            .iter()
            .zip(bags.iter())
            .filter(|(_, bag)| !bag.is_empty())
            .map(|(name, bag)| (name.as_str(), bag.as_slice()))
    }
}

/// Output bags being filled by [`Atomic::output`].
#[derive(Debug)]
pub struct Outputs<'a> {
    pub(crate) names: &'a [String],
    pub(crate) bags: Vec<Vec<Value>>,
    pub(crate) undeclared: Vec<String>,
}

impl<'a> Outputs<'a> {
    pub(crate) fn new(names: &'a [String]) -> Self {
        Self {
            names,
            bags: vec![Vec::new(); names.len()],
            undeclared: Vec::new(),
        }
    }

    pub fn send(&mut self, port: &str, value: impl Into<Value>) {
        match self.names.iter().position(|n| n == port) {
            Some(i) => self.bags[i].push(value.into()),
            None => self.undeclared.push(port.to_string()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bags.iter().all(Vec::is_empty)
    }
}

/// A leaf component: a named behavior plus its declared ports.
pub struct AtomicModel {
    pub(crate) name: String,
    pub(crate) entity: String,
    pub(crate) inputs: Vec<String>,
    pub(crate) outputs: Vec<String>,
    pub(crate) behavior: Box<dyn Atomic>,
}

impl AtomicModel {
    pub fn new(name: &str, behavior: impl Atomic + 'static) -> Result<Self, KernelError> {
        Self::boxed(name, Box::new(behavior))
    }

    pub fn boxed(name: &str, behavior: Box<dyn Atomic>) -> Result<Self, KernelError> {
        validate_identifier(name)?;
        Ok(Self {
            name: name.to_string(),
            entity: name.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            behavior,
        })
    }

    pub fn with_input(mut self, port: &str) -> Result<Self, KernelError> {
        add_port(&self.name, &mut self.inputs, port)?;
        Ok(self)
    }

    pub fn with_output(mut self, port: &str) -> Result<Self, KernelError> {
        add_port(&self.name, &mut self.outputs, port)?;
        Ok(self)
    }

    /// Entity name written into trace records (defaults to the model name).
    pub fn with_entity(mut self, entity: &str) -> Self {
        self.entity = entity.to_string();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }
}

impl std::fmt::Debug for AtomicModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AtomicModel")
            .field("name", &self.name)
            .field("entity", &self.entity)
            .field("inputs", &self.inputs)
            .field("outputs", &self.outputs)
            .finish_non_exhaustive()
    }
}

pub(crate) fn add_port(owner: &str, ports: &mut Vec<String>, port: &str) -> Result<(), KernelError> {
    validate_identifier(port)?;
    if ports.iter().any(|p| p == port) {
        return Err(KernelError::DuplicatePort {
            component: owner.to_string(),
            port: port.to_string(),
        });
    }
    ports.push(port.to_string());
    Ok(())
}
