use std::collections::{HashMap, VecDeque};

use serde_json::Value;

use super::coupled::{Component, CoupledModel, PortRef};
use super::model::{Atomic, Context, Inputs, Outputs, Status};
use super::{KernelError, SimTime};
use crate::trace::{MemorySink, TraceRecord, TraceSink};

/// Maximum number of consecutive steps at one simulated instant.
pub const MAX_ROUNDS_PER_INSTANT: usize = 1000;

/// An exogenous event injected on a root input port.
#[derive(Debug, Clone, PartialEq)]
pub struct Exogenous {
    pub time: SimTime,
    pub port: String,
    pub value: Value,
}

impl Exogenous {
    pub fn new(time: f64, port: &str, value: impl Into<Value>) -> Result<Self, KernelError> {
        Ok(Self {
            time: SimTime::new(time)?,
            port: port.to_string(),
            value: value.into(),
        })
    }
}

/// A port identified by the full path of its component.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PortId {
    pub component: String,
    pub port: String,
}

/// One routed bag: values that travelled from `source` to `target` in a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub source: PortId,
    pub target: PortId,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Internal,
    External,
    Confluent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub time: SimTime,
    /// Atomic paths whose internal event was due, in path order.
    pub imminent: Vec<String>,
    pub deliveries: Vec<Delivery>,
    /// Transitions applied this step, in path order.
    pub transitions: Vec<(String, Transition)>,
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Atomic { slot: usize, port: usize },
    Root { port: usize },
}

struct Slot {
    path: String,
    entity: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
    behavior: Box<dyn Atomic>,
    phase: String,
    last: SimTime,
    next: SimTime,
    routes: Vec<Vec<Target>>,
}

/// Root coordinator: executes a coupled model under Parallel DEVS semantics.
///
/// Atomics are visited in lexicographic order of their full path for output
/// collection and for transitions, so runs are deterministic.
pub struct Coordinator<S: TraceSink = MemorySink> {
    root_path: String,
    root_inputs: Vec<String>,
    root_outputs: Vec<String>,
    slots: Vec<Slot>,
    root_routes: Vec<Vec<Target>>,
    pending: VecDeque<Exogenous>,
    now: SimTime,
    initialized: bool,
    finished: bool,
    last_step: Option<SimTime>,
    rounds_at_instant: usize,
    logs: Vec<TraceRecord>,
    sink: S,
}

impl Coordinator<MemorySink> {
    pub fn new(root: CoupledModel) -> Result<Self, KernelError> {
        Self::with_sink(root, MemorySink::default())
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.sink.records
    }
}

impl<S: TraceSink> Coordinator<S> {
    pub fn with_sink(root: CoupledModel, sink: S) -> Result<Self, KernelError> {
        let flat = Flattener::run(root)?;
        Ok(Self {
            root_path: flat.root_path,
            root_inputs: flat.root_inputs,
            root_outputs: flat.root_outputs,
            slots: flat.slots,
            root_routes: flat.root_routes,
            pending: VecDeque::new(),
            now: SimTime::ZERO,
            initialized: false,
            finished: false,
            last_step: None,
            rounds_at_instant: 0,
            logs: Vec::new(),
            sink,
        })
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Full paths of every atomic, in the order they are visited.
    pub fn atomic_paths(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.path.as_str()).collect()
    }

    /// Runs every atomic's `initialize` hook at time zero. Idempotent.
    pub fn initialize(&mut self) -> Result<(), KernelError> {
        if self.initialized {
            return Ok(());
        }
        self.initialized = true;
        for i in 0..self.slots.len() {
            let slot = &mut self.slots[i];
            slot.last = self.now;
            let mut ctx = Context {
                now: self.now,
                phase: &mut slot.phase,
                next: &mut slot.next,
                entity: &slot.entity,
                logs: &mut self.logs,
            };
            slot.behavior.initialize(&mut ctx)?;
            self.flush_logs()?;
        }
        Ok(())
    }

    /// Queues exogenous events. They must be sorted by time and not lie in the past.
    pub fn inject(&mut self, events: impl IntoIterator<Item = Exogenous>) -> Result<(), KernelError> {
        let mut floor = self.pending.back().map(|e| e.time).unwrap_or(self.now);
        for (index, event) in events.into_iter().enumerate() {
            if event.time < floor || !event.time.is_finite() {
                return Err(KernelError::InputOrder { index });
            }
            if !self.root_inputs.contains(&event.port) {
                return Err(KernelError::MissingPort {
                    component: self.root_path.clone(),
                    port: event.port,
                });
            }
            floor = event.time;
            self.pending.push_back(event);
        }
        Ok(())
    }

    /// Time of the next event: the earliest internal event or pending exogenous input.
    pub fn next_time(&self) -> SimTime {
        let internal = self.slots.iter().map(|s| s.next).min().unwrap_or(SimTime::PASSIVE);
        match self.pending.front() {
            Some(e) if e.time < internal => e.time,
            _ => internal,
        }
    }

    /// Advances to the next event time and executes one output/route/transition cycle.
    /// Returns `None` when nothing is scheduled.
    pub fn step(&mut self) -> Result<Option<StepReport>, KernelError> {
        self.initialize()?;
        let t = self.next_time();
        if t.is_passive() {
            return Ok(None);
        }
        self.now = t;

        let n = self.slots.len();
        let imminent: Vec<bool> = self.slots.iter().map(|s| s.next == t).collect();
        if self.last_step == Some(t) {
            self.rounds_at_instant += 1;
        } else {
            self.rounds_at_instant = 1;
            self.last_step = Some(t);
        }
        if self.rounds_at_instant > MAX_ROUNDS_PER_INSTANT {
            let mut components: Vec<String> = self
                .slots
                .iter()
                .zip(&imminent)
                .filter(|(_, &imm)| imm)
                .map(|(s, _)| s.path.clone())
                .collect();
            if components.is_empty() {
                components.push(self.root_path.clone());
            }
            return Err(KernelError::Livelock {
                time: t.value(),
                rounds: self.rounds_at_instant,
                components,
            });
        }

        let mut inbox: Vec<Vec<Vec<Value>>> = self.slots.iter().map(|s| vec![Vec::new(); s.inputs.len()]).collect();
        let mut deliveries = Vec::new();

        // Exogenous inputs at t enter first.
        while self.pending.front().map(|e| e.time == t).unwrap_or(false) {
            let event = self.pending.pop_front().expect("checked front");
            let port = self
                .root_inputs
                .iter()
                .position(|p| *p == event.port)
                .expect("validated on inject");
            let source = PortId {
                component: self.root_path.clone(),
                port: event.port.clone(),
            };
            let targets = self.root_routes[port].clone();
            self.deliver(&source, &targets, vec![event.value], &mut inbox, &mut deliveries);
        }

        // Outputs of imminent atomics, then routing.
        for (i, _) in imminent.iter().enumerate().filter(|(_, hot)| **hot) {
            let slot = &self.slots[i];
            let status = Status {
                now: t,
                phase: &slot.phase,
            };
            let mut out = Outputs::new(&slot.outputs);
            slot.behavior.output(&status, &mut out);
            if let Some(port) = out.undeclared.first() {
                return Err(KernelError::UnknownOutputPort {
                    component: slot.path.clone(),
                    port: port.clone(),
                });
            }
            if cfg!(debug_assertions) {
                let mut again = Outputs::new(&slot.outputs);
                slot.behavior.output(&status, &mut again);
                if again.bags != out.bags {
                    return Err(KernelError::ImpureOutput {
                        component: slot.path.clone(),
                    });
                }
            }
            let bags = out.bags;
            for (port, bag) in bags.into_iter().enumerate() {
                if bag.is_empty() {
                    continue;
                }
                let source = PortId {
                    component: self.slots[i].path.clone(),
                    port: self.slots[i].outputs[port].clone(),
                };
                let targets = self.slots[i].routes[port].clone();
                self.deliver(&source, &targets, bag, &mut inbox, &mut deliveries);
            }
        }

        // Transitions.
        let mut transitions = Vec::new();
        for i in 0..n {
            let has_input = inbox[i].iter().any(|b| !b.is_empty());
            if !imminent[i] && !has_input {
                continue;
            }
            let slot = &mut self.slots[i];
            let elapsed = t.since(slot.last);
            let inputs = Inputs {
                names: &slot.inputs,
                bags: &inbox[i],
            };
            let mut ctx = Context {
                now: t,
                phase: &mut slot.phase,
                next: &mut slot.next,
                entity: &slot.entity,
                logs: &mut self.logs,
            };
            let kind = match (imminent[i], has_input) {
                (true, true) => {
                    slot.behavior.delta_con(&mut ctx, &inputs)?;
                    Transition::Confluent
                }
                (true, false) => {
                    slot.behavior.delta_int(&mut ctx)?;
                    Transition::Internal
                }
                _ => {
                    slot.behavior.delta_ext(&mut ctx, elapsed, &inputs)?;
                    Transition::External
                }
            };
            slot.last = t;
            transitions.push((slot.path.clone(), kind));
            self.flush_logs()?;
        }

        let imminent = self
            .slots
            .iter()
            .zip(&imminent)
            .filter(|(_, &imm)| imm)
            .map(|(s, _)| s.path.clone())
            .collect();
        Ok(Some(StepReport {
            time: t,
            imminent,
            deliveries,
            transitions,
        }))
    }

    /// Steps until the next event lies beyond `t_end`, then runs the exit hooks.
    pub fn run_until(&mut self, t_end: f64, exogenous: Vec<Exogenous>) -> Result<(), KernelError> {
        let t_end = SimTime::new(t_end)?;
        if !t_end.is_finite() {
            return Err(KernelError::InvalidTime(t_end.value()));
        }
        self.inject(exogenous)?;
        self.initialize()?;
        while self.next_time() <= t_end {
            self.step()?;
        }
        if self.now < t_end {
            self.now = t_end;
        }
        self.finish()
    }

    /// Runs each atomic's `exit` hook exactly once.
    pub fn finish(&mut self) -> Result<(), KernelError> {
        if self.finished {
            return Ok(());
        }
        self.finished = true;
        for slot in &mut self.slots {
            let mut ctx = Context {
                now: self.now,
                phase: &mut slot.phase,
                next: &mut slot.next,
                entity: &slot.entity,
                logs: &mut self.logs,
            };
            slot.behavior.exit(&mut ctx)?;
            for record in self.logs.drain(..) {
                self.sink.write(&record)?;
            }
        }
        self.sink.flush()?;
        Ok(())
    }

    fn deliver(
        &self,
        source: &PortId,
        targets: &[Target],
        values: Vec<Value>,
        inbox: &mut [Vec<Vec<Value>>],
        deliveries: &mut Vec<Delivery>,
    ) {
        for target in targets {
            let id = match *target {
                Target::Atomic { slot, port } => {
                    inbox[slot][port].extend(values.iter().cloned());
                    PortId {
                        component: self.slots[slot].path.clone(),
                        port: self.slots[slot].inputs[port].clone(),
                    }
                }
                Target::Root { port } => PortId {
                    component: self.root_path.clone(),
                    port: self.root_outputs[port].clone(),
                },
            };
            deliveries.push(Delivery {
                source: source.clone(),
                target: id,
                values: values.clone(),
            });
        }
    }

    fn flush_logs(&mut self) -> Result<(), KernelError> {
        for record in self.logs.drain(..) {
            self.sink.write(&record)?;
        }
        Ok(())
    }
}

/// Flattens a hierarchy into path-sorted atomic slots with precomputed routes.
struct Flattener {
    root_path: String,
    root_inputs: Vec<String>,
    root_outputs: Vec<String>,
    slots: Vec<Slot>,
    root_routes: Vec<Vec<Target>>,
}

struct CoupledInfo {
    parent: Option<String>,
    name: String,
    couplings: Vec<super::coupled::Coupling>,
    children: HashMap<String, String>,
}

impl Flattener {
    fn run(root: CoupledModel) -> Result<Flattener, KernelError> {
        let root_path = root.name.clone();
        let root_inputs = root.inputs.clone();
        let root_outputs = root.outputs.clone();
        let mut coupled: HashMap<String, CoupledInfo> = HashMap::new();
        let mut atomics = Vec::new();
        collect(root, None, &mut coupled, &mut atomics);

        atomics.sort_by(|a, b| a.0.path.cmp(&b.0.path));
        let index: HashMap<String, usize> = atomics
            .iter()
            .enumerate()
            .map(|(i, (slot, _))| (slot.path.clone(), i))
            .collect();

        let resolver = Resolver {
            coupled: &coupled,
            index: &index,
            atomic_inputs: atomics.iter().map(|(s, _)| s.inputs.clone()).collect(),
            root_outputs: &root_outputs,
        };

        let mut slots = Vec::with_capacity(atomics.len());
        let mut routes_all = Vec::with_capacity(atomics.len());
        for (slot, parent) in &atomics {
            let mut routes = Vec::with_capacity(slot.outputs.len());
            for port in &slot.outputs {
                let mut targets = Vec::new();
                resolver.route_output(parent.as_deref(), leaf_name(&slot.path), port, &mut targets);
                routes.push(targets);
            }
            routes_all.push(routes);
        }
        for ((mut slot, _), routes) in atomics.into_iter().zip(routes_all) {
            slot.routes = routes;
            slots.push(slot);
        }

        let mut root_routes = Vec::with_capacity(root_inputs.len());
        for port in &root_inputs {
            let mut targets = Vec::new();
            resolver.route_into_coupled(&root_path, port, &mut targets);
            root_routes.push(targets);
        }

        Ok(Flattener {
            root_path,
            root_inputs,
            root_outputs,
            slots,
            root_routes,
        })
    }
}

fn leaf_name(path: &str) -> &str {
    path.rsplit('.').next().unwrap_or(path)
}

fn collect(
    model: CoupledModel,
    parent: Option<String>,
    coupled: &mut HashMap<String, CoupledInfo>,
    atomics: &mut Vec<(Slot, Option<String>)>,
) {
    let path = match &parent {
        Some(p) => format!("{p}.{}", model.name),
        None => model.name.clone(),
    };
    let mut children = HashMap::new();
    for component in &model.components {
        children.insert(component.name().to_string(), format!("{path}.{}", component.name()));
    }
    coupled.insert(
        path.clone(),
        CoupledInfo {
            parent: parent.clone(),
            name: model.name.clone(),
            couplings: model.couplings.clone(),
            children,
        },
    );
    for component in model.components {
        match component {
            Component::Atomic(a) => {
                let slot = Slot {
                    path: format!("{path}.{}", a.name),
                    entity: a.entity,
                    routes: Vec::new(),
                    inputs: a.inputs,
                    outputs: a.outputs,
                    behavior: a.behavior,
                    phase: String::from("passive"),
                    last: SimTime::ZERO,
                    next: SimTime::PASSIVE,
                };
                atomics.push((slot, Some(path.clone())));
            }
            Component::Coupled(c) => collect(c, Some(path.clone()), coupled, atomics),
        }
    }
}

struct Resolver<'a> {
    coupled: &'a HashMap<String, CoupledInfo>,
    index: &'a HashMap<String, usize>,
    atomic_inputs: Vec<Vec<String>>,
    root_outputs: &'a [String],
}

impl Resolver<'_> {
    /// Follows couplings from output `port` of child `name` inside coupled model `parent`.
    fn route_output(&self, parent: Option<&str>, name: &str, port: &str, out: &mut Vec<Target>) {
        let Some(parent) = parent else {
            // `name` is the root itself.
            if let Some(p) = self.root_outputs.iter().position(|o| o == port) {
                out.push(Target::Root { port: p });
            }
            return;
        };
        let info = &self.coupled[parent];
        for coupling in &info.couplings {
            let PortRef::Child(src_child, src_port) = &coupling.src else {
                continue;
            };
            if src_child != name || src_port != port {
                continue;
            }
            match &coupling.dst {
                PortRef::Child(dst_child, dst_port) => {
                    let dst_path = &info.children[dst_child];
                    self.route_into_component(dst_path, dst_port, out);
                }
                PortRef::Own(own_port) => {
                    self.route_output(info.parent.as_deref(), &info.name, own_port, out);
                }
            }
        }
    }

    fn route_into_component(&self, path: &str, port: &str, out: &mut Vec<Target>) {
        if let Some(&slot) = self.index.get(path) {
            let p = self.atomic_inputs[slot]
                .iter()
                .position(|i| i == port)
                .expect("coupling endpoints validated on registration");
            out.push(Target::Atomic { slot, port: p });
        } else {
            self.route_into_coupled(path, port, out);
        }
    }

    /// Follows EIC couplings from input `port` of the coupled model at `path`.
    fn route_into_coupled(&self, path: &str, port: &str, out: &mut Vec<Target>) {
        let info = &self.coupled[path];
        for coupling in &info.couplings {
            if coupling.src != PortRef::Own(port.to_string()) {
                continue;
            }
            if let PortRef::Child(dst_child, dst_port) = &coupling.dst {
                self.route_into_component(&info.children[dst_child], dst_port, out);
            }
        }
    }
}
