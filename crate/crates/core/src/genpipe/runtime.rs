//! Executes generated Rhai scripts on the kernel.
//!
//! Atomic scripts keep their state in `this` and end every transition with
//! `hold_in`, `hold_until` or `passivate`, which store `this.phase` and the
//! absolute due time `this.next`. Coupled scripts list components and wires.
//! The controller declares flags, horizon and exogenous inputs.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::path::Path;
use std::rc::Rc;

use rhai::{Array, CallFnOptions, Dynamic, Engine, EvalAltResult, FuncArgs, Map, Scope, AST, FLOAT, INT};
use serde_json::Value;
use thiserror::Error;

use super::schema::NodeKind;
use crate::kernel::{
    Atomic, AtomicModel, Component, Context, Coordinator, CoupledModel, Exogenous, Inputs, KernelError, Outputs,
    Payload, SimTime, Status,
};
use crate::scenarios::Built;
use crate::trace::{MemorySink, TraceRecord, TraceSink};

/// Operation budget for one script call.
pub const MAX_OPERATIONS: u64 = 2_000_000;
const MAX_NESTING: usize = 32;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot load program: {0}")]
    Load(String),
    #[error("{script}: {message}")]
    Script { script: String, message: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// What a script is expected to define.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptRole {
    Atomic,
    Coupled,
    Controller,
}

impl From<NodeKind> for ScriptRole {
    fn from(kind: NodeKind) -> Self {
        match kind {
            NodeKind::Atomic => ScriptRole::Atomic,
            NodeKind::Coupled => ScriptRole::Coupled,
        }
    }
}

impl ScriptRole {
    fn required(self) -> &'static [(&'static str, usize)] {
        match self {
            ScriptRole::Atomic => &[
                ("ports", 0),
                ("init", 1),
                ("delta_int", 0),
                ("delta_ext", 2),
                ("output", 0),
            ],
            ScriptRole::Coupled => &[("ports", 0), ("components", 1), ("couplings", 0)],
            ScriptRole::Controller => &[("flags", 0), ("root", 0), ("horizon", 1)],
        }
    }
}

/// Engine with the limits used for both compiling and running scripts.
fn base_engine() -> Engine {
    let mut e = Engine::new();
    e.set_max_expr_depths(256, 128);
    e.set_max_operations(MAX_OPERATIONS);
    e.set_max_call_levels(64);
    e
}

fn defines(ast: &AST, name: &str, arity: usize) -> bool {
    ast.iter_functions().any(|f| f.name == name && f.params.len() == arity)
}

/// Compiles `source` and checks that it defines what `role` needs.
pub fn check_source(role: ScriptRole, source: &str) -> Result<(), String> {
    let ast = base_engine()
        .compile(source)
        .map_err(|e| format!("does not compile: {e}"))?;
    let missing: Vec<String> = role
        .required()
        .iter()
        .filter(|(name, arity)| !defines(&ast, name, *arity))
        .map(|(name, arity)| format!("{name}/{arity}"))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(format!("missing functions {}", missing.join(", ")))
    }
}

type Emitted = (Option<String>, String, Map);

#[derive(Default)]
struct Shared {
    now: Cell<f64>,
    logs: RefCell<Vec<Emitted>>,
}

fn script_error(message: impl Into<String>) -> Box<EvalAltResult> {
    message.into().into()
}

fn schedule(this: &mut Map, phase: &str, next: f64) {
    this.insert("phase".into(), phase.into());
    this.insert("next".into(), Dynamic::from_float(next));
}

fn engine(shared: &Rc<Shared>) -> Engine {
    let mut e = base_engine();
    e.on_print(|s| eprintln!("{s}"));
    e.on_debug(|s, _, pos| eprintln!("{pos:?} {s}"));

    let s = shared.clone();
    e.register_fn("now", move || -> FLOAT { s.now.get() });
    let s = shared.clone();
    e.register_fn("emit", move |event: &str, payload: Map| {
        s.logs.borrow_mut().push((None, event.to_string(), payload));
    });
    let s = shared.clone();
    e.register_fn("emit_as", move |entity: &str, event: &str, payload: Map| {
        s.logs
            .borrow_mut()
            .push((Some(entity.to_string()), event.to_string(), payload));
    });

    let s = shared.clone();
    let hold_in = move |this: &mut Map, phase: &str, sigma: FLOAT| -> Result<(), Box<EvalAltResult>> {
        if sigma.is_nan() || sigma < 0.0 {
            return Err(script_error(format!(
                "hold_in({phase:?}, {sigma}): negative or NaN duration"
            )));
        }
        schedule(this, phase, s.now.get() + sigma);
        Ok(())
    };
    let int_hold_in = hold_in.clone();
    e.register_fn("hold_in", hold_in);
    e.register_fn("hold_in", move |this: &mut Map, phase: &str, sigma: INT| {
        int_hold_in(this, phase, sigma as FLOAT)
    });

    let s = shared.clone();
    let hold_until = move |this: &mut Map, phase: &str, at: FLOAT| -> Result<(), Box<EvalAltResult>> {
        if at.is_nan() || at < s.now.get() {
            return Err(script_error(format!(
                "hold_until({phase:?}, {at}): time is in the past"
            )));
        }
        schedule(this, phase, at);
        Ok(())
    };
    let int_hold_until = hold_until.clone();
    e.register_fn("hold_until", hold_until);
    e.register_fn("hold_until", move |this: &mut Map, phase: &str, at: INT| {
        int_hold_until(this, phase, at as FLOAT)
    });
    e.register_fn("passivate", |this: &mut Map, phase: &str| {
        schedule(this, phase, FLOAT::INFINITY)
    });
    e
}

fn call(
    engine: &Engine,
    ast: &AST,
    this: Option<&mut Dynamic>,
    name: &str,
    args: impl FuncArgs,
) -> Result<Dynamic, String> {
    let mut scope = Scope::new();
    let mut options = CallFnOptions::new().eval_ast(false).rewind_scope(true);
    if let Some(this) = this {
        options = options.bind_this_ptr(this);
    }
    engine
        .call_fn_with_options::<Dynamic>(options, &mut scope, ast, name, args)
        .map_err(|e| format!("{name}: {e}"))
}

fn to_json(value: &Dynamic) -> Result<Value, String> {
    rhai::serde::from_dynamic(value).map_err(|e| format!("cannot convert {value}: {e}"))
}

fn from_json(value: &Value) -> Result<Dynamic, String> {
    rhai::serde::to_dynamic(value).map_err(|e| format!("cannot convert {value}: {e}"))
}

fn number(value: &Dynamic) -> Option<f64> {
    value.as_float().ok().or_else(|| value.as_int().ok().map(|v| v as f64))
}

struct ScriptAtomic {
    class: String,
    engine: Rc<Engine>,
    ast: Rc<AST>,
    shared: Rc<Shared>,
    state: Dynamic,
    args: Dynamic,
    has_con: bool,
    has_finish: bool,
    fault: RefCell<Option<String>>,
}

impl ScriptAtomic {
    fn fail(&self, message: impl Into<String>) -> KernelError {
        KernelError::Model {
            component: self.class.clone(),
            message: message.into(),
        }
    }

    fn transition(&mut self, ctx: &mut Context<'_>, name: &str, args: impl FuncArgs) -> Result<(), KernelError> {
        if let Some(fault) = self.fault.borrow_mut().take() {
            return Err(self.fail(fault));
        }
        self.shared.now.set(ctx.now().value());
        self.shared.logs.borrow_mut().clear();
        let result = call(&self.engine, &self.ast, Some(&mut self.state), name, args);
        let logs = self.shared.logs.take();
        if let Err(e) = result {
            return Err(self.fail(e));
        }
        for (entity, event, payload) in logs {
            let payload: Payload = match to_json(&Dynamic::from_map(payload)).map_err(|e| self.fail(e))? {
                Value::Object(map) => map,
                _ => unreachable!("maps convert to objects"),
            };
            match entity {
                Some(entity) => ctx.log_as(entity, &event, payload),
                None => ctx.log(&event, payload),
            }
        }
        self.apply_schedule(ctx)
    }

    fn apply_schedule(&self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        let state = self
            .state
            .read_lock::<Map>()
            .ok_or_else(|| self.fail("state `this` is no longer a map"))?;
        let phase = state.get("phase").and_then(|p| p.clone().into_string().ok());
        let next = state.get("next").and_then(number);
        let (Some(phase), Some(next)) = (phase, next) else {
            return Err(self.fail("no schedule; end transitions with hold_in, hold_until or passivate"));
        };
        if next.is_infinite() && next > 0.0 {
            ctx.passivate_in(&phase);
            Ok(())
        } else {
            ctx.hold_until(&phase, SimTime::new(next)?)
        }
    }

    fn inputs(&self, inputs: &Inputs<'_>) -> Result<Map, KernelError> {
        let mut map = Map::new();
        for (port, values) in inputs.iter() {
            let bag: Array = values
                .iter()
                .map(from_json)
                .collect::<Result<_, _>>()
                .map_err(|e| self.fail(e))?;
            map.insert(port.into(), bag.into());
        }
        Ok(map)
    }

    fn emit_outputs(&self, result: Dynamic, out: &mut Outputs<'_>) -> Result<(), String> {
        if result.is_unit() {
            return Ok(());
        }
        let bags = result
            .try_cast::<Map>()
            .ok_or("output must return a map from port to messages")?;
        for (port, bag) in bags {
            let messages = match bag.try_cast::<Array>() {
                Some(array) => array,
                None => return Err(format!("output for port {port} must be an array")),
            };
            for message in &messages {
                out.send(port.as_str(), to_json(message)?);
            }
        }
        Ok(())
    }
}

impl Atomic for ScriptAtomic {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        let args = self.args.clone();
        self.transition(ctx, "init", (args,))
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        self.transition(ctx, "delta_int", ())
    }

    fn delta_ext(&mut self, ctx: &mut Context<'_>, elapsed: f64, inputs: &Inputs<'_>) -> Result<(), KernelError> {
        let bags = self.inputs(inputs)?;
        self.transition(ctx, "delta_ext", (elapsed, bags))
    }

    fn delta_con(&mut self, ctx: &mut Context<'_>, inputs: &Inputs<'_>) -> Result<(), KernelError> {
        if self.has_con {
            let bags = self.inputs(inputs)?;
            self.transition(ctx, "delta_con", (bags,))
        } else {
            self.delta_int(ctx)?;
            self.delta_ext(ctx, 0.0, inputs)
        }
    }

    fn output(&self, status: &Status<'_>, out: &mut Outputs<'_>) {
        self.shared.now.set(status.now.value());
        let mut this = self.state.clone();
        let result = call(&self.engine, &self.ast, Some(&mut this), "output", ());
        self.shared.logs.borrow_mut().clear();
        if let Err(e) = result.and_then(|r| self.emit_outputs(r, out)) {
            self.fault.borrow_mut().get_or_insert(e);
        }
    }

    fn exit(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        if self.has_finish {
            self.transition(ctx, "finish", ())?;
        }
        match self.fault.borrow_mut().take() {
            Some(fault) => Err(self.fail(fault)),
            None => Ok(()),
        }
    }
}

struct Script {
    kind: NodeKind,
    ast: Rc<AST>,
}

/// A loaded controller plus model scripts, ready to build runs.
pub struct Program {
    controller: AST,
    models: BTreeMap<String, Script>,
}

/// Flag defaults declared by a controller.
#[derive(Debug, Clone, PartialEq)]
pub struct FlagDefault {
    pub name: String,
    pub default: Value,
}

impl Program {
    pub fn new<'a>(
        controller: &str,
        models: impl IntoIterator<Item = (&'a str, NodeKind, &'a str)>,
    ) -> Result<Self, RuntimeError> {
        let compiler = base_engine();
        let compile = |name: &str, role: ScriptRole, source: &str| -> Result<AST, RuntimeError> {
            check_source(role, source).map_err(|message| RuntimeError::Script {
                script: name.to_string(),
                message,
            })?;
            compiler.compile(source).map_err(|e| RuntimeError::Script {
                script: name.to_string(),
                message: e.to_string(),
            })
        };
        let controller = compile("controller", ScriptRole::Controller, controller)?;
        let mut scripts = BTreeMap::new();
        for (class, kind, source) in models {
            let ast = compile(class, kind.into(), source)?;
            scripts.insert(
                class.to_string(),
                Script {
                    kind,
                    ast: Rc::new(ast),
                },
            );
        }
        Ok(Self {
            controller,
            models: scripts,
        })
    }

    /// Loads an artifact directory written by [`super::ArtifactSet::write`].
    pub fn load(dir: &Path) -> Result<Self, RuntimeError> {
        let manifest = super::artifacts::Manifest::read(dir).map_err(|e| RuntimeError::Load(e.to_string()))?;
        let read = |file: &str| {
            std::fs::read_to_string(dir.join(file))
                .map_err(|e| RuntimeError::Load(format!("{}: {e}", dir.join(file).display())))
        };
        let controller = read(&manifest.controller)?;
        let mut sources = Vec::new();
        for (class, entry) in &manifest.models {
            sources.push((class.clone(), entry.kind, read(&entry.source)?));
        }
        Self::new(
            &controller,
            sources.iter().map(|(c, k, s)| (c.as_str(), *k, s.as_str())),
        )
    }

    fn controller_call(&self, engine: &Engine, name: &str, args: impl FuncArgs) -> Result<Dynamic, RuntimeError> {
        call(engine, &self.controller, None, name, args).map_err(|message| RuntimeError::Script {
            script: "controller".into(),
            message,
        })
    }

    fn bad_controller(message: impl Into<String>) -> RuntimeError {
        RuntimeError::Script {
            script: "controller".into(),
            message: message.into(),
        }
    }

    fn defaults(&self, engine: &Engine) -> Result<Map, RuntimeError> {
        self.controller_call(engine, "flags", ())?
            .try_cast::<Map>()
            .ok_or_else(|| Self::bad_controller("flags() must return a map"))
    }

    /// Declared flags in name order.
    pub fn flags(&self) -> Result<Vec<FlagDefault>, RuntimeError> {
        let engine = engine(&Rc::new(Shared::default()));
        self.defaults(&engine)?
            .iter()
            .map(|(name, v)| {
                Ok(FlagDefault {
                    name: name.to_string(),
                    default: to_json(v).map_err(Self::bad_controller)?,
                })
            })
            .collect()
    }

    fn parse_args<S: AsRef<str>>(&self, engine: &Engine, tokens: &[S]) -> Result<Map, RuntimeError> {
        let mut args = self.defaults(engine)?;
        let mut seen: Vec<String> = Vec::new();
        let mut iter = tokens.iter().map(AsRef::as_ref);
        while let Some(token) = iter.next() {
            let Some(body) = token.strip_prefix("--") else {
                return Err(RuntimeError::Usage(format!("unexpected argument {token:?}")));
            };
            let (name, raw) = match body.split_once('=') {
                Some((name, raw)) => (name, raw),
                None => (
                    body,
                    iter.next()
                        .ok_or_else(|| RuntimeError::Usage(format!("--{body} needs a value")))?,
                ),
            };
            let default = args
                .get(name)
                .ok_or_else(|| RuntimeError::Usage(format!("unknown flag --{name}")))?;
            if seen.iter().any(|s| s == name) {
                return Err(RuntimeError::Usage(format!("--{name} given twice")));
            }
            seen.push(name.to_string());
            let value = parse_flag(default, raw)
                .ok_or_else(|| RuntimeError::Usage(format!("--{name} expects {}, got {raw:?}", default.type_name())))?;
            args.insert(name.into(), value);
        }
        Ok(args)
    }

    /// Parses flags and builds the model tree, schedule and horizon.
    pub fn build<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Built, RuntimeError> {
        let shared = Rc::new(Shared::default());
        let engine = Rc::new(engine(&shared));
        let args = Dynamic::from_map(self.parse_args(&engine, tokens)?);
        if defines(&self.controller, "validate", 1) {
            let verdict = self.controller_call(&engine, "validate", (args.clone(),))?;
            if let Ok(message) = verdict.into_string() {
                return Err(RuntimeError::Usage(message));
            }
        }
        let horizon = number(&self.controller_call(&engine, "horizon", (args.clone(),))?)
            .filter(|h| h.is_finite() && *h >= 0.0)
            .ok_or_else(|| Self::bad_controller("horizon(args) must return a finite time >= 0"))?;
        let mut exogenous = Vec::new();
        if defines(&self.controller, "exogenous", 1) {
            let events = self
                .controller_call(&engine, "exogenous", (args.clone(),))?
                .try_cast::<Array>()
                .ok_or_else(|| Self::bad_controller("exogenous(args) must return an array"))?;
            for event in events {
                let parts = event.try_cast::<Array>().unwrap_or_default();
                let [time, port, value] = parts.as_slice() else {
                    return Err(Self::bad_controller("exogenous entries are [time, port, value]"));
                };
                let time = number(time).ok_or_else(|| Self::bad_controller("exogenous time must be a number"))?;
                let port = port
                    .clone()
                    .into_string()
                    .map_err(|_| Self::bad_controller("port must be a string"))?;
                let value = to_json(value).map_err(Self::bad_controller)?;
                exogenous.push(Exogenous::new(time, &port, value)?);
            }
        }
        let class = self
            .controller_call(&engine, "root", ())?
            .into_string()
            .map_err(|_| Self::bad_controller("root() must return a class name"))?;
        let builder = Builder {
            program: self,
            engine,
            shared,
        };
        let root = match builder.instantiate(&class, &class.to_lowercase(), None, args, 0)? {
            Component::Coupled(root) => root,
            Component::Atomic(atomic) => {
                let mut root = CoupledModel::new("top")?;
                root.add_component(atomic)?;
                root
            }
        };
        Ok(Built {
            root,
            exogenous,
            horizon,
        })
    }

    pub fn run_into<S: TraceSink, T: AsRef<str>>(&self, tokens: &[T], sink: S) -> Result<S, RuntimeError> {
        let built = self.build(tokens)?;
        let mut coord = Coordinator::with_sink(built.root, sink)?;
        coord.run_until(built.horizon, built.exogenous)?;
        Ok(coord.into_sink())
    }

    pub fn run<T: AsRef<str>>(&self, tokens: &[T]) -> Result<Vec<TraceRecord>, RuntimeError> {
        Ok(self.run_into(tokens, MemorySink::default())?.records)
    }
}

fn parse_flag(default: &Dynamic, raw: &str) -> Option<Dynamic> {
    let raw_trim = raw.trim();
    if default.is_int() {
        raw_trim.parse::<INT>().ok().map(Dynamic::from_int)
    } else if default.is_float() {
        raw_trim
            .parse::<FLOAT>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Dynamic::from_float)
    } else if default.is_bool() {
        raw_trim.parse::<bool>().ok().map(Dynamic::from_bool)
    } else {
        Some(raw.into())
    }
}

struct Builder<'a> {
    program: &'a Program,
    engine: Rc<Engine>,
    shared: Rc<Shared>,
}

struct Ports {
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl Builder<'_> {
    fn error(class: &str, message: impl Into<String>) -> RuntimeError {
        RuntimeError::Script {
            script: class.to_string(),
            message: message.into(),
        }
    }

    fn strings(class: &str, what: &str, value: Option<&Dynamic>) -> Result<Vec<String>, RuntimeError> {
        let Some(value) = value else {
            return Ok(Vec::new());
        };
        let array = value
            .clone()
            .try_cast::<Array>()
            .ok_or_else(|| Self::error(class, format!("{what} must be an array of strings")))?;
        array
            .into_iter()
            .map(|v| {
                v.into_string()
                    .map_err(|_| Self::error(class, format!("{what} must be an array of strings")))
            })
            .collect()
    }

    fn ports(&self, class: &str, ast: &AST) -> Result<Ports, RuntimeError> {
        let declared = call(&self.engine, ast, None, "ports", ())
            .map_err(|e| Self::error(class, e))?
            .try_cast::<Map>()
            .ok_or_else(|| Self::error(class, "ports() must return #{inputs: [..], outputs: [..]}"))?;
        Ok(Ports {
            inputs: Self::strings(class, "inputs", declared.get("inputs"))?,
            outputs: Self::strings(class, "outputs", declared.get("outputs"))?,
        })
    }

    fn instantiate(
        &self,
        class: &str,
        name: &str,
        entity: Option<&str>,
        args: Dynamic,
        depth: usize,
    ) -> Result<Component, RuntimeError> {
        if depth > MAX_NESTING {
            return Err(Self::error(class, "model nesting is too deep"));
        }
        let script = self
            .program
            .models
            .get(class)
            .ok_or_else(|| RuntimeError::Load(format!("no model class {class}")))?;
        let ports = self.ports(class, &script.ast)?;
        match script.kind {
            NodeKind::Atomic => {
                let behavior = ScriptAtomic {
                    class: class.to_string(),
                    engine: self.engine.clone(),
                    ast: script.ast.clone(),
                    shared: self.shared.clone(),
                    state: Dynamic::from_map(Map::new()),
                    args,
                    has_con: defines(&script.ast, "delta_con", 1),
                    has_finish: defines(&script.ast, "finish", 0),
                    fault: RefCell::new(None),
                };
                let mut model = AtomicModel::boxed(name, Box::new(behavior))?.with_entity(entity.unwrap_or(name));
                for port in &ports.inputs {
                    model = model.with_input(port)?;
                }
                for port in &ports.outputs {
                    model = model.with_output(port)?;
                }
                Ok(model.into())
            }
            NodeKind::Coupled => {
                let mut model = CoupledModel::new(name)?;
                for port in &ports.inputs {
                    model.add_input(port)?;
                }
                for port in &ports.outputs {
                    model.add_output(port)?;
                }
                let children = call(&self.engine, &script.ast, None, "components", (args.clone(),))
                    .map_err(|e| Self::error(class, e))?
                    .try_cast::<Array>()
                    .ok_or_else(|| Self::error(class, "components(args) must return an array"))?;
                for child in children {
                    let child = child
                        .try_cast::<Map>()
                        .ok_or_else(|| Self::error(class, "each component is #{name, class, ..}"))?;
                    let field = |k: &str| child.get(k).and_then(|v| v.clone().into_string().ok());
                    let (Some(child_name), Some(child_class)) = (field("name"), field("class")) else {
                        return Err(Self::error(class, "each component needs string name and class"));
                    };
                    let child_args = child.get("args").cloned().unwrap_or_else(|| args.clone());
                    let entity = field("entity");
                    let built =
                        self.instantiate(&child_class, &child_name, entity.as_deref(), child_args, depth + 1)?;
                    model.add_component(built)?;
                }
                let wires = call(&self.engine, &script.ast, None, "couplings", ())
                    .map_err(|e| Self::error(class, e))?
                    .try_cast::<Array>()
                    .ok_or_else(|| Self::error(class, "couplings() must return an array"))?;
                for wire in wires {
                    let pair = Self::strings(class, "a coupling", Some(&wire))?;
                    let [src, dst] = pair.as_slice() else {
                        return Err(Self::error(class, "each coupling is [source, destination]"));
                    };
                    model.connect(src, dst)?;
                }
                Ok(model.into())
            }
        }
    }
}
