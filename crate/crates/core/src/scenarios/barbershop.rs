//! Barbershop: a bounded reception queue feeding inspection and cutting
//! stations that hand customers over with a done signal.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{payload, substream, Args, Built, ConfigError, FlagSpec};
use crate::kernel::{Atomic, AtomicModel, Context, CoupledModel, Exogenous, Inputs, KernelError, Outputs, Status};

/// Reception queue capacity.
pub const CAPACITY: usize = 8;

pub const FLAGS: &[FlagSpec] = &[
    FlagSpec::string("arrivals", "random", "Arrival source: random or stdin"),
    FlagSpec::int("customers", "20", "Number of random arrivals"),
    FlagSpec::float("arrival_mean", "10", "Mean exponential inter-arrival time"),
    FlagSpec::float("inspection_time", "3", "Inspection service time"),
    FlagSpec::float("cutting_time", "15", "Cutting service time"),
    FlagSpec::int("seed", "42", "Random seed"),
    FlagSpec::float("horizon", "1000", "Simulation horizon"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalSource {
    Random {
        customers: u64,
        mean: f64,
    },
    /// Explicit `(time, count)` batches, sorted by time.
    Schedule(Vec<(f64, u64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarbershopConfig {
    pub arrivals: ArrivalSource,
    pub inspection_time: f64,
    pub cutting_time: f64,
    pub seed: i64,
    pub horizon: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Batch {
    time: f64,
    count: u64,
}

/// Parses a stdin arrival schedule: one `{"time": t, "count": n}` object per line.
pub fn parse_schedule(text: &str) -> Result<Vec<(f64, u64)>, ConfigError> {
    let mut batches = Vec::new();
    let mut last = 0.0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let batch: Batch =
            serde_json::from_str(line).map_err(|e| ConfigError::Input(format!("line {}: {e}", i + 1)))?;
        if !(batch.time.is_finite() && batch.time >= last) {
            return Err(ConfigError::Input(format!(
                "line {}: times must be finite and non-decreasing",
                i + 1
            )));
        }
        last = batch.time;
        batches.push((batch.time, batch.count));
    }
    Ok(batches)
}

impl BarbershopConfig {
    pub fn from_args(args: &Args, stdin: Option<&str>) -> Result<Self, ConfigError> {
        let arrivals = match args.str("arrivals") {
            "random" => {
                let customers = args.int("customers");
                if customers < 0 {
                    return Err(ConfigError::Invalid("customers must be >= 0".into()));
                }
                ArrivalSource::Random {
                    customers: customers as u64,
                    mean: args.float("arrival_mean"),
                }
            }
            "stdin" => ArrivalSource::Schedule(parse_schedule(stdin.unwrap_or(""))?),
            other => {
                return Err(ConfigError::Invalid(format!(
                    "arrivals must be random or stdin, got {other:?}"
                )))
            }
        };
        let cfg = Self {
            arrivals,
            inspection_time: args.float("inspection_time"),
            cutting_time: args.float("cutting_time"),
            seed: args.int("seed"),
            horizon: args.float("horizon"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("inspection_time", self.inspection_time)?;
        positive("cutting_time", self.cutting_time)?;
        if let ArrivalSource::Random { mean, .. } = self.arrivals {
            positive("arrival_mean", mean)?;
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(ConfigError::Invalid(format!(
                "horizon must be >= 0, got {}",
                self.horizon
            )));
        }
        Ok(())
    }
}

fn customer_id(v: &Value, component: &str) -> Result<i64, KernelError> {
    v.as_i64().ok_or_else(|| KernelError::Model {
        component: component.into(),
        message: format!("malformed customer {v}"),
    })
}

struct Source {
    rng: ChaCha8Rng,
    gap: Exp<f64>,
    remaining: u64,
    next_id: i64,
}

impl Source {
    fn wait(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        if self.remaining == 0 {
            ctx.passivate_in("exhausted");
            return Ok(());
        }
        let gap = self.gap.sample(&mut self.rng);
        ctx.hold_in("waiting", gap)
    }
}

impl Atomic for Source {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        self.wait(ctx)
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        self.next_id += 1;
        self.remaining -= 1;
        self.wait(ctx)
    }

    fn delta_ext(&mut self, _: &mut Context<'_>, _: f64, _: &Inputs<'_>) -> Result<(), KernelError> {
        Ok(())
    }

    fn output(&self, _: &Status<'_>, out: &mut Outputs<'_>) {
        out.send("out", self.next_id);
    }
}

struct Reception {
    queue: VecDeque<i64>,
    station_free: bool,
    outgoing: Option<i64>,
}

impl Reception {
    fn dispatch(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        if self.outgoing.is_some() {
            return Ok(());
        }
        if self.station_free {
            if let Some(customer) = self.queue.pop_front() {
                self.station_free = false;
                self.outgoing = Some(customer);
                ctx.log(
                    "dispatch",
                    payload(json!({"customer": customer, "queue_len": self.queue.len()})),
                );
                return ctx.hold_in("dispatching", 0.0);
            }
        }
        ctx.passivate_in("idle");
        Ok(())
    }
}

impl Atomic for Reception {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.passivate_in("idle");
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        self.outgoing = None;
        self.dispatch(ctx)
    }

    fn delta_ext(&mut self, ctx: &mut Context<'_>, _: f64, inputs: &Inputs<'_>) -> Result<(), KernelError> {
        for v in inputs.get("arrive") {
            let customer = customer_id(v, "reception")?;
            ctx.log("arrival", payload(json!({"customer": customer})));
            if self.queue.len() < CAPACITY {
                self.queue.push_back(customer);
                ctx.log(
                    "admitted",
                    payload(json!({"customer": customer, "queue_len": self.queue.len()})),
                );
            } else {
                ctx.log(
                    "rejection",
                    payload(json!({"customer": customer, "queue_len": self.queue.len()})),
                );
            }
        }
        if !inputs.get("ready").is_empty() {
            self.station_free = true;
        }
        self.dispatch(ctx)
    }

    fn output(&self, status: &Status<'_>, out: &mut Outputs<'_>) {
        if status.phase == "dispatching" {
            if let Some(customer) = self.outgoing {
                out.send("out", customer);
            }
        }
    }
}

struct Inspection {
    service: f64,
    current: Option<i64>,
}

impl Atomic for Inspection {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.passivate_in("idle");
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        let customer = self.current.unwrap_or_default();
        match ctx.phase() {
            "inspecting" => {
                ctx.log("service_end", payload(json!({"customer": customer})));
                ctx.hold_in("handoff", 0.0)
            }
            "handoff" => {
                ctx.passivate_in("awaiting_done");
                Ok(())
            }
            "releasing" => {
                ctx.log("release", payload(json!({"customer": customer})));
                self.current = None;
                ctx.passivate_in("idle");
                Ok(())
            }
            _ => {
                ctx.passivate();
                Ok(())
            }
        }
    }

    fn delta_ext(&mut self, ctx: &mut Context<'_>, _: f64, inputs: &Inputs<'_>) -> Result<(), KernelError> {
        for v in inputs.get("done") {
            let customer = customer_id(v, "inspection")?;
            if ctx.phase() == "awaiting_done" && self.current == Some(customer) {
                ctx.log("handshake", payload(json!({"customer": customer})));
                ctx.hold_in("releasing", 0.0)?;
            }
        }
        for v in inputs.get("in") {
            let customer = customer_id(v, "inspection")?;
            if self.current.is_some() {
                return Err(KernelError::Model {
                    component: "inspection".into(),
                    message: format!("customer {customer} dispatched while station busy"),
                });
            }
            self.current = Some(customer);
            ctx.log("service_start", payload(json!({"customer": customer})));
            ctx.hold_in("inspecting", self.service)?;
        }
        Ok(())
    }

    fn output(&self, status: &Status<'_>, out: &mut Outputs<'_>) {
        match (status.phase, self.current) {
            ("handoff", Some(c)) => out.send("to_cutting", c),
            ("releasing", Some(_)) => out.send("ready", true),
            _ => {}
        }
    }
}

struct Cutting {
    service: f64,
    current: Option<i64>,
}

impl Atomic for Cutting {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.passivate_in("idle");
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        if let Some(customer) = self.current.take() {
            ctx.log("service_end", payload(json!({"customer": customer})));
        }
        ctx.passivate_in("idle");
        Ok(())
    }

    fn delta_ext(&mut self, ctx: &mut Context<'_>, _: f64, inputs: &Inputs<'_>) -> Result<(), KernelError> {
        for v in inputs.get("in") {
            let customer = customer_id(v, "cutting")?;
            self.current = Some(customer);
            ctx.log("service_start", payload(json!({"customer": customer})));
            ctx.hold_in("cutting", self.service)?;
        }
        Ok(())
    }

    fn output(&self, status: &Status<'_>, out: &mut Outputs<'_>) {
        if let ("cutting", Some(c)) = (status.phase, self.current) {
            out.send("done", c);
        }
    }
}

pub fn build(cfg: &BarbershopConfig) -> Result<Built, ConfigError> {
    cfg.validate()?;
    let (root, exogenous) = assemble(cfg).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(Built {
        root,
        exogenous,
        horizon: cfg.horizon,
    })
}

fn assemble(cfg: &BarbershopConfig) -> Result<(CoupledModel, Vec<Exogenous>), KernelError> {
    let mut root = CoupledModel::new("shop")?;
    root.add_input("arrive")?;
    root.add_component(
        AtomicModel::new(
            "reception",
            Reception {
                queue: VecDeque::new(),
                station_free: true,
                outgoing: None,
            },
        )?
        .with_input("arrive")?
        .with_input("ready")?
        .with_output("out")?,
    )?;
    root.add_component(
        AtomicModel::new(
            "inspection",
            Inspection {
                service: cfg.inspection_time,
                current: None,
            },
        )?
        .with_input("in")?
        .with_input("done")?
        .with_output("to_cutting")?
        .with_output("ready")?,
    )?;
    root.add_component(
        AtomicModel::new(
            "cutting",
            Cutting {
                service: cfg.cutting_time,
                current: None,
            },
        )?
        .with_input("in")?
        .with_output("done")?,
    )?;
    root.connect("arrive", "reception.arrive")?;
    root.connect("reception.out", "inspection.in")?;
    root.connect("inspection.to_cutting", "cutting.in")?;
    root.connect("cutting.done", "inspection.done")?;
    root.connect("inspection.ready", "reception.ready")?;

    let mut exogenous = Vec::new();
    match &cfg.arrivals {
        ArrivalSource::Random { customers, mean } => {
            let gap = Exp::new(1.0 / mean).map_err(|e| KernelError::Model {
                component: "source".into(),
                message: e.to_string(),
            })?;
            root.add_component(
                AtomicModel::new(
                    "source",
                    Source {
                        rng: substream(cfg.seed, "shop.source"),
                        gap,
                        remaining: *customers,
                        next_id: 1,
                    },
                )?
                .with_output("out")?,
            )?;
            root.connect("source.out", "reception.arrive")?;
        }
        ArrivalSource::Schedule(batches) => {
            let mut id = 1i64;
            for &(time, count) in batches {
                for _ in 0..count {
                    exogenous.push(Exogenous::new(time, "arrive", id)?);
                    id += 1;
                }
            }
        }
    }
    Ok((root, exogenous))
}

/// Draws a random arrival schedule for tests and suites.
pub fn random_schedule(rng: &mut impl Rng, batches: usize, max_batch: u64, max_gap: f64) -> String {
    let mut t = 0.0;
    let mut out = String::new();
    for _ in 0..batches {
        t += (rng.gen_range(0.0..max_gap) * 4.0).round() / 4.0;
        let count = rng.gen_range(1..=max_batch);
        out.push_str(&format!("{{\"time\": {t:?}, \"count\": {count}}}\n"));
    }
    out
}
