//! Alternating bit protocol over two lossy channels with deterministic noise.

use std::collections::VecDeque;

use serde_json::{json, Value};

use super::{payload, Args, Built, ConfigError, FlagSpec};
use crate::kernel::{
    Atomic, AtomicModel, Context, CoupledModel, Exogenous, Inputs, KernelError, Outputs, SimTime, Status,
};

pub const FLAGS: &[FlagSpec] = &[
    FlagSpec::int("total_packets", "10", "Number of packets the sender delivers"),
    FlagSpec::int("seed", "42", "Initial noise level of both channels"),
    FlagSpec::int("timeout", "20", "Sender retransmission timer (ms)"),
    FlagSpec::int("sender_delay", "10", "Sender preparation delay (ms)"),
    FlagSpec::int("receiver_delay", "10", "Receiver processing delay (ms)"),
    FlagSpec::int("channel_delay", "3", "Channel transmission delay (ms)"),
    FlagSpec::int("simulate_time", "1000", "Simulation horizon (ms)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AbpConfig {
    pub total_packets: u64,
    pub seed: i64,
    pub timeout: f64,
    pub sender_delay: f64,
    pub receiver_delay: f64,
    pub channel_delay: f64,
    pub simulate_time: f64,
}

impl Default for AbpConfig {
    fn default() -> Self {
        Self::from_args(&Args::parse::<&str>(FLAGS, &[]).expect("defaults parse")).expect("defaults are valid")
    }
}

impl AbpConfig {
    pub fn from_args(args: &Args) -> Result<Self, ConfigError> {
        let total = args.int("total_packets");
        if total < 0 {
            return Err(ConfigError::Invalid(format!("total_packets must be >= 0, got {total}")));
        }
        let cfg = Self {
            total_packets: total as u64,
            seed: args.int("seed"),
            timeout: args.int("timeout") as f64,
            sender_delay: args.int("sender_delay") as f64,
            receiver_delay: args.int("receiver_delay") as f64,
            channel_delay: args.int("channel_delay") as f64,
            simulate_time: args.int("simulate_time") as f64,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("timeout", self.timeout),
            ("sender_delay", self.sender_delay),
            ("receiver_delay", self.receiver_delay),
            ("channel_delay", self.channel_delay),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.simulate_time.is_finite() && self.simulate_time >= 0.0) {
            return Err(ConfigError::Invalid(format!(
                "simulate_time must be >= 0, got {}",
                self.simulate_time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Pass,
    Drop,
}

impl Fate {
    pub fn as_str(self) -> &'static str {
        match self {
            Fate::Pass => "pass",
            Fate::Drop => "drop",
        }
    }
}

/// `x <- (17 x + 11) mod 100`; the packet is dropped when the new value is below 10.
pub fn lcg_step(x: i64) -> (i64, Fate) {
    let next = (17 * x.rem_euclid(100) + 11).rem_euclid(100);
    let fate = if next < 10 { Fate::Drop } else { Fate::Pass };
    (next, fate)
}

/// Per-channel noise level, starting at the raw seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseState {
    pub x: i64,
}

impl NoiseState {
    pub fn new(seed: i64) -> Self {
        Self { x: seed }
    }

    pub fn advance(&mut self) -> (i64, Fate) {
        let (x, fate) = lcg_step(self.x);
        self.x = x;
        (x, fate)
    }
}

impl Iterator for NoiseState {
    type Item = (i64, Fate);

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.advance())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Packet {
    seq: i64,
    bit: i64,
}

impl Packet {
    fn to_value(self) -> Value {
        json!({"seq_num": self.seq, "bit": self.bit})
    }

    fn from_value(v: &Value, component: &str) -> Result<Self, KernelError> {
        let field = |k: &str| v.get(k).and_then(Value::as_i64);
        match (field("seq_num"), field("bit")) {
            (Some(seq), Some(bit)) => Ok(Self { seq, bit }),
            _ => Err(KernelError::Model {
                component: component.into(),
                message: format!("malformed packet {v}"),
            }),
        }
    }
}

fn ack_bit(v: &Value) -> Result<i64, KernelError> {
    v.get("bit").and_then(Value::as_i64).ok_or_else(|| KernelError::Model {
        component: "sender".into(),
        message: format!("malformed ack {v}"),
    })
}

const IDLE: &str = "idle";
const PREPARING: &str = "preparing";
const WAITING: &str = "waiting";
const DONE: &str = "done";

struct Sender {
    sender_delay: f64,
    timeout: f64,
    total: u64,
    seq: u64,
    bit: i64,
    sent: bool,
    retry: bool,
}

impl Sender {
    fn prepare(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.log(
            "delay_start",
            payload(json!({"type": "preparation", "duration": self.sender_delay})),
        );
        ctx.hold_in(PREPARING, self.sender_delay)
    }

    fn on_ack(&mut self, ctx: &mut Context<'_>, bit: i64) -> Result<(), KernelError> {
        let outstanding = matches!(ctx.phase(), PREPARING | WAITING) && self.sent;
        let valid = outstanding && bit == self.bit;
        ctx.log("ack_received", payload(json!({"ack_bit": bit, "is_valid": valid})));
        if !valid {
            return Ok(());
        }
        if self.seq >= self.total {
            ctx.passivate_in(DONE);
            return Ok(());
        }
        self.seq += 1;
        self.bit ^= 1;
        self.sent = false;
        self.retry = false;
        self.prepare(ctx)
    }
}

impl Atomic for Sender {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.passivate_in(IDLE);
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        match ctx.phase() {
            PREPARING => {
                ctx.log(
                    "packet_sent",
                    payload(json!({"seq_num": self.seq, "bit": self.bit, "is_retry": self.retry})),
                );
                self.sent = true;
                ctx.hold_in(WAITING, self.timeout)
            }
            WAITING => {
                self.retry = true;
                self.prepare(ctx)
            }
            _ => {
                ctx.passivate();
                Ok(())
            }
        }
    }

    fn delta_ext(&mut self, ctx: &mut Context<'_>, _: f64, inputs: &Inputs<'_>) -> Result<(), KernelError> {
        for start in inputs.get("in_start") {
            if ctx.phase() != IDLE {
                continue;
            }
            let total = start.as_u64().ok_or_else(|| KernelError::Model {
                component: "sender".into(),
                message: format!("bad packet count {start}"),
            })?;
            self.total = total;
            if total == 0 {
                ctx.passivate_in(DONE);
            } else {
                self.seq = 1;
                self.bit = 0;
                self.prepare(ctx)?;
            }
        }
        for ack in inputs.get("in_ack") {
            self.on_ack(ctx, ack_bit(ack)?)?;
        }
        Ok(())
    }

    fn output(&self, status: &Status<'_>, out: &mut Outputs<'_>) {
        if status.phase == PREPARING {
            out.send(
                "out_data",
                Packet {
                    seq: self.seq as i64,
                    bit: self.bit,
                }
                .to_value(),
            );
        }
    }
}

const PROCESSING: &str = "processing";

struct Receiver {
    delay: f64,
    current: Option<Packet>,
    buffer: Option<Packet>,
}

impl Receiver {
    fn start(&mut self, ctx: &mut Context<'_>, packet: Packet) -> Result<(), KernelError> {
        self.current = Some(packet);
        ctx.log(
            "delay_start",
            payload(json!({"type": "processing", "duration": self.delay})),
        );
        ctx.hold_in(PROCESSING, self.delay)
    }
}

impl Atomic for Receiver {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.passivate_in(IDLE);
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        if let Some(done) = self.current.take() {
            ctx.log(
                "packet_received",
                payload(json!({"seq_num": done.seq, "bit": done.bit})),
            );
        }
        match self.buffer.take() {
            Some(next) => self.start(ctx, next),
            None => {
                ctx.passivate_in(IDLE);
                Ok(())
            }
        }
    }

    fn delta_ext(&mut self, ctx: &mut Context<'_>, _: f64, inputs: &Inputs<'_>) -> Result<(), KernelError> {
        for v in inputs.get("in_data") {
            let packet = Packet::from_value(v, "receiver")?;
            if self.current.is_none() {
                self.start(ctx, packet)?;
            } else if self.buffer.is_none() {
                self.buffer = Some(packet);
            }
        }
        Ok(())
    }

    fn output(&self, status: &Status<'_>, out: &mut Outputs<'_>) {
        if status.phase == PROCESSING {
            if let Some(p) = self.current {
                out.send("out_ack", json!({"bit": p.bit}));
            }
        }
    }
}

struct Subnet {
    channel: &'static str,
    delay: f64,
    noise: NoiseState,
    in_flight: VecDeque<(SimTime, Value)>,
}

impl Subnet {
    fn reschedule(&self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        match self.in_flight.front() {
            Some((due, _)) => ctx.hold_until("transmitting", *due),
            None => {
                ctx.passivate_in(IDLE);
                Ok(())
            }
        }
    }
}

impl Atomic for Subnet {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.passivate_in(IDLE);
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        let now = ctx.now();
        while self.in_flight.front().is_some_and(|(due, _)| *due == now) {
            self.in_flight.pop_front();
        }
        self.reschedule(ctx)
    }

    fn delta_ext(&mut self, ctx: &mut Context<'_>, _: f64, inputs: &Inputs<'_>) -> Result<(), KernelError> {
        for v in inputs.get("in") {
            let (noise, fate) = self.noise.advance();
            ctx.log(
                "packet_get",
                payload(json!({"behavior": fate.as_str(), "channel": self.channel, "noise_value": noise})),
            );
            if fate == Fate::Pass {
                self.in_flight.push_back((ctx.now().after(self.delay), v.clone()));
            }
        }
        self.reschedule(ctx)
    }

    fn output(&self, status: &Status<'_>, out: &mut Outputs<'_>) {
        for (due, v) in &self.in_flight {
            if *due != status.now {
                break;
            }
            out.send("out", v.clone());
        }
    }
}

fn subnet(name: &str, channel: &'static str, cfg: &AbpConfig) -> Result<AtomicModel, KernelError> {
    AtomicModel::new(
        name,
        Subnet {
            channel,
            delay: cfg.channel_delay,
            noise: NoiseState::new(cfg.seed),
            in_flight: VecDeque::new(),
        },
    )?
    .with_entity("subnet")
    .with_input("in")?
    .with_output("out")
}

/// Sender, receiver and forward/backward subnets under a root `abp` model.
/// The packet count enters as an exogenous start signal at time zero.
pub fn build(cfg: &AbpConfig) -> Result<Built, ConfigError> {
    cfg.validate()?;
    let root = assemble(cfg).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(Built {
        root,
        exogenous: vec![Exogenous::new(0.0, "start", cfg.total_packets).expect("zero is a valid time")],
        horizon: cfg.simulate_time,
    })
}

fn assemble(cfg: &AbpConfig) -> Result<CoupledModel, KernelError> {
    let sender = AtomicModel::new(
        "sender",
        Sender {
            sender_delay: cfg.sender_delay,
            timeout: cfg.timeout,
            total: 0,
            seq: 0,
            bit: 0,
            sent: false,
            retry: false,
        },
    )?
    .with_input("in_start")?
    .with_input("in_ack")?
    .with_output("out_data")?;
    let receiver = AtomicModel::new(
        "receiver",
        Receiver {
            delay: cfg.receiver_delay,
            current: None,
            buffer: None,
        },
    )?
    .with_input("in_data")?
    .with_output("out_ack")?;

    let mut root = CoupledModel::new("abp")?;
    root.add_input("start")?;
    root.add_component(sender)?;
    root.add_component(receiver)?;
    root.add_component(subnet("subnet_fwd", "forward", cfg)?)?;
    root.add_component(subnet("subnet_bwd", "backward", cfg)?)?;
    root.connect("start", "sender.in_start")?;
    root.connect("sender.out_data", "subnet_fwd.in")?;
    root.connect("subnet_fwd.out", "receiver.in_data")?;
    root.connect("receiver.out_ack", "subnet_bwd.in")?;
    root.connect("subnet_bwd.out", "sender.in_ack")?;
    Ok(root)
}
