use std::collections::HashMap;

use super::{event_schema, horizon, indexed, monotonic, same_time, Field, Schema};
use crate::conformance::{Catalog, Level, Rule, Violation};
use crate::scenarios::abp::NoiseState;
use crate::scenarios::Args;
use crate::trace::TraceRecord;

const BIT: Field = Field::Range(0, 1);

const SCHEMA: Schema = &[
    (
        "sender",
        "delay_start",
        &[("type", Field::OneOf(&["preparation"])), ("duration", Field::Number)],
    ),
    (
        "sender",
        "packet_sent",
        &[("seq_num", Field::Int), ("bit", BIT), ("is_retry", Field::Bool)],
    ),
    ("sender", "ack_received", &[("ack_bit", BIT), ("is_valid", Field::Bool)]),
    (
        "receiver",
        "delay_start",
        &[("type", Field::OneOf(&["processing"])), ("duration", Field::Number)],
    ),
    ("receiver", "packet_received", &[("seq_num", Field::Int), ("bit", BIT)]),
    (
        "subnet",
        "packet_get",
        &[
            ("behavior", Field::OneOf(&["pass", "drop"])),
            ("channel", Field::OneOf(&["forward", "backward"])),
            ("noise_value", Field::Range(0, 99)),
        ],
    ),
];

#[derive(Debug, Clone, Copy)]
struct Params {
    total: i64,
    seed: i64,
    timeout: f64,
    sender_delay: f64,
    receiver_delay: f64,
    channel_delay: f64,
    horizon: f64,
}

pub(super) fn catalog(args: &Args) -> Catalog {
    let p = Params {
        total: args.int("total_packets"),
        seed: args.int("seed"),
        timeout: args.int("timeout") as f64,
        sender_delay: args.int("sender_delay") as f64,
        receiver_delay: args.int("receiver_delay") as f64,
        channel_delay: args.int("channel_delay") as f64,
        horizon: args.int("simulate_time") as f64,
    };
    Catalog {
        component: vec![
            event_schema("abp.event-schema", SCHEMA),
            Rule::new(
                "abp.preparation-delay",
                Level::Component,
                "Each packet is sent exactly sender_delay after its preparation starts",
                move |r| preparation_delay(r, &p),
            ),
            Rule::new(
                "abp.processing-delay",
                Level::Component,
                "Each packet is received exactly receiver_delay after processing starts",
                move |r| processing_delay(r, &p),
            ),
            Rule::new(
                "abp.retransmission-timer",
                Level::Component,
                "An unacknowledged packet is re-prepared exactly timeout after it was sent",
                move |r| retransmission_timer(r, &p),
            ),
            Rule::new(
                "abp.retry-flag",
                Level::Component,
                "is_retry marks exactly the repeated sends of the same packet",
                retry_flag,
            ),
            Rule::new(
                "abp.ack-validity",
                Level::Component,
                "An ACK is valid iff it matches the bit of the outstanding packet",
                ack_validity,
            ),
        ],
        system: vec![
            Rule::new(
                "abp.startup",
                Level::System,
                "The sender starts preparing at time zero and sends after sender_delay",
                move |r| startup(r, &p),
            ),
            Rule::new(
                "abp.cause-before-effect",
                Level::System,
                "Receptions follow sends, ACKs follow receptions, processing follows delivery",
                cause_before_effect,
            ),
            Rule::new(
                "abp.channel-latency",
                Level::System,
                "Channels decide fate on entry and deliver passed packets after exactly channel_delay",
                move |r| channel_latency(r, &p),
            ),
            Rule::new(
                "abp.noise-orbit",
                Level::System,
                "Per-channel noise values follow the LCG orbit from the seed",
                move |r| noise_orbit(r, &p),
            ),
            Rule::new(
                "abp.stop-and-wait",
                Level::System,
                "A new packet is sent only after the previous one is validly acknowledged",
                move |r| stop_and_wait(r, &p),
            ),
            Rule::new(
                "abp.alternating-bit",
                Level::System,
                "Fresh packets carry sequence numbers 1, 2, ... and alternating bits from 0",
                alternating_bit,
            ),
            horizon("abp.horizon", p.horizon),
            monotonic("abp.monotonic-time"),
        ],
    }
}

fn is_sender(r: &TraceRecord) -> bool {
    r.entity == "sender"
}

fn preparation_delay(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    let mut preparing: Option<f64> = None;
    for (i, r) in records.iter().enumerate().filter(|(_, r)| is_sender(r)) {
        match r.event.as_str() {
            "delay_start" => {
                if r.get_f64("duration") != Some(p.sender_delay) {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("preparation duration {:?} != {}", r.get_f64("duration"), p.sender_delay),
                    ));
                }
                preparing = Some(r.time);
            }
            "packet_sent" => match preparing.take() {
                Some(start) if same_time(start + p.sender_delay, r.time) => {}
                Some(start) => {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("sent at {} but preparation began at {start}", r.time),
                    ))
                }
                None => return Err(Violation::at(records, i, "packet sent without preparation")),
            },
            _ => {}
        }
    }
    Ok(())
}

fn processing_delay(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    let mut busy: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate().filter(|(_, r)| r.entity == "receiver") {
        match r.event.as_str() {
            "delay_start" => {
                if r.get_f64("duration") != Some(p.receiver_delay) {
                    return Err(Violation::at(
                        records,
                        i,
                        format!(
                            "processing duration {:?} != {}",
                            r.get_f64("duration"),
                            p.receiver_delay
                        ),
                    ));
                }
                if busy.is_some() {
                    return Err(Violation::at(records, i, "processing started while busy"));
                }
                busy = Some((i, r.time));
            }
            "packet_received" => match busy.take() {
                Some((_, start)) if same_time(start + p.receiver_delay, r.time) => {}
                Some((j, start)) => {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("received at {} but processing began at {start} (record {j})", r.time),
                    ))
                }
                None => return Err(Violation::at(records, i, "packet received without processing")),
            },
            _ => {}
        }
    }
    match busy {
        Some((i, start)) if start + p.receiver_delay <= p.horizon => Err(Violation::at(
            records,
            i,
            "processing never completed before the horizon",
        )),
        _ => Ok(()),
    }
}

fn retransmission_timer(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    // Send time of the packet whose timer is running.
    let mut timer: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate().filter(|(_, r)| is_sender(r)) {
        if let Some((sent_at, t0)) = timer {
            let due = t0 + p.timeout;
            if r.time > due && !same_time(r.time, due) {
                return Err(Violation::at(
                    records,
                    sent_at,
                    format!("timer due at {due} never fired"),
                ));
            }
        }
        match r.event.as_str() {
            "packet_sent" => timer = Some((i, r.time)),
            "ack_received" if r.get_bool("is_valid") == Some(true) => {
                if let Some((sent_at, t0)) = timer.take() {
                    if same_time(r.time, t0 + p.timeout) {
                        return Err(Violation::at(
                            records,
                            sent_at,
                            "timer expiring with the ACK must retransmit first",
                        ));
                    }
                }
            }
            "delay_start" => {
                if let Some((_, t0)) = timer.take() {
                    if !same_time(r.time, t0 + p.timeout) {
                        return Err(Violation::at(
                            records,
                            i,
                            format!("retransmission prepared at {} instead of {}", r.time, t0 + p.timeout),
                        ));
                    }
                }
            }
            _ => {}
        }
    }
    match timer {
        Some((i, t0)) if t0 + p.timeout <= p.horizon => Err(Violation::at(
            records,
            i,
            format!("timer due at {} never fired", t0 + p.timeout),
        )),
        _ => Ok(()),
    }
}

fn retry_flag(records: &[TraceRecord]) -> Result<(), Violation> {
    let mut previous: Option<(i64, i64)> = None;
    for (i, r) in indexed(records, "sender", "packet_sent") {
        let seq = r.get_i64("seq_num").unwrap_or_default();
        let bit = r.get_i64("bit").unwrap_or_default();
        let retry = r.get_bool("is_retry").unwrap_or_default();
        let repeat = previous.is_some_and(|(s, _)| s == seq);
        if retry != repeat {
            return Err(Violation::at(
                records,
                i,
                format!(
                    "is_retry={retry} but packet {seq} {} its predecessor",
                    if repeat { "repeats" } else { "differs from" }
                ),
            ));
        }
        if retry && previous.is_some_and(|(_, b)| b != bit) {
            return Err(Violation::at(records, i, "retransmission changed the bit"));
        }
        previous = Some((seq, bit));
    }
    Ok(())
}

fn ack_validity(records: &[TraceRecord]) -> Result<(), Violation> {
    let mut outstanding: Option<i64> = None;
    for (i, r) in records.iter().enumerate().filter(|(_, r)| is_sender(r)) {
        match r.event.as_str() {
            "packet_sent" => outstanding = r.get_i64("bit"),
            "ack_received" => {
                let bit = r.get_i64("ack_bit");
                let expected = outstanding.is_some() && outstanding == bit;
                if r.get_bool("is_valid") != Some(expected) {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("ACK bit {bit:?} should have is_valid={expected}"),
                    ));
                }
                if expected {
                    outstanding = None;
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn startup(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    let sends: Vec<usize> = indexed(records, "sender", "packet_sent").map(|(i, _)| i).collect();
    if p.total <= 0 {
        return match sends.first() {
            Some(&i) => Err(Violation::at(records, i, "packet sent although total_packets is 0")),
            None => Ok(()),
        };
    }
    if !indexed(records, "sender", "delay_start").any(|(_, r)| r.time == 0.0) {
        return Err(Violation::global("sender never started preparing at time 0").with_entity("sender"));
    }
    if p.sender_delay <= p.horizon {
        let first = sends.first().map(|&i| records[i].time);
        if !first.is_some_and(|t| same_time(t, p.sender_delay)) {
            return Err(Violation::global(format!(
                "first packet should be sent at {}, got {first:?}",
                p.sender_delay
            ))
            .with_entity("sender"));
        }
    }
    Ok(())
}

fn cause_before_effect(records: &[TraceRecord]) -> Result<(), Violation> {
    let mut sent: HashMap<(i64, i64), f64> = HashMap::new();
    let mut received_bits: HashMap<i64, f64> = HashMap::new();
    let mut forward_pass: Option<f64> = None;
    for (i, r) in records.iter().enumerate() {
        match (r.entity.as_str(), r.event.as_str()) {
            ("sender", "packet_sent") => {
                let key = (
                    r.get_i64("seq_num").unwrap_or_default(),
                    r.get_i64("bit").unwrap_or_default(),
                );
                sent.entry(key).or_insert(r.time);
            }
            ("subnet", "packet_get")
                if r.get_str("channel") == Some("forward") && r.get_str("behavior") == Some("pass") =>
            {
                forward_pass.get_or_insert(r.time);
            }
            ("receiver", "delay_start") => {
                if !forward_pass.is_some_and(|t| t < r.time) {
                    return Err(Violation::at(
                        records,
                        i,
                        "processing started before any packet was delivered",
                    ));
                }
            }
            ("receiver", "packet_received") => {
                let key = (
                    r.get_i64("seq_num").unwrap_or_default(),
                    r.get_i64("bit").unwrap_or_default(),
                );
                if !sent.get(&key).is_some_and(|&t| t < r.time) {
                    return Err(
                        Violation::at(records, i, format!("packet {key:?} received before it was sent"))
                            .with_entity("sender"),
                    );
                }
                received_bits.entry(key.1).or_insert(r.time);
            }
            ("sender", "ack_received") => {
                let bit = r.get_i64("ack_bit").unwrap_or_default();
                if !received_bits.get(&bit).is_some_and(|&t| t < r.time) {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("ACK {bit} arrived before the receiver acknowledged that bit"),
                    )
                    .with_entity("receiver"));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn channel(records: &[TraceRecord], name: &str) -> Vec<(usize, f64, bool)> {
    indexed(records, "subnet", "packet_get")
        .filter(|(_, r)| r.get_str("channel") == Some(name))
        .map(|(i, r)| (i, r.time, r.get_str("behavior") == Some("pass")))
        .collect()
}

/// Pairs two timestamp sequences that must coincide one-to-one.
fn paired(
    records: &[TraceRecord],
    causes: &[(usize, f64)],
    effects: &[(usize, f64)],
    what: &str,
) -> Result<(), Violation> {
    for (k, (cause, effect)) in causes.iter().zip(effects).enumerate() {
        if !same_time(cause.1, effect.1) {
            return Err(Violation::at(
                records,
                effect.0,
                format!(
                    "{what} #{k}: expected at {} after record {}, found at {}",
                    cause.1, cause.0, effect.1
                ),
            ));
        }
    }
    if causes.len() != effects.len() {
        let at = if causes.len() > effects.len() {
            causes[effects.len()].0
        } else {
            effects[causes.len()].0
        };
        return Err(Violation::at(
            records,
            at,
            format!("{what}: {} expected, {} found", causes.len(), effects.len()),
        ));
    }
    Ok(())
}

fn channel_latency(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    let times = |entity: &str, event: &str| -> Vec<(usize, f64)> {
        indexed(records, entity, event).map(|(i, r)| (i, r.time)).collect()
    };
    let forward = channel(records, "forward");
    let backward = channel(records, "backward");
    let at_entry = |c: &[(usize, f64, bool)]| -> Vec<(usize, f64)> { c.iter().map(|&(i, t, _)| (i, t)).collect() };
    paired(
        records,
        &times("sender", "packet_sent"),
        &at_entry(&forward),
        "forward channel entry",
    )?;
    paired(
        records,
        &times("receiver", "packet_received"),
        &at_entry(&backward),
        "backward channel entry",
    )?;

    let arrivals = |c: &[(usize, f64, bool)]| -> Vec<(usize, f64)> {
        c.iter()
            .filter(|(_, t, pass)| *pass && t + p.channel_delay <= p.horizon)
            .map(|&(i, t, _)| (i, t + p.channel_delay))
            .collect()
    };
    paired(
        records,
        &arrivals(&backward),
        &times("sender", "ack_received"),
        "backward delivery",
    )?;

    // Every processing start follows a delivery or a buffered packet, and
    // every delivery starts processing or meets a busy receiver.
    let starts = times("receiver", "delay_start");
    let completions = times("receiver", "packet_received");
    let forward_arrivals = arrivals(&forward);
    for &(i, s) in &starts {
        let delivered = forward_arrivals.iter().any(|&(_, a)| same_time(a, s));
        let from_buffer = completions.iter().any(|&(_, c)| same_time(c, s));
        if !delivered && !from_buffer {
            return Err(Violation::at(
                records,
                i,
                format!("processing at {s} matches no delivery channel_delay after a pass"),
            ));
        }
    }
    for (i, a) in forward_arrivals.iter().copied() {
        let starts_now = starts.iter().any(|&(_, s)| same_time(s, a));
        let busy = starts.iter().any(|&(_, s)| s <= a && a <= s + p.receiver_delay);
        if !starts_now && !busy {
            return Err(
                Violation::at(records, i, format!("packet due at receiver at {a} was never delivered"))
                    .with_entity("receiver"),
            );
        }
    }
    Ok(())
}

fn noise_orbit(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    for name in ["forward", "backward"] {
        let mut noise = NoiseState::new(p.seed);
        for (i, r) in indexed(records, "subnet", "packet_get").filter(|(_, r)| r.get_str("channel") == Some(name)) {
            let (x, fate) = noise.advance();
            if r.get_i64("noise_value") != Some(x) {
                return Err(Violation::at(
                    records,
                    i,
                    format!("{name} noise {:?}, expected {x}", r.get_i64("noise_value")),
                ));
            }
            let behavior = r.get_str("behavior");
            if behavior != Some(fate.as_str()) {
                return Err(Violation::at(
                    records,
                    i,
                    format!("noise {x} means {}, got {behavior:?}", fate.as_str()),
                ));
            }
        }
    }
    Ok(())
}

fn stop_and_wait(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    let mut valid_acks = 0i64;
    for (i, r) in records.iter().enumerate().filter(|(_, r)| is_sender(r)) {
        match r.event.as_str() {
            "ack_received" if r.get_bool("is_valid") == Some(true) => valid_acks += 1,
            "packet_sent" => {
                let seq = r.get_i64("seq_num").unwrap_or_default();
                if valid_acks >= p.total {
                    return Err(Violation::at(
                        records,
                        i,
                        "packet sent after every packet was acknowledged",
                    ));
                }
                if seq > p.total {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("sequence {seq} exceeds total_packets"),
                    ));
                }
                if r.get_bool("is_retry") == Some(false) && seq - 1 != valid_acks {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("packet {seq} sent after {valid_acks} valid ACKs"),
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn alternating_bit(records: &[TraceRecord]) -> Result<(), Violation> {
    let mut expected_seq = 1;
    for (i, r) in indexed(records, "sender", "packet_sent") {
        if r.get_bool("is_retry") != Some(false) {
            continue;
        }
        let seq = r.get_i64("seq_num").unwrap_or_default();
        let bit = r.get_i64("bit").unwrap_or_default();
        if seq != expected_seq || bit != (seq - 1) % 2 {
            return Err(Violation::at(
                records,
                i,
                format!(
                    "fresh packet ({seq}, {bit}), expected ({expected_seq}, {})",
                    (expected_seq - 1) % 2
                ),
            ));
        }
        expected_seq += 1;
    }
    let mut expected_bit = 0;
    for (i, r) in indexed(records, "sender", "ack_received") {
        if r.get_bool("is_valid") != Some(true) {
            continue;
        }
        if r.get_i64("ack_bit") != Some(expected_bit) {
            return Err(Violation::at(
                records,
                i,
                format!("valid ACK should carry bit {expected_bit}"),
            ));
        }
        expected_bit ^= 1;
    }
    Ok(())
}
