use std::collections::HashMap;

use super::{event_schema, horizon, indexed, monotonic, same_time, Field, Schema};
use crate::conformance::{Catalog, Level, Rule, Violation};
use crate::scenarios::barbershop::CAPACITY;
use crate::scenarios::Args;
use crate::trace::TraceRecord;

const CUSTOMER: &[(&str, Field)] = &[("customer", Field::Int)];
const CAP: i64 = CAPACITY as i64;

const SCHEMA: Schema = &[
    ("reception", "arrival", CUSTOMER),
    (
        "reception",
        "admitted",
        &[("customer", Field::Int), ("queue_len", Field::Range(1, CAP))],
    ),
    (
        "reception",
        "rejection",
        &[("customer", Field::Int), ("queue_len", Field::Range(0, CAP))],
    ),
    (
        "reception",
        "dispatch",
        &[("customer", Field::Int), ("queue_len", Field::Range(0, CAP - 1))],
    ),
    ("inspection", "service_start", CUSTOMER),
    ("inspection", "service_end", CUSTOMER),
    ("inspection", "handshake", CUSTOMER),
    ("inspection", "release", CUSTOMER),
    ("cutting", "service_start", CUSTOMER),
    ("cutting", "service_end", CUSTOMER),
];

/// Per-customer lifecycle after dispatch, in the order it must occur.
const LIFECYCLE: [(&str, &str); 6] = [
    ("inspection", "service_start"),
    ("inspection", "service_end"),
    ("cutting", "service_start"),
    ("cutting", "service_end"),
    ("inspection", "handshake"),
    ("inspection", "release"),
];

#[derive(Debug, Clone, Copy)]
struct Params {
    inspection: f64,
    cutting: f64,
    horizon: f64,
}

pub(super) fn catalog(args: &Args) -> Catalog {
    let p = Params {
        inspection: args.float("inspection_time"),
        cutting: args.float("cutting_time"),
        horizon: args.float("horizon"),
    };
    Catalog {
        component: vec![
            event_schema("barbershop.event-schema", SCHEMA),
            Rule::new(
                "barbershop.reception-accounting",
                Level::Component,
                "Every arrival is admitted or rejected at once; rejection only when the queue is full",
                reception_accounting,
            ),
            Rule::new(
                "barbershop.service-times",
                Level::Component,
                "Inspection and cutting take exactly their configured service times",
                move |r| service_times(r, &p),
            ),
        ],
        system: vec![
            Rule::new(
                "barbershop.capacity",
                Level::System,
                "At most eight customers wait at any time",
                capacity,
            ),
            Rule::new(
                "barbershop.handshake",
                Level::System,
                "Inspection is released only after cutting reports done, one customer at a time",
                handshake,
            ),
            Rule::new(
                "barbershop.fifo",
                Level::System,
                "Customers are served in admission order, immediately on dispatch",
                fifo,
            ),
            horizon("barbershop.horizon", p.horizon),
            monotonic("barbershop.monotonic-time"),
        ],
    }
}

fn customer(r: &TraceRecord) -> i64 {
    r.get_i64("customer").unwrap_or(-1)
}

fn reception_accounting(records: &[TraceRecord]) -> Result<(), Violation> {
    let reception: Vec<(usize, &TraceRecord)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.entity == "reception")
        .collect();
    let mut queue = 0i64;
    for (k, &(i, r)) in reception.iter().enumerate() {
        let reported = r.get_i64("queue_len");
        match r.event.as_str() {
            "arrival" => {
                let decided = reception.get(k + 1).is_some_and(|(_, next)| {
                    (next.event == "admitted" || next.event == "rejection")
                        && customer(next) == customer(r)
                        && same_time(next.time, r.time)
                });
                if !decided {
                    return Err(Violation::at(
                        records,
                        i,
                        "arrival without an immediate admission decision",
                    ));
                }
            }
            "admitted" => {
                if queue >= CAP {
                    return Err(Violation::at(records, i, "admitted into a full queue"));
                }
                queue += 1;
                if reported != Some(queue) {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("queue_len {reported:?}, expected {queue}"),
                    ));
                }
            }
            "rejection" => {
                if queue < CAP || reported != Some(queue) {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("rejected with {queue} waiting (reported {reported:?})"),
                    ));
                }
            }
            "dispatch" => {
                queue -= 1;
                if reported != Some(queue) {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("queue_len {reported:?}, expected {queue}"),
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn service_times(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    for (entity, duration) in [("inspection", p.inspection), ("cutting", p.cutting)] {
        let mut busy: Option<(usize, f64)> = None;
        for (i, r) in records.iter().enumerate().filter(|(_, r)| r.entity == entity) {
            match r.event.as_str() {
                "service_start" => busy = Some((i, r.time)),
                "service_end" => match busy.take() {
                    Some((_, start)) if same_time(start + duration, r.time) => {}
                    _ => {
                        return Err(Violation::at(
                            records,
                            i,
                            format!("{entity} ended at {} without a start {duration} earlier", r.time),
                        ))
                    }
                },
                _ => {}
            }
        }
        if let Some((i, start)) = busy {
            if start + duration <= p.horizon {
                return Err(Violation::at(records, i, format!("{entity} service never ended")));
            }
        }
    }
    Ok(())
}

fn capacity(records: &[TraceRecord]) -> Result<(), Violation> {
    let mut waiting = 0i64;
    for (i, r) in records.iter().enumerate().filter(|(_, r)| r.entity == "reception") {
        match r.event.as_str() {
            "admitted" => waiting += 1,
            "dispatch" => waiting -= 1,
            _ => continue,
        }
        if !(0..=CAP).contains(&waiting) {
            return Err(Violation::at(records, i, format!("{waiting} customers waiting")));
        }
    }
    Ok(())
}

fn handshake(records: &[TraceRecord]) -> Result<(), Violation> {
    let mut progress: HashMap<i64, usize> = HashMap::new();
    let mut in_station: Option<i64> = None;
    for (i, r) in records.iter().enumerate() {
        let Some(stage) = LIFECYCLE.iter().position(|&(e, ev)| r.is(e, ev)) else {
            continue;
        };
        let c = customer(r);
        let done = progress.entry(c).or_default();
        if *done != stage {
            let expected = LIFECYCLE
                .get(*done)
                .map_or("nothing".to_string(), |(e, ev)| format!("{e}.{ev}"));
            return Err(Violation::at(
                records,
                i,
                format!(
                    "customer {c}: {}.{} out of order, expected {expected}",
                    r.entity, r.event
                ),
            ));
        }
        *done += 1;
        match stage {
            0 => {
                if let Some(other) = in_station {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("customer {c} entered before customer {other} was released"),
                    ));
                }
                in_station = Some(c);
            }
            5 => in_station = None,
            _ => {}
        }
    }
    Ok(())
}

fn fifo(records: &[TraceRecord]) -> Result<(), Violation> {
    let admitted: Vec<i64> = indexed(records, "reception", "admitted")
        .map(|(_, r)| customer(r))
        .collect();
    let dispatched: Vec<(usize, &TraceRecord)> = indexed(records, "reception", "dispatch").collect();
    for (k, (i, r)) in dispatched.iter().enumerate() {
        if admitted.get(k) != Some(&customer(r)) {
            return Err(Violation::at(
                records,
                *i,
                format!("dispatched customer {} out of admission order", customer(r)),
            ));
        }
    }
    let starts: Vec<(usize, &TraceRecord)> = indexed(records, "inspection", "service_start").collect();
    for (k, (i, r)) in starts.iter().enumerate() {
        match dispatched.get(k) {
            Some((_, d)) if customer(d) == customer(r) && same_time(d.time, r.time) => {}
            _ => {
                return Err(Violation::at(
                    records,
                    *i,
                    format!("inspection of customer {} does not follow its dispatch", customer(r)),
                ))
            }
        }
    }
    if let Some((i, _)) = dispatched.get(starts.len()) {
        return Err(Violation::at(
            records,
            *i,
            "dispatched customer never reached inspection",
        ));
    }
    Ok(())
}
