//! Built-in rule catalogs, parameterized by the case's scenario flags.

mod abp;
mod barbershop;
mod iobs;
mod seird;

use serde_json::Value;

use super::{Catalog, Level, Rule, Violation};
use crate::scenarios::{Args, ScenarioKind};
use crate::trace::{check_monotonic, TraceRecord};

pub fn rule_catalog(kind: ScenarioKind, args: &Args) -> Catalog {
    match kind {
        ScenarioKind::Abp => abp::catalog(args),
        ScenarioKind::Seird => seird::catalog(args),
        ScenarioKind::Barbershop => barbershop::catalog(args),
        ScenarioKind::Iobs => iobs::catalog(args),
    }
}

/// Timestamp comparison with a small relative slack for independently
/// accumulated floating-point times.
pub(crate) fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

pub(crate) fn monotonic(id: &'static str) -> Rule {
    Rule::new(
        id,
        Level::System,
        "Timestamps never decrease",
        |records| match check_monotonic(records).first() {
            Some(&i) => Err(Violation::at(
                records,
                i,
                format!("time {} after {}", records[i].time, records[i - 1].time),
            )),
            None => Ok(()),
        },
    )
}

pub(crate) fn horizon(id: &'static str, limit: f64) -> Rule {
    Rule::new(
        id,
        Level::System,
        "No event after the simulation horizon",
        move |records| match records.iter().position(|r| r.time > limit) {
            Some(i) => Err(Violation::at(
                records,
                i,
                format!("event at {} beyond horizon {limit}", records[i].time),
            )),
            None => Ok(()),
        },
    )
}

/// Expected JSON type of a payload field.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Field {
    Int,
    Number,
    Bool,
    /// Integer in `lo..=hi`.
    Range(i64, i64),
    OneOf(&'static [&'static str]),
}

impl Field {
    fn accepts(self, v: &Value) -> bool {
        match self {
            Field::Int => v.is_i64() || v.is_u64(),
            Field::Number => v.is_number(),
            Field::Bool => v.is_boolean(),
            Field::Range(lo, hi) => v.as_i64().is_some_and(|x| (lo..=hi).contains(&x)),
            Field::OneOf(options) => v.as_str().is_some_and(|s| options.contains(&s)),
        }
    }
}

/// Allowed `(entity, event)` pairs with their exact payload fields.
pub(crate) type Schema = &'static [(&'static str, &'static str, &'static [(&'static str, Field)])];

pub(crate) fn event_schema(id: &'static str, schema: Schema) -> Rule {
    Rule::new(
        id,
        Level::Component,
        "Every record is a catalogued event with a well-typed payload",
        move |records| {
            for (i, r) in records.iter().enumerate() {
                let Some((_, _, fields)) = schema.iter().find(|(e, ev, _)| *e == r.entity && *ev == r.event) else {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("unknown event {}.{}", r.entity, r.event),
                    ));
                };
                for (key, field) in fields.iter() {
                    match r.payload.get(*key) {
                        Some(v) if field.accepts(v) => {}
                        Some(v) => {
                            return Err(Violation::at(
                                records,
                                i,
                                format!("payload {key} = {v} is not {field:?}"),
                            ))
                        }
                        None => return Err(Violation::at(records, i, format!("payload lacks {key}"))),
                    }
                }
                if let Some(extra) = r.payload.keys().find(|k| !fields.iter().any(|(f, _)| f == k)) {
                    return Err(Violation::at(records, i, format!("unexpected payload field {extra}")));
                }
            }
            Ok(())
        },
    )
}

pub(crate) fn indexed<'a>(
    records: &'a [TraceRecord],
    entity: &'a str,
    event: &'a str,
) -> impl Iterator<Item = (usize, &'a TraceRecord)> + 'a {
    records
        .iter()
        .enumerate()
        .filter(move |(_, r)| r.entity == entity && r.event == event)
}

#[cfg(test)]
pub(crate) mod mutants {
    //! Helpers for building rule-killing trace mutants.

    use serde_json::Value;

    use crate::conformance::Catalog;
    use crate::trace::TraceRecord;

    /// A rule id paired with an edit that should make it fail.
    pub type Mutants = Vec<(&'static str, Box<dyn Fn(&mut Vec<TraceRecord>)>)>;

    pub fn find(records: &[TraceRecord], pred: impl Fn(&TraceRecord) -> bool) -> usize {
        records.iter().position(pred).expect("mutation target present")
    }

    pub fn set(records: &mut [TraceRecord], i: usize, key: &str, v: impl Into<Value>) {
        records[i].payload.insert(key.to_string(), v.into());
    }

    /// Ids of the rules that fail on `records`.
    pub fn failing(catalog: &Catalog, records: &[TraceRecord]) -> Vec<&'static str> {
        catalog
            .rules()
            .filter(|r| r.check(records).is_err())
            .map(|r| r.id)
            .collect()
    }

    pub fn assert_all_pass(catalog: &Catalog, records: &[TraceRecord]) {
        for rule in catalog.rules() {
            if let Err(v) = rule.check(records) {
                panic!("{} failed on reference trace: {v:?}", rule.id);
            }
        }
    }
}
