use std::collections::{BTreeMap, HashSet};

use super::{event_schema, horizon, indexed, monotonic, same_time, Field, Schema};
use crate::conformance::{binomial_two_sided, Catalog, Level, Rule, Violation};
use crate::scenarios::iobs::{STAGES, VERIFY_STAGES};
use crate::scenarios::Args;
use crate::trace::TraceRecord;

/// Smallest binomial p-value accepted for the observed pass counts.
pub const MIN_P_VALUE: f64 = 1e-4;

const REQUEST: &[(&str, Field)] = &[("request", Field::Int)];
const VERIFY: &[(&str, Field)] = &[("request", Field::Int), ("passed", Field::Bool)];
const DROP: &[(&str, Field)] = &[("request", Field::Int), ("stage", Field::OneOf(&VERIFY_STAGES))];

const SCHEMA: Schema = &[
    ("aam", "stage_enter", REQUEST),
    ("anv", "stage_enter", REQUEST),
    ("anv", "verify", VERIFY),
    ("anv", "drop", DROP),
    ("pv", "stage_enter", REQUEST),
    ("pv", "verify", VERIFY),
    ("pv", "drop", DROP),
    ("bpm", "stage_enter", REQUEST),
    ("tpm", "stage_enter", REQUEST),
    (
        "tpm",
        "balance_update",
        &[
            ("request", Field::Int),
            ("amount", Field::Number),
            ("balance", Field::Number),
        ],
    ),
];

#[derive(Debug, Clone, Copy)]
struct Params {
    delay: f64,
    pass_prob: f64,
    initial_balance: f64,
    amount: f64,
    horizon: f64,
}

pub(super) fn catalog(args: &Args) -> Catalog {
    let p = Params {
        delay: args.float("stage_delay"),
        pass_prob: args.float("pass_prob"),
        initial_balance: args.float("initial_balance"),
        amount: args.float("amount"),
        horizon: args.float("simulate_time"),
    };
    Catalog {
        component: vec![
            event_schema("iobs.event-schema", SCHEMA),
            Rule::new(
                "iobs.stage-latency",
                Level::Component,
                "Each stage releases a request exactly stage_delay after it entered",
                move |r| stage_latency(r, &p),
            ),
            Rule::new(
                "iobs.drop-legality",
                Level::Component,
                "A request is dropped exactly when its verification fails",
                drop_legality,
            ),
            Rule::new(
                "iobs.balance-arithmetic",
                Level::Component,
                "Each settlement credits the configured amount to the running balance",
                move |r| balance_arithmetic(r, &p),
            ),
        ],
        system: vec![
            Rule::new(
                "iobs.stage-order",
                Level::System,
                "Requests traverse the stages in order and stop only when dropped",
                move |r| stage_order(r, &p),
            ),
            Rule::new(
                "iobs.settle-on-completion",
                Level::System,
                "Exactly the requests that finish the final stage are settled, once each",
                move |r| settle_on_completion(r, &p),
            ),
            Rule::new(
                "iobs.verification-distribution",
                Level::System,
                "Verification pass counts are consistent with pass_prob",
                move |r| verification_distribution(r, &p),
            ),
            horizon("iobs.horizon", p.horizon),
            monotonic("iobs.monotonic-time"),
        ],
    }
}

fn request(r: &TraceRecord) -> i64 {
    r.get_i64("request").unwrap_or(-1)
}

/// Every record of each request, in trace order.
fn by_request(records: &[TraceRecord]) -> BTreeMap<i64, Vec<usize>> {
    let mut map: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        map.entry(request(r)).or_default().push(i);
    }
    map
}

fn stage_index(entity: &str) -> Option<usize> {
    STAGES.iter().position(|s| *s == entity)
}

fn stage_latency(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    for indices in by_request(records).values() {
        let mut entered: Option<f64> = None;
        for &i in indices {
            let r = &records[i];
            match r.event.as_str() {
                "stage_enter" => {
                    if let Some(t) = entered {
                        if !same_time(t + p.delay, r.time) {
                            return Err(Violation::at(
                                records,
                                i,
                                format!(
                                    "request {} entered {} at {}, expected {}",
                                    request(r),
                                    r.entity,
                                    r.time,
                                    t + p.delay
                                ),
                            ));
                        }
                    }
                    entered = Some(r.time);
                }
                "verify" | "balance_update" if !entered.is_some_and(|t| same_time(t + p.delay, r.time)) => {
                    return Err(Violation::at(
                        records,
                        i,
                        format!(
                            "{} of request {} at {} is not stage_delay after entry",
                            r.event,
                            request(r),
                            r.time
                        ),
                    ));
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn drop_legality(records: &[TraceRecord]) -> Result<(), Violation> {
    for (i, r) in records.iter().enumerate() {
        match r.event.as_str() {
            "verify" if r.get_bool("passed") == Some(false) => {
                let dropped = records
                    .get(i + 1)
                    .is_some_and(|d| d.is(&r.entity, "drop") && request(d) == request(r) && same_time(d.time, r.time));
                if !dropped {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("failed request {} was not dropped", request(r)),
                    ));
                }
            }
            "drop" => {
                let failed = i > 0 && {
                    let v = &records[i - 1];
                    v.is(&r.entity, "verify") && v.get_bool("passed") == Some(false) && request(v) == request(r)
                };
                if !failed || r.get_str("stage") != Some(r.entity.as_str()) {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("request {} dropped without failing verification here", request(r)),
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn balance_arithmetic(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    for (k, (i, r)) in indexed(records, "tpm", "balance_update").enumerate() {
        let expected = p.initial_balance + (k + 1) as f64 * p.amount;
        let tol = 1e-9 * expected.abs().max(1.0);
        let balance = r.get_f64("balance").unwrap_or(f64::NAN);
        if r.get_f64("amount") != Some(p.amount) || !((balance - expected).abs() <= tol) {
            return Err(Violation::at(
                records,
                i,
                format!("balance {balance} after {} settlements, expected {expected}", k + 1),
            ));
        }
    }
    Ok(())
}

fn stage_order(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    for (id, indices) in by_request(records) {
        let mut stage: Option<usize> = None;
        let mut entered_at = 0.0;
        let mut dropped = false;
        for &i in &indices {
            let r = &records[i];
            if dropped {
                return Err(Violation::at(
                    records,
                    i,
                    format!("request {id} active after being dropped"),
                ));
            }
            match r.event.as_str() {
                "stage_enter" => {
                    let next = stage.map_or(0, |s| s + 1);
                    if stage_index(&r.entity) != Some(next) {
                        return Err(Violation::at(
                            records,
                            i,
                            format!("request {id} entered {} out of order", r.entity),
                        ));
                    }
                    stage = Some(next);
                    entered_at = r.time;
                }
                "drop" => dropped = true,
                _ => {
                    if stage_index(&r.entity) != stage {
                        return Err(Violation::at(
                            records,
                            i,
                            format!("request {id} reported by {} while in another stage", r.entity),
                        ));
                    }
                }
            }
        }
        let Some(s) = stage else { continue };
        let last = *indices.last().expect("request has records");
        let stalled = !dropped && s + 1 < STAGES.len() && entered_at + p.delay <= p.horizon;
        if stalled {
            return Err(Violation::at(
                records,
                last,
                format!("request {id} never left {}", STAGES[s]),
            ));
        }
    }
    Ok(())
}

fn settle_on_completion(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    let last = STAGES[STAGES.len() - 1];
    let mut due: Vec<(usize, i64)> = indexed(records, last, "stage_enter")
        .filter(|(_, r)| r.time + p.delay <= p.horizon)
        .map(|(i, r)| (i, request(r)))
        .collect();
    let mut settled = HashSet::new();
    for (i, r) in indexed(records, last, "balance_update") {
        let id = request(r);
        if !settled.insert(id) {
            return Err(Violation::at(records, i, format!("request {id} settled twice")));
        }
        match due.iter().position(|&(_, d)| d == id) {
            Some(k) => {
                due.remove(k);
            }
            None => {
                return Err(Violation::at(
                    records,
                    i,
                    format!("request {id} settled without completing"),
                ))
            }
        }
    }
    match due.first() {
        Some(&(i, id)) => Err(Violation::at(
            records,
            i,
            format!("request {id} completed but was never settled"),
        )),
        None => Ok(()),
    }
}

fn verification_distribution(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    for stage in VERIFY_STAGES {
        let outcomes: Vec<bool> = indexed(records, stage, "verify")
            .map(|(_, r)| r.get_bool("passed").unwrap_or(false))
            .collect();
        if outcomes.is_empty() {
            continue;
        }
        let n = outcomes.len() as u64;
        let k = outcomes.iter().filter(|b| **b).count() as u64;
        let p_value = binomial_two_sided(k, n, p.pass_prob);
        if p_value < MIN_P_VALUE {
            return Err(Violation::global(format!(
                "{stage}: {k}/{n} passed, binomial p-value {p_value:.3e} for pass_prob {}",
                p.pass_prob
            ))
            .with_entity(stage));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::mutants::{assert_all_pass, failing, find, set, Mutants};
    use super::*;
    use crate::conformance::rule_catalog;
    use crate::scenarios::{simulate_records, ScenarioKind};

    fn reference(tokens: &[&str]) -> (Catalog, Vec<TraceRecord>) {
        let args = ScenarioKind::Iobs.parse_args(tokens).unwrap();
        let records = simulate_records(ScenarioKind::Iobs, tokens, None).unwrap();
        (rule_catalog(ScenarioKind::Iobs, &args), records)
    }

    #[test]
    fn reference_traces_pass() {
        for tokens in [
            &[][..],
            &["--requests", "1"],
            &["--pass_prob", "1"],
            &["--pass_prob", "0"],
            &["--requests", "500", "--arrival_mean", "0.5", "--seed", "5"],
            &["--simulate_time", "200"],
        ] {
            let (catalog, records) = reference(tokens);
            assert_all_pass(&catalog, &records);
        }
    }

    #[test]
    fn each_rule_has_a_killing_mutant() {
        let (catalog, base) = reference(&[]);
        let mutants: Mutants = vec![
            ("iobs.event-schema", Box::new(|t| set(t, 0, "request", "one"))),
            (
                "iobs.stage-latency",
                Box::new(|t| {
                    let i = find(t, |r| r.is("tpm", "balance_update"));
                    t[i].time += 0.5;
                }),
            ),
            (
                "iobs.drop-legality",
                Box::new(|t| {
                    let i = find(t, |r| r.event == "drop");
                    t.remove(i);
                }),
            ),
            (
                "iobs.balance-arithmetic",
                Box::new(|t| {
                    let i = find(t, |r| r.is("tpm", "balance_update"));
                    set(t, i, "balance", 1020.0);
                }),
            ),
            (
                "iobs.stage-order",
                Box::new(|t| {
                    let i = find(t, |r| r.is("bpm", "stage_enter"));
                    t[i].entity = "aam".into();
                }),
            ),
            (
                "iobs.settle-on-completion",
                Box::new(|t| {
                    let i = find(t, |r| r.is("tpm", "balance_update"));
                    t.remove(i);
                }),
            ),
            (
                "iobs.verification-distribution",
                Box::new(|t| {
                    for r in t.iter_mut().filter(|r| r.event == "verify") {
                        r.payload.insert("passed".into(), true.into());
                    }
                }),
            ),
            (
                "iobs.horizon",
                Box::new(|t| {
                    let mut extra = t.last().unwrap().clone();
                    extra.time = 200000.0;
                    t.push(extra);
                }),
            ),
            (
                "iobs.monotonic-time",
                Box::new(|t| {
                    let n = t.len();
                    t.swap(0, n - 1);
                }),
            ),
        ];
        let ids: Vec<&str> = catalog.rules().map(|r| r.id).collect();
        let covered: Vec<&str> = mutants.iter().map(|(id, _)| *id).collect();
        assert_eq!(ids, covered);
        for (id, mutate) in &mutants {
            let mut records = base.clone();
            mutate(&mut records);
            let failed = failing(&catalog, &records);
            assert!(failed.contains(id), "mutant for {id} only killed {failed:?}");
        }
    }

    #[test]
    fn degenerate_pass_probabilities_demand_exact_outcomes() {
        let (catalog, mut records) = reference(&["--pass_prob", "1"]);
        let i = find(&records, |r| r.event == "verify");
        set(&mut records, i, "passed", false);
        let rule = catalog.get("iobs.verification-distribution").unwrap();
        assert!(rule.check(&records).is_err());
    }
}
