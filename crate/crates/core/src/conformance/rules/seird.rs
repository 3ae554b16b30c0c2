use super::{event_schema, horizon, indexed, monotonic, same_time, Field, Schema};
use crate::conformance::{Catalog, Level, Rule, Violation};
use crate::scenarios::Args;
use crate::trace::TraceRecord;

const KEYS: [&str; 5] = ["S", "E", "I", "R", "D"];

const SCHEMA: Schema = &[(
    "seird",
    "state",
    &[
        ("step", Field::Int),
        ("S", Field::Number),
        ("E", Field::Number),
        ("I", Field::Number),
        ("R", Field::Number),
        ("D", Field::Number),
    ],
)];

#[derive(Debug, Clone, Copy)]
struct Params {
    n: f64,
    initial: [f64; 5],
    beta: f64,
    sigma: f64,
    gamma: f64,
    mu: f64,
    dt: f64,
    horizon: f64,
}

impl Params {
    /// Absolute tolerance for compartment comparisons.
    fn tol(&self) -> f64 {
        1e-9 * self.n.abs().max(1.0)
    }

    fn step(&self, [s, e, i, r, d]: [f64; 5]) -> [f64; 5] {
        let new_infections = self.beta * s * i / self.n * self.dt;
        let incubated = self.sigma * e * self.dt;
        let left_infected = self.gamma * i * self.dt;
        let died = self.mu * left_infected;
        [
            s - new_infections,
            e + new_infections - incubated,
            i + incubated - left_infected,
            r + left_infected - died,
            d + died,
        ]
    }
}

pub(super) fn catalog(args: &Args) -> Catalog {
    let n = args.float("population");
    let (e, i, r, d) = (
        args.float("exposed"),
        args.float("infected"),
        args.float("recovered"),
        args.float("dead"),
    );
    let p = Params {
        n,
        initial: [n - e - i - r - d, e, i, r, d],
        beta: args.float("beta"),
        sigma: args.float("sigma"),
        gamma: args.float("gamma"),
        mu: args.float("mu"),
        dt: args.float("dt"),
        horizon: args.float("horizon"),
    };
    Catalog {
        component: vec![
            event_schema("seird.event-schema", SCHEMA),
            Rule::new(
                "seird.initial-state",
                Level::Component,
                "The first state is step 0 at time 0 with the configured compartments",
                move |r| initial_state(r, &p),
            ),
            Rule::new(
                "seird.euler-step",
                Level::Component,
                "Each state is one explicit Euler step from its predecessor",
                move |r| euler_step(r, &p),
            ),
        ],
        system: vec![
            Rule::new(
                "seird.conservation",
                Level::System,
                "Compartments always sum to the population",
                move |r| conservation(r, &p),
            ),
            Rule::new(
                "seird.non-negative",
                Level::System,
                "No compartment goes negative",
                move |r| non_negative(r, &p),
            ),
            Rule::new(
                "seird.step-cadence",
                Level::System,
                "State k is reported at k*dt, for every step up to the horizon",
                move |r| step_cadence(r, &p),
            ),
            horizon("seird.horizon", p.horizon),
            monotonic("seird.monotonic-time"),
        ],
    }
}

fn compartments(r: &TraceRecord) -> [f64; 5] {
    KEYS.map(|k| r.get_f64(k).unwrap_or(f64::NAN))
}

fn states(records: &[TraceRecord]) -> impl Iterator<Item = (usize, &TraceRecord)> {
    indexed(records, "seird", "state")
}

fn initial_state(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    let Some((i, first)) = states(records).next() else {
        return Err(Violation::global("no state reported").with_entity("seird"));
    };
    if first.time != 0.0 || first.get_i64("step") != Some(0) {
        return Err(Violation::at(records, i, "first state must be step 0 at time 0"));
    }
    let got = compartments(first);
    for (k, (a, b)) in got.iter().zip(p.initial).enumerate() {
        if !((a - b).abs() <= p.tol()) {
            return Err(Violation::at(
                records,
                i,
                format!("initial {} = {a}, expected {b}", KEYS[k]),
            ));
        }
    }
    Ok(())
}

fn euler_step(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    let mut previous: Option<[f64; 5]> = None;
    for (i, r) in states(records) {
        let got = compartments(r);
        if let Some(prev) = previous {
            let expected = p.step(prev);
            for k in 0..5 {
                if !((got[k] - expected[k]).abs() <= p.tol()) {
                    return Err(Violation::at(
                        records,
                        i,
                        format!("{} = {}, Euler step gives {}", KEYS[k], got[k], expected[k]),
                    ));
                }
            }
        }
        previous = Some(got);
    }
    Ok(())
}

fn conservation(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    for (i, r) in states(records) {
        let total: f64 = compartments(r).iter().sum();
        if !((total - p.n).abs() <= p.tol()) {
            return Err(Violation::at(
                records,
                i,
                format!("compartments sum to {total}, not {}", p.n),
            ));
        }
    }
    Ok(())
}

fn non_negative(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    let floor = -1e-12 * p.n.abs().max(1.0);
    for (i, r) in states(records) {
        if let Some(k) = compartments(r).iter().position(|v| !(*v >= floor)) {
            return Err(Violation::at(records, i, format!("{} is negative", KEYS[k])));
        }
    }
    Ok(())
}

fn step_cadence(records: &[TraceRecord], p: &Params) -> Result<(), Violation> {
    let mut last: Option<(usize, i64)> = None;
    for (expected, (i, r)) in states(records).enumerate() {
        let expected = expected as i64;
        if r.get_i64("step") != Some(expected) {
            return Err(Violation::at(
                records,
                i,
                format!("step {:?}, expected {expected}", r.get_i64("step")),
            ));
        }
        if !same_time(r.time, expected as f64 * p.dt) {
            return Err(Violation::at(
                records,
                i,
                format!("step {expected} at {}, expected {}", r.time, expected as f64 * p.dt),
            ));
        }
        last = Some((i, expected));
    }
    let Some((i, k)) = last else {
        return Err(Violation::global("no state reported").with_entity("seird"));
    };
    let next = (k + 1) as f64 * p.dt;
    if next <= p.horizon || same_time(next, p.horizon) {
        return Err(Violation::at(
            records,
            i,
            format!("trace stops before the step due at {next}"),
        ));
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
        let args = ScenarioKind::Seird.parse_args(tokens).unwrap();
        let records = simulate_records(ScenarioKind::Seird, tokens, None).unwrap();
        (rule_catalog(ScenarioKind::Seird, &args), records)
    }

    #[test]
    fn reference_traces_pass() {
        for tokens in [
            &[][..],
            &["--horizon", "0.5"],
            &["--horizon", "0"],
            &["--beta", "0.9", "--sigma", "0.5", "--dt", "0.1", "--horizon", "200"],
            &["--population", "1000000", "--infected", "50", "--horizon", "5000"],
        ] {
            let (catalog, records) = reference(tokens);
            assert_all_pass(&catalog, &records);
        }
    }

    #[test]
    fn each_rule_has_a_killing_mutant() {
        let (catalog, base) = reference(&[]);
        let mutants: Mutants = vec![
            ("seird.event-schema", Box::new(|t| set(t, 3, "H", 1.0))),
            (
                "seird.initial-state",
                Box::new(|t| {
                    set(t, 0, "S", 980.0);
                    set(t, 0, "E", 10.0);
                }),
            ),
            (
                "seird.euler-step",
                Box::new(|t| {
                    let s = t[5].get_f64("S").unwrap();
                    let e = t[5].get_f64("E").unwrap();
                    set(t, 5, "S", s - 1.0);
                    set(t, 5, "E", e + 1.0);
                }),
            ),
            (
                "seird.conservation",
                Box::new(|t| {
                    let d = t[7].get_f64("D").unwrap();
                    set(t, 7, "D", d + 0.5);
                }),
            ),
            (
                "seird.non-negative",
                Box::new(|t| {
                    let i = find(t, |r| r.get_i64("step") == Some(200));
                    set(t, i, "E", -1.0);
                }),
            ),
            (
                "seird.step-cadence",
                Box::new(|t| {
                    t.pop();
                }),
            ),
            (
                "seird.horizon",
                Box::new(|t| {
                    let mut extra = t.last().unwrap().clone();
                    extra.time = 100.5;
                    t.push(extra);
                }),
            ),
            ("seird.monotonic-time", Box::new(|t| t.swap(1, 2))),
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
}
