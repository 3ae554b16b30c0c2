//! Random multi-level DEVS networks and the kernel properties checked on them.

#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use devsgen_core::kernel::{
    Atomic, AtomicModel, Context, Coordinator, CoupledModel, Exogenous, Inputs, KernelError, Outputs, Status,
    StepReport, Transition, MAX_ROUNDS_PER_INSTANT,
};
use devsgen_core::trace::TraceRecord;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Call {
    Step,
    Output {
        node: usize,
        t: f64,
        count: i64,
    },
    Int {
        node: usize,
        t: f64,
        count: i64,
    },
    Ext {
        node: usize,
        t: f64,
        e: f64,
        inputs: Vec<Value>,
    },
}

pub type Log = Rc<RefCell<Vec<Call>>>;

/// Optionally periodic node that accumulates inputs and forwards them after a delay.
pub struct Node {
    id: usize,
    period: Option<f64>,
    delay: f64,
    count: i64,
    pending: i64,
    log: Log,
}

impl Node {
    fn resume(&self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        match self.period {
            Some(p) => ctx.hold_in("tick", p),
            None => {
                ctx.passivate_in("idle");
                Ok(())
            }
        }
    }
}

impl Atomic for Node {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        self.resume(ctx)
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        self.count += 1 + self.pending;
        self.pending = 0;
        self.log.borrow_mut().push(Call::Int {
            node: self.id,
            t: ctx.now().value(),
            count: self.count,
        });
        ctx.log("fire", payload(json!({"count": self.count})));
        self.resume(ctx)
    }

    fn delta_ext(&mut self, ctx: &mut Context<'_>, e: f64, inputs: &Inputs<'_>) -> Result<(), KernelError> {
        let values = inputs.get("in").to_vec();
        self.pending += values.iter().filter_map(Value::as_i64).sum::<i64>();
        self.log.borrow_mut().push(Call::Ext {
            node: self.id,
            t: ctx.now().value(),
            e,
            inputs: values.clone(),
        });
        ctx.log("got", payload(json!({"values": values, "e": e})));
        ctx.hold_in("fwd", self.delay)
    }

    fn output(&self, status: &Status<'_>, out: &mut Outputs<'_>) {
        self.log.borrow_mut().push(Call::Output {
            node: self.id,
            t: status.now.value(),
            count: self.count,
        });
        out.send("out", self.count);
    }
}

fn payload(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub group: u8,
    pub sub: u8,
    pub period: Option<f64>,
    pub delay: f64,
}

#[derive(Debug, Clone)]
pub struct Net {
    pub nodes: Vec<NodeSpec>,
    pub edges: BTreeSet<(usize, usize)>,
    pub stimulated: BTreeSet<usize>,
    pub observed: BTreeSet<usize>,
    pub stimuli: Vec<(f64, i64)>,
}

pub fn half_steps(lo: u8, hi: u8) -> impl Strategy<Value = f64> {
    (lo..=hi).prop_map(|k| f64::from(k) * 0.5)
}

pub fn net_strategy() -> impl Strategy<Value = Net> {
    let node = || {
        (
            0u8..3,
            0u8..3,
            proptest::option::weighted(0.6, half_steps(1, 12)),
            half_steps(1, 8),
        )
    };
    (2usize..=20)
        .prop_flat_map(move |n| {
            (
                proptest::collection::vec(node(), n),
                proptest::collection::btree_set((0..n, 0..n), 0..=2 * n),
                proptest::collection::btree_set(0..n, 0..=2),
                proptest::collection::btree_set(0..n, 0..=3),
                proptest::collection::vec((half_steps(0, 40), -5i64..5), 0..6),
            )
        })
        .prop_map(|(mut specs, edges, stimulated, observed, mut stimuli)| {
            // Ids follow (group, subgroup) order so flat and nested path orders agree.
            specs.sort_by_key(|(g, s, _, _)| (*g, *s));
            stimuli.sort_by(|a, b| a.0.total_cmp(&b.0));
            Net {
                nodes: specs
                    .into_iter()
                    .map(|(group, sub, period, delay)| NodeSpec {
                        group,
                        sub,
                        period,
                        delay,
                    })
                    .collect(),
                edges: edges.into_iter().filter(|(a, b)| a != b).collect(),
                stimulated,
                observed,
                stimuli,
            }
        })
}

pub fn atomic(id: usize, spec: &NodeSpec, log: &Log) -> AtomicModel {
    AtomicModel::new(
        &format!("n{id:02}"),
        Node {
            id,
            period: spec.period,
            delay: spec.delay,
            count: 0,
            pending: 0,
            log: log.clone(),
        },
    )
    .unwrap()
    .with_entity(&format!("n{id:02}"))
    .with_input("in")
    .unwrap()
    .with_output("out")
    .unwrap()
}

pub fn root_ports(root: &mut CoupledModel) {
    root.add_input("stim").unwrap();
    root.add_output("sink").unwrap();
}

pub fn flat(net: &Net, log: &Log) -> CoupledModel {
    let mut root = CoupledModel::new("net").unwrap();
    root_ports(&mut root);
    for (id, spec) in net.nodes.iter().enumerate() {
        root.add_component(atomic(id, spec, log)).unwrap();
    }
    for (a, b) in &net.edges {
        root.connect(&format!("n{a:02}.out"), &format!("n{b:02}.in")).unwrap();
    }
    for k in &net.stimulated {
        root.connect("stim", &format!("n{k:02}.in")).unwrap();
    }
    for k in &net.observed {
        root.connect(&format!("n{k:02}.out"), "sink").unwrap();
    }
    root
}

/// Builds the same network as root -> groups -> subgroups -> atomics, routing
/// every connection through per-node boundary ports.
pub fn nested(net: &Net, log: &Log) -> CoupledModel {
    type Key = (u8, u8);
    let loc = |id: usize| (net.nodes[id].group, net.nodes[id].sub);
    let mut subs: BTreeMap<Key, CoupledModel> = BTreeMap::new();
    for (id, spec) in net.nodes.iter().enumerate() {
        subs.entry(loc(id))
            .or_insert_with(|| CoupledModel::new(&format!("s{}", spec.sub)).unwrap())
            .add_component(atomic(id, spec, log))
            .unwrap();
    }
    let mut ports: BTreeSet<(Key, String)> = BTreeSet::new();
    let mut group_ports: BTreeSet<(u8, String)> = BTreeSet::new();
    let mut sub_links: Vec<(Key, String, String)> = Vec::new();
    let mut group_links: Vec<(u8, String, String)> = Vec::new();
    let mut root_links: Vec<(String, String)> = Vec::new();

    // Exposes node `id`'s output at its subgroup ("o") and, if `to_group`, at its group.
    let mut export = |id: usize, to_group: bool, sub_links: &mut Vec<_>, group_links: &mut Vec<_>| {
        let (g, s) = loc(id);
        let port = format!("o{id:02}");
        if ports.insert(((g, s), port.clone())) {
            sub_links.push(((g, s), format!("n{id:02}.out"), port.clone()));
        }
        if to_group && group_ports.insert((g, port.clone())) {
            group_links.push((g, format!("s{s}.{port}"), port.clone()));
        }
    };
    let mut import_ports: BTreeSet<(Key, String)> = BTreeSet::new();
    let mut group_imports: BTreeSet<(u8, String)> = BTreeSet::new();
    let mut import = |id: usize, from_group: bool, sub_links: &mut Vec<_>, group_links: &mut Vec<_>| {
        let (g, s) = loc(id);
        let port = format!("i{id:02}");
        if import_ports.insert(((g, s), port.clone())) {
            sub_links.push(((g, s), port.clone(), format!("n{id:02}.in")));
        }
        if from_group && group_imports.insert((g, port.clone())) {
            group_links.push((g, port.clone(), format!("s{s}.{port}")));
        }
    };

    for &(a, b) in &net.edges {
        let ((ga, sa), (gb, sb)) = (loc(a), loc(b));
        if (ga, sa) == (gb, sb) {
            sub_links.push(((ga, sa), format!("n{a:02}.out"), format!("n{b:02}.in")));
        } else if ga == gb {
            export(a, false, &mut sub_links, &mut group_links);
            import(b, false, &mut sub_links, &mut group_links);
            group_links.push((ga, format!("s{sa}.o{a:02}"), format!("s{sb}.i{b:02}")));
        } else {
            export(a, true, &mut sub_links, &mut group_links);
            import(b, true, &mut sub_links, &mut group_links);
            root_links.push((format!("g{ga}.o{a:02}"), format!("g{gb}.i{b:02}")));
        }
    }
    for &k in &net.stimulated {
        import(k, true, &mut sub_links, &mut group_links);
        root_links.push(("stim".into(), format!("g{}.i{k:02}", loc(k).0)));
    }
    for &k in &net.observed {
        export(k, true, &mut sub_links, &mut group_links);
        root_links.push((format!("g{}.o{k:02}", loc(k).0), "sink".into()));
    }

    for ((key, port), dir) in ports
        .iter()
        .map(|p| (p, true))
        .chain(import_ports.iter().map(|p| (p, false)))
    {
        let sub = subs.get_mut(key).unwrap();
        if dir {
            sub.add_output(port).unwrap();
        } else {
            sub.add_input(port).unwrap();
        }
    }
    for (key, src, dst) in &sub_links {
        subs.get_mut(key).unwrap().connect(src, dst).unwrap();
    }

    let mut groups: BTreeMap<u8, CoupledModel> = BTreeMap::new();
    for ((g, _), sub) in subs {
        groups
            .entry(g)
            .or_insert_with(|| CoupledModel::new(&format!("g{g}")).unwrap())
            .add_component(sub)
            .unwrap();
    }
    for (g, port) in &group_ports {
        groups.get_mut(g).unwrap().add_output(port).unwrap();
    }
    for (g, port) in &group_imports {
        groups.get_mut(g).unwrap().add_input(port).unwrap();
    }
    for (g, src, dst) in &group_links {
        groups.get_mut(g).unwrap().connect(src, dst).unwrap();
    }

    let mut root = CoupledModel::new("net").unwrap();
    root_ports(&mut root);
    for (_, group) in groups {
        root.add_component(group).unwrap();
    }
    for (src, dst) in &root_links {
        root.connect(src, dst).unwrap();
    }
    root
}

pub struct Run {
    pub calls: Vec<Call>,
    pub reports: Vec<StepReport>,
    pub records: Vec<TraceRecord>,
}

pub const HORIZON: f64 = 25.0;

pub fn run(root: CoupledModel, net: &Net, log: &Log) -> Run {
    let mut coord = Coordinator::new(root).unwrap();
    let stimuli = net
        .stimuli
        .iter()
        .map(|(t, v)| Exogenous::new(*t, "stim", *v).unwrap())
        .collect::<Vec<_>>();
    coord.inject(stimuli).unwrap();
    coord.initialize().unwrap();
    let mut reports = Vec::new();
    while coord.next_time().value() <= HORIZON {
        log.borrow_mut().push(Call::Step);
        reports.push(coord.step().unwrap().unwrap());
    }
    coord.finish().unwrap();
    Run {
        calls: log.borrow().clone(),
        reports,
        records: coord.records().to_vec(),
    }
}

pub fn run_flat(net: &Net) -> Run {
    let log = Log::default();
    run(flat(net, &log), net, &log)
}

pub fn run_nested(net: &Net) -> Run {
    let log = Log::default();
    run(nested(net, &log), net, &log)
}

pub fn steps(calls: &[Call]) -> Vec<&[Call]> {
    calls.split(|c| *c == Call::Step).skip(1).collect()
}

/// Root-output deliveries as `(time, values)`.
pub fn sunk(reports: &[StepReport]) -> Vec<(f64, Vec<Value>)> {
    reports
        .iter()
        .flat_map(|r| {
            r.deliveries
                .iter()
                .filter(|d| d.target.component == "net" && d.target.port == "sink")
                .map(move |d| (r.time.value(), d.values.clone()))
        })
        .collect()
}

pub fn node_of(path: &str) -> usize {
    path.rsplit('.').next().unwrap()[1..].parse().unwrap()
}

pub fn outputs_precede_transitions_and_see_prior_state(net: &Net) -> Result<(), TestCaseError> {
    let run = run_flat(net);
    let mut counts: BTreeMap<usize, i64> = BTreeMap::new();
    for step in steps(&run.calls) {
        let first_delta = step.iter().position(|c| !matches!(c, Call::Output { .. }));
        if let Some(k) = first_delta {
            let late_output = step[k..].iter().any(|c| matches!(c, Call::Output { .. }));
            prop_assert!(!late_output, "output after a transition in {:?}", step);
        }
        for call in step {
            match call {
                Call::Output { node, count, .. } => {
                    prop_assert_eq!(*count, counts.get(node).copied().unwrap_or(0));
                }
                Call::Int { node, count, .. } => {
                    counts.insert(*node, *count);
                }
                _ => {}
            }
        }
    }
    Ok(())
}

pub fn elapsed_matches_an_independent_clock(net: &Net) -> Result<(), TestCaseError> {
    let run = run_flat(net);
    let mut last: BTreeMap<usize, f64> = BTreeMap::new();
    for call in &run.calls {
        match call {
            Call::Int { node, t, .. } => {
                last.insert(*node, *t);
            }
            Call::Ext { node, t, e, .. } => {
                let since = t - last.get(node).copied().unwrap_or(0.0);
                prop_assert_eq!(*e, since, "node {} at {}", node, t);
                last.insert(*node, *t);
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn confluent_default_is_internal_then_external_at_zero(net: &Net) -> Result<(), TestCaseError> {
    let run = run_flat(net);
    for (report, step) in run.reports.iter().zip(steps(&run.calls)) {
        for (path, kind) in &report.transitions {
            let node = node_of(path);
            let mine: Vec<&Call> = step
                .iter()
                .filter(|c| matches!(c, Call::Int { node: n, .. } | Call::Ext { node: n, .. } if *n == node))
                .collect();
            match kind {
                Transition::Confluent => {
                    let ok = matches!(mine[..], [Call::Int { .. }, Call::Ext { e, .. }] if *e == 0.0);
                    prop_assert!(ok, "confluent {} ran {:?}", path, mine);
                }
                Transition::Internal => {
                    let ok = matches!(mine[..], [Call::Int { .. }]);
                    prop_assert!(ok, "internal {} ran {:?}", path, mine);
                }
                Transition::External => {
                    let ok = matches!(mine[..], [Call::Ext { .. }]);
                    prop_assert!(ok, "external {} ran {:?}", path, mine);
                }
            }
        }
    }
    Ok(())
}

pub fn passive_unfed_nodes_never_transition(net: &Net) -> Result<(), TestCaseError> {
    let run = run_flat(net);
    let fed: BTreeSet<usize> = net
        .edges
        .iter()
        .map(|(_, b)| *b)
        .chain(net.stimulated.iter().copied())
        .collect();
    for (id, spec) in net.nodes.iter().enumerate() {
        if spec.period.is_none() && !fed.contains(&id) {
            let touched = run.calls.iter().any(|c| {
                matches!(
                    c,
                    Call::Int { node, .. } | Call::Ext { node, .. } | Call::Output { node, .. } if *node == id
                )
            });
            prop_assert!(!touched, "passive node {} was activated", id);
        }
    }
    Ok(())
}

pub fn runs_are_deterministic(net: &Net) -> Result<(), TestCaseError> {
    let a = run_flat(net);
    let b = run_flat(net);
    prop_assert_eq!(a.calls, b.calls);
    prop_assert_eq!(a.reports, b.reports);
    prop_assert_eq!(a.records, b.records);
    Ok(())
}

pub fn nested_routing_matches_flat(net: &Net) -> Result<(), TestCaseError> {
    let f = run_flat(net);
    let n = run_nested(net);
    prop_assert_eq!(&f.records, &n.records);
    prop_assert_eq!(&f.calls, &n.calls);
    prop_assert_eq!(sunk(&f.reports), sunk(&n.reports));
    let times = |r: &Run| r.reports.iter().map(|s| s.time.value()).collect::<Vec<_>>();
    prop_assert_eq!(times(&f), times(&n));
    Ok(())
}

pub fn zero_delay_cycles_are_reported_as_livelock(len: usize, start: u8) -> Result<(), TestCaseError> {
    let mut root = CoupledModel::new("ring").unwrap();
    for k in 0..len {
        root.add_component(
            AtomicModel::new(
                &format!("r{k}"),
                Relay {
                    first: k == 0,
                    start: f64::from(start),
                },
            )
            .unwrap()
            .with_input("in")
            .unwrap()
            .with_output("out")
            .unwrap(),
        )
        .unwrap();
    }
    for k in 0..len {
        root.connect(&format!("r{k}.out"), &format!("r{}.in", (k + 1) % len))
            .unwrap();
    }
    let mut coord = Coordinator::new(root).unwrap();
    match coord.run_until(100.0, vec![]) {
        Err(KernelError::Livelock {
            time,
            rounds,
            components,
        }) => {
            prop_assert_eq!(time, f64::from(start));
            prop_assert_eq!(rounds, MAX_ROUNDS_PER_INSTANT + 1);
            prop_assert_eq!(components.len(), 1);
        }
        other => prop_assert!(false, "expected livelock, got {:?}", other),
    }
    Ok(())
}

/// Passes a token on with zero delay; the first relay starts it.
struct Relay {
    first: bool,
    start: f64,
}

impl Atomic for Relay {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        if self.first {
            ctx.hold_in("send", self.start)
        } else {
            ctx.passivate_in("idle");
            Ok(())
        }
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.passivate_in("idle");
        Ok(())
    }

    fn delta_ext(&mut self, ctx: &mut Context<'_>, _: f64, _: &Inputs<'_>) -> Result<(), KernelError> {
        ctx.hold_in("send", 0.0)
    }

    fn output(&self, _: &Status<'_>, out: &mut Outputs<'_>) {
        out.send("out", 1);
    }
}
