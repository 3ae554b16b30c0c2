use std::cell::RefCell;
use std::rc::Rc;

use serde_json::{json, Value};

use super::*;

type Calls = Rc<RefCell<Vec<String>>>;

/// Fires every `period` and emits a counter.
struct Generator {
    period: f64,
    count: i64,
    calls: Calls,
}

impl Atomic for Generator {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.hold_in("active", self.period)
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        self.calls.borrow_mut().push(format!("int@{}", ctx.now()));
        self.count += 1;
        ctx.hold_in("active", self.period)
    }

    fn delta_ext(&mut self, _: &mut Context<'_>, _: f64, _: &Inputs<'_>) -> Result<(), KernelError> {
        Ok(())
    }

    fn output(&self, _: &Status<'_>, out: &mut Outputs<'_>) {
        out.send("out", self.count);
    }
}

/// Passive sink recording what it receives.
struct Recorder {
    calls: Calls,
}

impl Atomic for Recorder {
    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        self.calls.borrow_mut().push(format!("int@{}", ctx.now()));
        ctx.passivate();
        Ok(())
    }

    fn delta_ext(&mut self, ctx: &mut Context<'_>, e: f64, inputs: &Inputs<'_>) -> Result<(), KernelError> {
        let values: Vec<Value> = inputs.get("in").to_vec();
        self.calls
            .borrow_mut()
            .push(format!("ext@{} e={} {:?}", ctx.now(), e, values));
        Ok(())
    }

    fn output(&self, _: &Status<'_>, _: &mut Outputs<'_>) {}
}

fn generator(name: &str, period: f64, calls: &Calls) -> AtomicModel {
    AtomicModel::new(
        name,
        Generator {
            period,
            count: 0,
            calls: calls.clone(),
        },
    )
    .unwrap()
    .with_output("out")
    .unwrap()
}

fn recorder(name: &str, calls: &Calls) -> AtomicModel {
    AtomicModel::new(name, Recorder { calls: calls.clone() })
        .unwrap()
        .with_input("in")
        .unwrap()
}

#[test]
fn coupling_classes() {
    let calls = Calls::default();
    let mut top = CoupledModel::new("top").unwrap();
    top.add_input("start").unwrap();
    top.add_output("log").unwrap();
    top.add_component(generator("sender", 1.0, &calls)).unwrap();
    top.add_component(recorder("sink", &calls)).unwrap();

    assert_eq!(top.connect("start", "sink.in").unwrap(), CouplingKind::Eic);
    assert_eq!(top.connect("sender.out", "sink.in").unwrap(), CouplingKind::Ic);
    assert_eq!(top.connect("sender.out", "log").unwrap(), CouplingKind::Eoc);

    assert!(matches!(
        top.connect("sink.in", "log"),
        Err(KernelError::CouplingClass { .. })
    ));
    assert!(matches!(
        top.connect("sender.out", "sender.out"),
        Err(KernelError::CouplingClass { .. })
    ));
    assert!(matches!(
        top.connect("start", "log"),
        Err(KernelError::CouplingClass { .. })
    ));
    assert!(matches!(
        top.connect("sender.nope", "sink.in"),
        Err(KernelError::MissingPort { .. })
    ));
    assert!(matches!(
        top.connect("ghost.out", "sink.in"),
        Err(KernelError::MissingComponent { .. })
    ));
    assert_eq!(top.couplings().len(), 3);
}

#[test]
fn duplicate_and_invalid_names() {
    let calls = Calls::default();
    let mut top = CoupledModel::new("top").unwrap();
    top.add_component(recorder("a", &calls)).unwrap();
    assert!(matches!(
        top.add_component(recorder("a", &calls)),
        Err(KernelError::DuplicateComponent { .. })
    ));
    assert!(matches!(top.add_input("1bad"), Err(KernelError::InvalidName(_))));
    top.add_input("x").unwrap();
    assert!(matches!(top.add_input("x"), Err(KernelError::DuplicatePort { .. })));
    // Same name is fine in the other direction.
    top.add_output("x").unwrap();
    assert!(CoupledModel::new("has space").is_err());
}

struct Holder {
    sigma: f64,
    seen: Rc<RefCell<Option<(String, f64)>>>,
    result: Rc<RefCell<Option<Result<(), String>>>>,
}

impl Atomic for Holder {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        let r = ctx.hold_in("SENDING", self.sigma);
        *self.result.borrow_mut() = Some(r.as_ref().map(|_| ()).map_err(|e| e.to_string()));
        *self.seen.borrow_mut() = Some((ctx.phase().to_string(), ctx.time_advance()));
        r
    }
    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.passivate();
        Ok(())
    }
    fn delta_ext(&mut self, _: &mut Context<'_>, _: f64, _: &Inputs<'_>) -> Result<(), KernelError> {
        Ok(())
    }
    fn output(&self, _: &Status<'_>, _: &mut Outputs<'_>) {}
}

fn hold(sigma: f64) -> (Result<(), KernelError>, Option<(String, f64)>, SimTime) {
    let seen = Rc::new(RefCell::new(None));
    let result = Rc::new(RefCell::new(None));
    let mut top = CoupledModel::new("top").unwrap();
    top.add_component(
        AtomicModel::new(
            "m",
            Holder {
                sigma,
                seen: seen.clone(),
                result: result.clone(),
            },
        )
        .unwrap(),
    )
    .unwrap();
    let mut coord = Coordinator::new(top).unwrap();
    let r = coord.initialize();
    let next = coord.next_time();
    let seen = seen.borrow().clone();
    (r, seen, next)
}

#[test]
fn hold_in_schedules_sigma() {
    let (r, seen, next) = hold(10.0);
    r.unwrap();
    assert_eq!(seen, Some(("SENDING".to_string(), 10.0)));
    assert_eq!(next, SimTime::new(10.0).unwrap());
}

#[test]
fn hold_in_passive_never_activates() {
    let (r, _, next) = hold(f64::INFINITY);
    r.unwrap();
    assert!(next.is_passive());
}

#[test]
fn hold_in_negative_is_invalid_schedule() {
    let (r, _, _) = hold(-1.0);
    assert!(matches!(r, Err(KernelError::InvalidSchedule { .. })));
}

#[test]
fn step_picks_minimum_and_only_that_model_is_imminent() {
    let calls = Calls::default();
    let mut top = CoupledModel::new("top").unwrap();
    top.add_component(generator("a", 3.0, &calls)).unwrap();
    top.add_component(generator("b", 5.0, &calls)).unwrap();
    let mut coord = Coordinator::new(top).unwrap();
    let report = coord.step().unwrap().unwrap();
    assert_eq!(report.time.value(), 3.0);
    assert_eq!(report.imminent, vec!["top.a".to_string()]);
}

#[test]
fn empty_model_runs_without_events() {
    let top = CoupledModel::new("empty").unwrap();
    let mut coord = Coordinator::new(top).unwrap();
    coord.run_until(100.0, vec![]).unwrap();
    assert!(coord.records().is_empty());
    assert!(coord.step().unwrap().is_none());
}

#[test]
fn generator_fires_three_times_by_35() {
    let calls = Calls::default();
    let mut top = CoupledModel::new("top").unwrap();
    top.add_component(generator("gen", 10.0, &calls)).unwrap();
    let mut coord = Coordinator::new(top).unwrap();
    coord.run_until(35.0, vec![]).unwrap();
    assert_eq!(*calls.borrow(), ["int@10.0", "int@20.0", "int@30.0"]);
}

#[test]
fn exogenous_event_wakes_passive_consumer() {
    let calls = Calls::default();
    let mut top = CoupledModel::new("top").unwrap();
    top.add_input("inject").unwrap();
    top.add_component(recorder("sink", &calls)).unwrap();
    top.connect("inject", "sink.in").unwrap();
    let mut coord = Coordinator::new(top).unwrap();
    coord
        .run_until(100.0, vec![Exogenous::new(5.0, "inject", json!("hello")).unwrap()])
        .unwrap();
    assert_eq!(*calls.borrow(), [r#"ext@5.0 e=5 [String("hello")]"#]);
}

#[test]
fn elapsed_is_time_since_last_transition() {
    let calls = Calls::default();
    let mut top = CoupledModel::new("top").unwrap();
    top.add_input("inject").unwrap();
    top.add_component(recorder("sink", &calls)).unwrap();
    top.connect("inject", "sink.in").unwrap();
    let mut coord = Coordinator::new(top).unwrap();
    let events = vec![
        Exogenous::new(1.5, "inject", 1).unwrap(),
        Exogenous::new(4.0, "inject", 2).unwrap(),
    ];
    coord.run_until(10.0, events).unwrap();
    assert_eq!(
        *calls.borrow(),
        ["ext@1.5 e=1.5 [Number(1)]", "ext@4.0 e=2.5 [Number(2)]"]
    );
}

#[test]
fn unsorted_exogenous_schedule_is_rejected() {
    let mut top = CoupledModel::new("top").unwrap();
    top.add_input("inject").unwrap();
    let mut coord = Coordinator::new(top).unwrap();
    let events = vec![
        Exogenous::new(5.0, "inject", 1).unwrap(),
        Exogenous::new(2.0, "inject", 2).unwrap(),
    ];
    assert!(matches!(
        coord.run_until(10.0, events),
        Err(KernelError::InputOrder { index: 1 })
    ));
}

#[test]
fn chains_through_hierarchy_reach_root_outputs() {
    let calls = Calls::default();
    let mut inner = CoupledModel::new("inner").unwrap();
    inner.add_output("out").unwrap();
    inner.add_component(generator("gen", 2.0, &calls)).unwrap();
    inner.connect("gen.out", "out").unwrap();

    let mut top = CoupledModel::new("top").unwrap();
    top.add_output("result").unwrap();
    top.add_component(inner).unwrap();
    top.add_component(recorder("sink", &calls)).unwrap();
    top.connect("inner.out", "sink.in").unwrap();
    top.connect("inner.out", "result").unwrap();

    let mut coord = Coordinator::new(top).unwrap();
    let report = coord.step().unwrap().unwrap();
    let targets: Vec<String> = report
        .deliveries
        .iter()
        .map(|d| format!("{}.{}", d.target.component, d.target.port))
        .collect();
    assert_eq!(targets, ["top.sink.in", "top.result"]);
    assert_eq!(report.deliveries[0].source.component, "top.inner.gen");
}

/// Emits on `out` with zero delay forever.
struct Echo;

impl Atomic for Echo {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.hold_in("fire", 1.0)
    }
    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.passivate();
        Ok(())
    }
    fn delta_ext(&mut self, ctx: &mut Context<'_>, _: f64, _: &Inputs<'_>) -> Result<(), KernelError> {
        ctx.hold_in("fire", 0.0)
    }
    fn output(&self, _: &Status<'_>, out: &mut Outputs<'_>) {
        out.send("out", true);
    }
}

#[test]
fn zero_delay_cycle_is_a_livelock() {
    let mut top = CoupledModel::new("loop").unwrap();
    for name in ["ping", "pong"] {
        top.add_component(
            AtomicModel::new(name, Echo)
                .unwrap()
                .with_input("in")
                .unwrap()
                .with_output("out")
                .unwrap(),
        )
        .unwrap();
    }
    top.connect("ping.out", "pong.in").unwrap();
    top.connect("pong.out", "ping.in").unwrap();
    let mut coord = Coordinator::new(top).unwrap();
    match coord.run_until(10.0, vec![]) {
        Err(KernelError::Livelock {
            time,
            components,
            rounds,
        }) => {
            assert_eq!(time, 1.0);
            assert_eq!(rounds, MAX_ROUNDS_PER_INSTANT + 1);
            assert!(components.iter().all(|c| c.starts_with("loop.")));
            assert!(!components.is_empty());
        }
        other => panic!("expected livelock, got {other:?}"),
    }
}

struct Impure {
    flips: std::cell::Cell<u32>,
}

impl Atomic for Impure {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.hold_in("x", 1.0)
    }
    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        ctx.passivate();
        Ok(())
    }
    fn delta_ext(&mut self, _: &mut Context<'_>, _: f64, _: &Inputs<'_>) -> Result<(), KernelError> {
        Ok(())
    }
    fn output(&self, _: &Status<'_>, out: &mut Outputs<'_>) {
        self.flips.set(self.flips.get() + 1);
        out.send("out", self.flips.get());
    }
}

#[test]
#[cfg(debug_assertions)]
fn impure_output_is_detected() {
    let mut top = CoupledModel::new("top").unwrap();
    top.add_component(
        AtomicModel::new(
            "bad",
            Impure {
                flips: Default::default(),
            },
        )
        .unwrap()
        .with_output("out")
        .unwrap(),
    )
    .unwrap();
    let mut coord = Coordinator::new(top).unwrap();
    assert!(matches!(coord.step(), Err(KernelError::ImpureOutput { .. })));
}

#[test]
fn undeclared_output_port_is_an_error() {
    struct Stray;
    impl Atomic for Stray {
        fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
            ctx.hold_in("x", 1.0)
        }
        fn delta_int(&mut self, _: &mut Context<'_>) -> Result<(), KernelError> {
            Ok(())
        }
        fn delta_ext(&mut self, _: &mut Context<'_>, _: f64, _: &Inputs<'_>) -> Result<(), KernelError> {
            Ok(())
        }
        fn output(&self, _: &Status<'_>, out: &mut Outputs<'_>) {
            out.send("nowhere", 1);
        }
    }
    let mut top = CoupledModel::new("top").unwrap();
    top.add_component(AtomicModel::new("s", Stray).unwrap()).unwrap();
    let mut coord = Coordinator::new(top).unwrap();
    assert!(matches!(coord.step(), Err(KernelError::UnknownOutputPort { .. })));
}

#[test]
fn exit_hooks_run_once_and_log() {
    struct Final;
    impl Atomic for Final {
        fn delta_int(&mut self, _: &mut Context<'_>) -> Result<(), KernelError> {
            Ok(())
        }
        fn delta_ext(&mut self, _: &mut Context<'_>, _: f64, _: &Inputs<'_>) -> Result<(), KernelError> {
            Ok(())
        }
        fn output(&self, _: &Status<'_>, _: &mut Outputs<'_>) {}
        fn exit(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
            ctx.log("summary", Payload::new());
            Ok(())
        }
    }
    let mut top = CoupledModel::new("top").unwrap();
    top.add_component(AtomicModel::new("f", Final).unwrap().with_entity("final"))
        .unwrap();
    let mut coord = Coordinator::new(top).unwrap();
    coord.run_until(7.0, vec![]).unwrap();
    coord.finish().unwrap();
    assert_eq!(coord.records().len(), 1);
    assert_eq!(coord.records()[0].time, 7.0);
    assert_eq!(coord.records()[0].entity, "final");
}
