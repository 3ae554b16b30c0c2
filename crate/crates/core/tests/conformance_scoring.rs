use devsgen_core::conformance::{
    bundled_suite, conformance_score, rule_catalog, score_case, Catalog, Level, Rule, Violation,
};
use devsgen_core::scenarios::{simulate_records, ScenarioKind};
use proptest::prelude::*;

fn fixed(level: Level, pass: bool) -> Rule {
    Rule::new("fixed", level, "constant outcome", move |_| {
        if pass {
            Ok(())
        } else {
            Err(Violation::global("fails"))
        }
    })
}

fn catalog(comp: &[bool], sys: &[bool]) -> Catalog {
    Catalog {
        component: comp.iter().map(|&p| fixed(Level::Component, p)).collect(),
        system: sys.iter().map(|&p| fixed(Level::System, p)).collect(),
    }
}

fn outcomes() -> impl Strategy<Value = Vec<bool>> {
    proptest::collection::vec(any::<bool>(), 1..12)
}

proptest! {
    #[test]
    fn scores_are_bounded_and_zero_without_validity(comp in outcomes(), sys in outcomes()) {
        let c = score_case(&[], &catalog(&comp, &sys), 1).unwrap().c;
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert_eq!(score_case(&[], &catalog(&comp, &sys), 0).unwrap().c, 0.0);
    }

    #[test]
    fn a_failing_rule_never_raises_the_score(comp in outcomes(), sys in outcomes(), system_level in any::<bool>()) {
        let before = score_case(&[], &catalog(&comp, &sys), 1).unwrap().c;
        let (mut comp2, mut sys2) = (comp.clone(), sys.clone());
        if system_level { sys2.push(false) } else { comp2.push(false) }
        let after = score_case(&[], &catalog(&comp2, &sys2), 1).unwrap().c;
        prop_assert!(after <= before);
    }

    #[test]
    fn rule_order_is_irrelevant(comp in outcomes(), sys in outcomes(), seed in any::<u64>()) {
        let mut shuffled = (comp.clone(), sys.clone());
        let k = (seed as usize) % comp.len();
        shuffled.0.rotate_left(k);
        shuffled.1.reverse();
        let a = score_case(&[], &catalog(&comp, &sys), 1).unwrap().c;
        let b = score_case(&[], &catalog(&shuffled.0, &shuffled.1), 1).unwrap().c;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn score_matches_hand_formula(cp in 0usize..10, cf in 0usize..10, sp in 0usize..10, sf in 0usize..10) {
        prop_assume!(cp + cf > 0 && sp + sf > 0);
        let c = conformance_score(1, cp, cp + cf, sp, sp + sf).unwrap();
        let hand = (cp as f64 / (cp + cf) as f64 + sp as f64 / (sp + sf) as f64) / 2.0;
        prop_assert!((c - hand).abs() <= 1e-12);
    }
}

#[test]
fn documented_fixture() {
    let result = score_case(&[], &catalog(&[true, true, false, false], &[true, true, true]), 1).unwrap();
    assert_eq!(result.c, 0.75);
    assert_eq!(conformance_score(0, 4, 4, 3, 3).unwrap(), 0.0);
    assert!(conformance_score(1, 0, 0, 1, 1).is_err());
}

#[test]
fn bundled_suites_score_perfectly_in_process() {
    for kind in ScenarioKind::ALL {
        for case in bundled_suite(kind).cases {
            if case.id.starts_with("heavy") {
                continue;
            }
            let tokens = case.tokens();
            let args = kind.parse_args(&tokens).unwrap();
            let records = simulate_records(kind, &tokens, case.stdin.as_deref()).unwrap();
            let result = score_case(&records, &rule_catalog(kind, &args), 1).unwrap();
            assert_eq!(result.c, 1.0, "{kind}/{}: {:?}", case.id, result.diagnostics);
        }
    }
}

#[test]
fn diagnostics_point_inside_the_trace() {
    for kind in ScenarioKind::ALL {
        let suite = bundled_suite(kind);
        let case = suite.cases.iter().find(|c| c.id == "nominal-defaults").unwrap();
        let tokens = case.tokens();
        let args = kind.parse_args(&tokens).unwrap();
        let mut records = simulate_records(kind, &tokens, case.stdin.as_deref()).unwrap();
        let catalog = rule_catalog(kind, &args);
        // Perturb every tenth timestamp and drop a record to break several rules at once.
        for r in records.iter_mut().step_by(10) {
            r.time += 0.25;
        }
        records.remove(records.len() / 2);
        let result = score_case(&records, &catalog, 1).unwrap();
        assert!(result.c < 1.0, "{kind}");
        for d in &result.diagnostics {
            if let Some(i) = d.index {
                assert!(i < records.len(), "{kind}: {d}");
                assert!(d.entities.contains(&records[i].entity), "{kind}: {d}");
            }
        }
    }
}
