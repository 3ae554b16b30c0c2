use devsgen_core::scenarios::barbershop::random_schedule;
use devsgen_core::scenarios::{simulate_records, ScenarioKind};
use devsgen_core::trace::TraceRecord;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(schedule: &str) -> Vec<TraceRecord> {
    simulate_records(ScenarioKind::Barbershop, &["--arrivals", "stdin"], Some(schedule)).unwrap()
}

fn count(records: &[TraceRecord], event: &str) -> usize {
    records.iter().filter(|r| r.is("reception", event)).count()
}

#[test]
fn nine_at_once_rejects_exactly_one() {
    let records = run("{\"time\": 0, \"count\": 9}\n");
    assert_eq!(count(&records, "rejection"), 1);
    assert_eq!(count(&records, "admitted"), 8);
}

#[test]
fn occupancy_never_exceeds_eight() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut saw_rejection = false;
    for _ in 0..1000 {
        let schedule = random_schedule(&mut rng, 12, 12, 30.0);
        let records = run(&schedule);
        let mut waiting = 0i64;
        for r in records.iter().filter(|r| r.entity == "reception") {
            match r.event.as_str() {
                "admitted" => waiting += 1,
                "dispatch" => waiting -= 1,
                _ => {}
            }
            assert!((0..=8).contains(&waiting), "{schedule}");
        }
        let arrivals = count(&records, "arrival");
        assert_eq!(arrivals, count(&records, "admitted") + count(&records, "rejection"));
        saw_rejection |= count(&records, "rejection") > 0;
    }
    assert!(saw_rejection);
}
