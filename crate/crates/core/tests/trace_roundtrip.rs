use proptest::prelude::*;
use vlaj_core::synth::{generate_synthetic, Profile};
use vlaj_core::trace::{RunTrace, Task, TraceError};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn synthetic_traces_survive_a_round_trip(
        profile in prop::sample::select(Profile::ALL.to_vec()),
        task in prop::sample::select(Task::ALL.to_vec()),
        seed in 0u64..10_000,
    ) {
        let trace = generate_synthetic(profile, task, seed);
        trace.validate().unwrap();
        let text = trace.to_jsonl();
        let back = RunTrace::read(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(back.to_jsonl(), text);
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    let trace = generate_synthetic(Profile::Jittery, Task::PutIn, 3);
    trace.save(&path).unwrap();
    assert_eq!(RunTrace::load(&path).unwrap(), trace);
}

fn lines(trace: &RunTrace) -> Vec<String> {
    trace.to_jsonl().lines().map(str::to_string).collect()
}

#[test]
fn structural_errors_are_reported() {
    let trace = generate_synthetic(Profile::Smooth, Task::PickUp, 0);
    let l = lines(&trace);

    let no_header = l[1..].join("\n");
    assert!(matches!(RunTrace::read(no_header.as_bytes()), Err(TraceError::MissingHeader)));

    let mut gap = l.clone();
    gap.remove(3);
    assert!(matches!(
        RunTrace::read(gap.join("\n").as_bytes()),
        Err(TraceError::NonMonotone { .. })
    ));

    let mut torn = l.clone();
    let last = torn.len() - 1;
    let half = torn[last].len() / 2;
    torn[last].truncate(half);
    assert!(matches!(
        RunTrace::read(torn.join("\n").as_bytes()),
        Err(TraceError::Json { line, .. }) if line == l.len()
    ));

    let mut unknown = l;
    unknown.push(r#"{"type":"annotation"}"#.into());
    assert!(RunTrace::read(unknown.join("\n").as_bytes()).is_err());
}
