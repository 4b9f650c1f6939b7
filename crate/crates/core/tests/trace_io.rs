//! Trace persistence: round trip, schema checks, corrupt lines.

use hit_core::config::ScenarioConfig;
use hit_core::sim::scenario::run_scenario;
use hit_core::sim::scripts;
use hit_core::supervisor::SystemVariant;
use hit_core::trace::{read_trace, read_trace_from, write_trace, write_trace_to, TraceError};

fn temp_path(name: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("hit-{}-{name}", std::process::id()))
}

#[test]
fn thousand_event_trace_round_trips_through_a_file() {
    let cfg = ScenarioConfig::default();
    let mut trace = run_scenario(
        &cfg,
        &scripts::builtin("guided_recovery").unwrap(),
        SystemVariant::HitItvt,
        5,
    )
    .unwrap();
    trace.events.truncate(1000);
    assert_eq!(trace.events.len(), 1000);
    let path = temp_path("roundtrip.jsonl");
    write_trace(&trace, &path).unwrap();
    let back = read_trace(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(back, trace);
}

#[test]
fn truncated_last_line_names_the_line() {
    let cfg = ScenarioConfig::default();
    let mut trace = run_scenario(
        &cfg,
        &scripts::builtin("nominal").unwrap(),
        SystemVariant::HitIt,
        1,
    )
    .unwrap();
    trace.events.truncate(10);
    let mut buf = Vec::new();
    write_trace_to(&trace, &mut buf).unwrap();
    buf.truncate(buf.len() - 25);
    match read_trace_from(buf.as_slice()) {
        Err(TraceError::Corrupt { line, .. }) => assert_eq!(line, 11),
        other => panic!("expected a corrupt-line error, got {other:?}"),
    }
}

#[test]
fn newer_schema_version_is_rejected() {
    let text = "{\"schema\":\"hit-trace\",\"version\":2}\n{}\n";
    let err = read_trace_from(text.as_bytes()).unwrap_err();
    assert!(matches!(err, TraceError::Version { found: 2 }));
    assert!(err.to_string().contains("version 2"));
}

#[test]
fn missing_file_reports_the_path() {
    let err = read_trace(std::path::Path::new("/nonexistent/trace.jsonl")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/trace.jsonl"));
}
