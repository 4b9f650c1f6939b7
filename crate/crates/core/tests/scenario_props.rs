//! Closed-loop runs: determinism and physical invariants.

use hit_core::config::ScenarioConfig;
use hit_core::metrics::trace_metrics;
use hit_core::sim::scenario::run_scenario;
use hit_core::sim::scripts;
use hit_core::supervisor::SystemVariant;
use hit_core::trace::Trace;
use proptest::prelude::*;

fn run(script: &str, variant: SystemVariant, seed: u64) -> Trace {
    let cfg = ScenarioConfig::default();
    run_scenario(&cfg, &scripts::builtin(script).unwrap(), variant, seed).unwrap()
}

fn script_name() -> impl Strategy<Value = String> {
    prop::sample::select(
        scripts::all()
            .into_iter()
            .map(|s| s.name)
            .collect::<Vec<_>>(),
    )
}

fn variant() -> impl Strategy<Value = SystemVariant> {
    prop::sample::select(SystemVariant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn same_seed_same_trace(script in script_name(), v in variant(), seed in 0u64..1000) {
        prop_assert_eq!(run(&script, v, seed), run(&script, v, seed));
    }

    #[test]
    fn run_invariants(script in script_name(), v in variant(), seed in 0u64..1000) {
        let trace = run(&script, v, seed);
        let cfg = ScenarioConfig::default();
        let regions = cfg.workspace.regions.len();
        for w in trace.events.windows(2) {
            prop_assert_eq!(w[1].frame, w[0].frame + 1);
        }
        let upper = ["Coexistence", "Cooperation", "Normal", "Abnormal"];
        for e in &trace.events {
            let groups = [
                e.posterior.iter().filter(|(k, _)| upper[..2].contains(&k.as_str())).map(|(_, p)| p).sum::<f64>(),
                e.posterior.iter().filter(|(k, _)| upper[2..].contains(&k.as_str())).map(|(_, p)| p).sum::<f64>(),
                e.posterior.iter().filter(|(k, _)| !upper.contains(&k.as_str())).map(|(_, p)| p).sum::<f64>(),
            ];
            for s in groups {
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-9, "frame {} level sum {}", e.frame, s);
            }
        }
        let m = trace_metrics(&trace);
        prop_assert!(m.assembled + m.unrecovered_failures <= regions);
        if m.completed {
            prop_assert_eq!(m.assembled, regions);
        }
        if let Some(d) = m.min_avoid_distance {
            prop_assert!(d >= cfg.robot.safety_radius, "min avoid distance {}", d);
        }
    }
}

#[test]
fn hit_runs_account_for_every_region() {
    for script in [
        "nominal",
        "guided_recovery",
        "double_failure",
        "interleaved",
    ] {
        for seed in 0..3 {
            let m = trace_metrics(&run(script, SystemVariant::HitItvt, seed));
            assert!(m.completed, "{script} seed {seed}: {m:?}");
            assert_eq!(
                m.assembled + m.unrecovered_failures,
                4,
                "{script} seed {seed}"
            );
        }
    }
}
