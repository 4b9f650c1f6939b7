//! Re-running the engine over a recorded observation stream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::engine::{Engine, EngineError};
use crate::supervisor::SystemVariant;
use crate::trace::Trace;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trace has no run metadata; pass a config and variant")]
    MissingMeta,
    #[error("frame {frame}: {source}")]
    Engine {
        frame: u64,
        #[source]
        source: EngineError,
    },
}

/// First frame where the replayed output differs from the recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub frame: u64,
    /// Which output differed: `posterior`, `mode`, `active_tree`, `directive`, `events` or `queue`.
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub frames: usize,
    pub posterior_mismatches: usize,
    pub mode_mismatches: usize,
    pub decision_mismatches: usize,
    /// Largest absolute difference over all posterior entries.
    pub max_posterior_diff: f64,
    pub first_divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.first_divergence.is_none()
    }
}

fn note(frame: u64, field: &str, report: &mut ReplayReport) {
    if report.first_divergence.is_none() {
        report.first_divergence = Some(Divergence {
            frame,
            field: field.to_owned(),
        });
    }
}

/// Replays with the config and variant stored in the trace header.
pub fn replay_trace(trace: &Trace) -> Result<ReplayReport, ReplayError> {
    let meta = trace.meta().ok_or(ReplayError::MissingMeta)?;
    replay_with(trace, &meta.config, meta.variant)
}

/// Feeds every recorded engine input through a fresh engine and compares
/// posteriors, modes and decisions bit for bit.
pub fn replay_with(
    trace: &Trace,
    config: &ScenarioConfig,
    variant: SystemVariant,
) -> Result<ReplayReport, ReplayError> {
    let mut engine = Engine::new(&config.engine, &config.workspace, variant)
        .map_err(|source| ReplayError::Engine { frame: 0, source })?;
    let mut report = ReplayReport {
        frames: trace.events.len(),
        posterior_mismatches: 0,
        mode_mismatches: 0,
        decision_mismatches: 0,
        max_posterior_diff: 0.0,
        first_divergence: None,
    };
    for ev in &trace.events {
        let out = engine
            .step(&ev.input())
            .map_err(|source| ReplayError::Engine {
                frame: ev.frame,
                source,
            })?;

        if out.posterior != ev.posterior {
            report.posterior_mismatches += 1;
            note(ev.frame, "posterior", &mut report);
        }
        for (label, p) in &out.posterior {
            let q = ev.posterior.get(label).copied().unwrap_or(f64::NAN);
            let d = (p - q).abs();
            if d.is_nan() || d > report.max_posterior_diff {
                report.max_posterior_diff = if d.is_nan() { f64::INFINITY } else { d };
            }
        }
        if out.mode != ev.mode {
            report.mode_mismatches += 1;
            note(ev.frame, "mode", &mut report);
        }
        if out.active_tree != ev.active_tree {
            report.mode_mismatches += 1;
            note(ev.frame, "active_tree", &mut report);
        }
        let checks = [
            (out.decision.directive != ev.directive, "directive"),
            (out.decision.events != ev.supervisor_events, "events"),
            (out.queue != ev.queue || out.pushed != ev.pushed, "queue"),
        ];
        let mut differs = false;
        for (bad, field) in checks {
            if bad {
                differs = true;
                note(ev.frame, field, &mut report);
            }
        }
        if differs {
            report.decision_mismatches += 1;
        }
    }
    Ok(report)
}
