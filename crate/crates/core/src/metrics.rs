//! Per-trace metrics: effort, failures and frame-wise accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{ABNORMAL, COEXISTENCE, COOPERATION, NORMAL};
use crate::sim::push::PushOutcome;
use crate::sim::workspace::dist;
use crate::supervisor::{ActiveTree, Directive, Mode, SupervisorEvent, ThresholdConfig};
use crate::trace::{Trace, TraceEvent};

const UPPER: [&str; 4] = [COEXISTENCE, COOPERATION, NORMAL, ABNORMAL];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Accuracy {
    pub task: Option<f64>,
    pub interaction: Option<f64>,
    pub verification: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    /// s, time of the final push that completed the assembly, else trace end.
    pub completion_time: f64,
    pub completed: bool,
    /// m
    pub robot_path: f64,
    /// m
    pub human_path: f64,
    /// N, averaged over all frames.
    pub mean_force: f64,
    /// J, force times hand displacement during guidance.
    pub energy: f64,
    pub pushes: usize,
    pub failures: usize,
    /// Guided successes at regions that had failed before.
    pub recoveries: usize,
    pub assembled: usize,
    /// Regions whose latest push failed.
    pub unrecovered_failures: usize,
    pub cooperation_detections: usize,
    pub abnormal_reverts: usize,
    pub guidance_episodes: usize,
    /// Per-frame argmax against the labels, transit frames labelled prep.
    pub accuracy: Accuracy,
    /// Argmax committed only after persisting for the supervisor hold times.
    pub held_accuracy: Accuracy,
    /// m, closest true wrist to effector while avoiding.
    pub min_avoid_distance: Option<f64>,
}

fn step_len(events: &[TraceEvent], pick: impl Fn(&TraceEvent) -> Vec<f64>) -> f64 {
    events
        .windows(2)
        .filter(|w| w[1].frame == w[0].frame + 1)
        .map(|w| {
            let a = pick(&w[0]);
            let b = pick(&w[1]);
            a.iter()
                .zip(&b)
                .map(|(x, y)| (y - x) * (y - x))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, |acc, x| acc + x)
}

fn true_wrist(e: &TraceEvent) -> Vec<f64> {
    e.wrist_true
        .map(|p| p.to_vec())
        .unwrap_or_else(|| e.wrist.clone())
}

fn argmax_of<'a>(
    posterior: &'a BTreeMap<String, f64>,
    labels: impl Iterator<Item = &'a str>,
) -> Option<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for l in labels {
        if let Some(&p) = posterior.get(l) {
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((l, p));
            }
        }
    }
    best.map(|(l, _)| l)
}

/// Most likely task-level intention.
pub fn predicted_task(e: &TraceEvent) -> Option<&str> {
    argmax_of(
        &e.posterior,
        e.posterior
            .keys()
            .map(|k| k.as_str())
            .filter(|k| !UPPER.contains(k)),
    )
}

/// Interaction intention implied by the active tree and mode.
pub fn predicted_interaction(e: &TraceEvent) -> Option<&'static str> {
    if e.mode == Mode::CooperationGuidance {
        return Some(COOPERATION);
    }
    match e.active_tree {
        ActiveTree::It => match argmax_of(&e.posterior, [COEXISTENCE, COOPERATION].into_iter())? {
            COOPERATION => Some(COOPERATION),
            _ => Some(COEXISTENCE),
        },
        ActiveTree::Vt => match argmax_of(&e.posterior, [NORMAL, ABNORMAL].into_iter())? {
            NORMAL => Some(COOPERATION),
            _ => Some(COEXISTENCE),
        },
    }
}

/// Verification intention on every frame. While the IT tree is active its
/// upper level stands in: both trees share their goals, with Cooperation
/// tracking the same evidence as Normal and Coexistence as Abnormal.
pub fn predicted_verification(e: &TraceEvent) -> Option<&'static str> {
    if e.mode == Mode::CooperationGuidance {
        return Some(NORMAL);
    }
    match e.active_tree {
        ActiveTree::Vt => match argmax_of(&e.posterior, [NORMAL, ABNORMAL].into_iter())? {
            NORMAL => Some(NORMAL),
            _ => Some(ABNORMAL),
        },
        ActiveTree::It => match argmax_of(&e.posterior, [COEXISTENCE, COOPERATION].into_iter())? {
            COOPERATION => Some(NORMAL),
            _ => Some(ABNORMAL),
        },
    }
}

fn ratio(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Per-level predictions and labels, one entry per frame.
struct Series {
    pred: Vec<Option<String>>,
    truth: Vec<Option<String>>,
}

impl Series {
    fn raw(&self) -> Option<f64> {
        let mut hits = 0;
        let mut total = 0;
        for (p, t) in self.pred.iter().zip(&self.truth) {
            if let (Some(p), Some(t)) = (p, t) {
                total += 1;
                hits += usize::from(p == t);
            }
        }
        ratio(hits, total)
    }

    /// A prediction counts once it has been the argmax for more than `hold_frames`.
    fn held(&self, hold_frames: usize) -> Option<f64> {
        let mut committed: Option<&String> = None;
        let mut run: Option<(&String, usize)> = None;
        let mut hits = 0;
        let mut total = 0;
        for (p, t) in self.pred.iter().zip(&self.truth) {
            let Some(p) = p else {
                run = None;
                continue;
            };
            run = match run {
                Some((l, n)) if l == p => Some((l, n + 1)),
                _ => Some((p, 1)),
            };
            if let Some((l, n)) = run {
                if n > hold_frames {
                    committed = Some(l);
                }
            }
            if let Some(t) = t {
                total += 1;
                hits += usize::from(committed == Some(t));
            }
        }
        ratio(hits, total)
    }
}

fn accuracy_series(events: &[TraceEvent]) -> [Series; 3] {
    let truth = |f: fn(&crate::sim::human::GroundTruth) -> &String| -> Vec<Option<String>> {
        events
            .iter()
            .map(|e| e.truth.as_ref().map(|t| f(t).clone()))
            .collect()
    };
    let task = Series {
        pred: events
            .iter()
            .map(|e| predicted_task(e).map(str::to_owned))
            .collect(),
        truth: truth(|t| &t.task),
    };
    let interaction = Series {
        pred: events
            .iter()
            .map(|e| predicted_interaction(e).map(str::to_owned))
            .collect(),
        truth: truth(|t| &t.interaction),
    };
    let verification = Series {
        pred: events
            .iter()
            .map(|e| predicted_verification(e).map(str::to_owned))
            .collect(),
        truth: truth(|t| &t.verification),
    };
    [task, interaction, verification]
}

fn hold_frames(hold: f64, dt: f64) -> usize {
    (hold / dt + 1e-9).floor() as usize
}

pub fn compute_metrics(
    events: &[TraceEvent],
    regions: usize,
    thresholds: &ThresholdConfig,
    dt: f64,
) -> MetricsReport {
    let mut r = MetricsReport {
        frames: events.len(),
        ..Default::default()
    };
    if events.is_empty() {
        return r;
    }
    r.robot_path = step_len(events, |e| e.effector.clone());
    r.human_path = step_len(events, true_wrist);
    r.mean_force = events.iter().map(|e| e.force).sum::<f64>() / events.len() as f64;
    r.energy = events
        .windows(2)
        .filter(|w| w[1].frame == w[0].frame + 1 && w[1].mode == Mode::CooperationGuidance)
        .map(|w| {
            let a = true_wrist(&w[0]);
            let b = true_wrist(&w[1]);
            let d = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (y - x) * (y - x))
                .sum::<f64>()
                .sqrt();
            w[1].force * d
        })
        .fold(0.0, |acc, x| acc + x);

    let mut last: BTreeMap<usize, PushOutcome> = BTreeMap::new();
    let mut ever_failed: BTreeMap<usize, bool> = BTreeMap::new();
    let mut completed_at = None;
    for e in events {
        for ev in &e.supervisor_events {
            match ev {
                SupervisorEvent::CooperationDetected => r.cooperation_detections += 1,
                SupervisorEvent::AbnormalRevert => r.abnormal_reverts += 1,
                SupervisorEvent::Contact => r.guidance_episodes += 1,
                _ => {}
            }
        }
        let Some(push) = &e.push else { continue };
        r.pushes += 1;
        let (Some(region), Some(outcome)) = (push.region, push.outcome) else {
            continue;
        };
        match outcome {
            PushOutcome::Failure => {
                r.failures += 1;
                ever_failed.insert(region, true);
            }
            PushOutcome::Success => {
                if push.guided && ever_failed.get(&region).copied().unwrap_or(false) {
                    r.recoveries += 1;
                }
            }
        }
        last.insert(region, outcome);
        let assembled = last
            .values()
            .filter(|o| **o == PushOutcome::Success)
            .count();
        if assembled == regions && completed_at.is_none() {
            completed_at = Some(e.time);
        }
    }
    r.assembled = last
        .values()
        .filter(|o| **o == PushOutcome::Success)
        .count();
    r.unrecovered_failures = last
        .values()
        .filter(|o| **o == PushOutcome::Failure)
        .count();
    r.completed = completed_at.is_some();
    r.completion_time = completed_at.unwrap_or(events.last().map(|e| e.time).unwrap_or(0.0));

    let [task, interaction, verification] = accuracy_series(events);
    r.accuracy = Accuracy {
        task: task.raw(),
        interaction: interaction.raw(),
        verification: verification.raw(),
    };
    r.held_accuracy = Accuracy {
        task: task.held(hold_frames(thresholds.align_hold, dt)),
        interaction: interaction.held(hold_frames(thresholds.coop_hold, dt)),
        verification: verification.held(hold_frames(thresholds.abnormal_hold, dt)),
    };

    r.min_avoid_distance = events
        .iter()
        .filter(|e| {
            e.mode == Mode::Coexistence
                && matches!(e.directive, Directive::AvoidAndPush { .. })
                && e.push_force == 0.0
        })
        .map(|e| {
            let w = true_wrist(e);
            dist([w[0], w[1]], [e.effector[0], e.effector[1]])
        })
        .min_by(f64::total_cmp);
    r
}

/// Metrics using the run settings stored in the trace header, or defaults.
pub fn trace_metrics(trace: &Trace) -> MetricsReport {
    match trace.meta() {
        Some(m) => compute_metrics(
            &trace.events,
            m.config.workspace.regions.len(),
            &m.config.engine.thresholds,
            m.dt,
        ),
        None => compute_metrics(&trace.events, 4, &ThresholdConfig::default(), 1.0 / 30.0),
    }
}
