//! Interaction mode switching between the IT and VT trees.
//!
//! The supervisor consumes per-frame posteriors and the contact force and
//! decides the robot directive, tree switches and task queue events. Rules are
//! applied in a fixed priority each frame: force, verification, cooperation
//! detection, alignment, push planning. A verification revert that fires in
//! the same frame as contact wins over the contact.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

/// Slack on hold comparisons so that accumulated `n * dt` compares by frame count.
const HOLD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemVariant {
    /// Single-layer task filter, autonomous pushes only.
    CoexistenceBaseline,
    /// No inference; every push is hand guided.
    CooperationBaseline,
    /// IT tree without verification.
    HitIt,
    /// IT and VT trees with verification.
    #[default]
    HitItvt,
}

impl SystemVariant {
    pub const ALL: [SystemVariant; 4] = [
        SystemVariant::CoexistenceBaseline,
        SystemVariant::CooperationBaseline,
        SystemVariant::HitIt,
        SystemVariant::HitItvt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemVariant::CoexistenceBaseline => "coexistence_baseline",
            SystemVariant::CooperationBaseline => "cooperation_baseline",
            SystemVariant::HitIt => "hit_it",
            SystemVariant::HitItvt => "hit_itvt",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn tracks_intentions(self) -> bool {
        self != SystemVariant::CooperationBaseline
    }

    pub fn detects_cooperation(self) -> bool {
        matches!(self, SystemVariant::HitIt | SystemVariant::HitItvt)
    }

    pub fn verifies(self) -> bool {
        self == SystemVariant::HitItvt
    }

    pub fn pushes_autonomously(self) -> bool {
        self != SystemVariant::CooperationBaseline
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub align_prob: f64,
    /// s
    pub align_hold: f64,
    pub align_release: f64,
    pub coop_prob: f64,
    /// s
    pub coop_hold: f64,
    pub abnormal_prob: f64,
    /// s
    pub abnormal_hold: f64,
    /// N
    pub contact_force: f64,
    /// N
    pub release_force: f64,
    /// s
    pub release_hold: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            align_prob: 0.8,
            align_hold: 2.0,
            align_release: 0.25,
            coop_prob: 0.9,
            coop_hold: 0.5,
            abnormal_prob: 0.8,
            abnormal_hold: 1.0,
            contact_force: 20.0,
            release_force: 3.0,
            release_hold: 1.5,
        }
    }
}

impl ThresholdConfig {
    /// First offending field and the reason, if any.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let probs = [
            ("align_prob", self.align_prob),
            ("align_release", self.align_release),
            ("coop_prob", self.coop_prob),
            ("abnormal_prob", self.abnormal_prob),
        ];
        for (key, p) in probs {
            if !(p > 0.0 && p < 1.0) {
                return Err((key, format!("{p} is not in (0, 1)")));
            }
        }
        let nonneg = [
            ("align_hold", self.align_hold),
            ("coop_hold", self.coop_hold),
            ("abnormal_hold", self.abnormal_hold),
            ("release_hold", self.release_hold),
            ("contact_force", self.contact_force),
            ("release_force", self.release_force),
        ];
        for (key, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err((key, format!("{v} must be a finite value >= 0")));
            }
        }
        if self.release_force > self.contact_force {
            return Err(("release_force", "must not exceed contact_force".to_owned()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveTree {
    #[default]
    It,
    Vt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Coexistence,
    CooperationApproach,
    CooperationGuidance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Directive {
    /// Work autonomously with human avoidance; `None` returns home.
    AvoidAndPush {
        target: Option<usize>,
    },
    ApproachWrist,
    Admittance,
    PushAtCurrent,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeDirective {
    #[default]
    Keep,
    SwitchIt,
    SwitchVt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SupervisorEvent {
    Enqueued { region: usize },
    AlignmentComplete { region: usize },
    CooperationDetected,
    AbnormalRevert,
    Contact,
    Release,
    PushRecorded { region: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDecision {
    pub directive: Directive,
    pub tree: TreeDirective,
    pub events: Vec<SupervisorEvent>,
}

/// Continuous-hold accumulator; any violation resets it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HoldTimer {
    pub elapsed: f64,
}

impl HoldTimer {
    /// Advances by `dt` while `satisfied`; true once the hold is strictly exceeded.
    pub fn advance(&mut self, satisfied: bool, dt: f64, hold: f64) -> bool {
        if satisfied {
            self.elapsed += dt;
            self.elapsed > hold + HOLD_EPS
        } else {
            self.elapsed = 0.0;
            false
        }
    }

    pub fn reset(&mut self) {
        self.elapsed = 0.0;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeState {
    pub active_tree: ActiveTree,
    pub mode: Mode,
    pub align_candidate: Option<usize>,
    pub align_timer: HoldTimer,
    /// Set once the candidate's hold has fired, until the candidate changes.
    pub align_fired: bool,
    pub alignment_active: Option<usize>,
    pub task_queue: VecDeque<usize>,
    pub pushed: BTreeSet<usize>,
    pub paused: bool,
    pub coop_timer: HoldTimer,
    pub abnormal_timer: HoldTimer,
    pub release_timer: HoldTimer,
}

impl ModeState {
    fn reset_mode_timers(&mut self) {
        self.coop_timer.reset();
        self.abnormal_timer.reset();
        self.release_timer.reset();
    }
}

/// Task-level marginals as the supervisor sees them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPosterior {
    pub regions: Vec<f64>,
    pub prep: f64,
    pub failure_recovery: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSignals {
    /// Absent while tracking is paused or for variants without a filter.
    pub task: Option<TaskPosterior>,
    /// `P(Abnormal)` while the VT tree is active.
    pub abnormal: Option<f64>,
    /// N
    pub force: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Supervisor {
    pub thresholds: ThresholdConfig,
    pub variant: SystemVariant,
}

impl Supervisor {
    pub fn new(thresholds: ThresholdConfig, variant: SystemVariant) -> Self {
        Self {
            thresholds,
            variant,
        }
    }

    /// Alignment hysteresis over the task regions.
    pub fn update_alignment(
        &self,
        state: &mut ModeState,
        task: &TaskPosterior,
        dt: f64,
    ) -> Vec<SupervisorEvent> {
        let th = &self.thresholds;
        let mut events = Vec::new();
        if let Some(r) = state.alignment_active {
            if task.regions.get(r).copied().unwrap_or(0.0) < th.align_release {
                state.alignment_active = None;
                events.push(SupervisorEvent::AlignmentComplete { region: r });
            }
        }

        let best = crate::tree::argmax(&task.regions);
        let above = best.filter(|&r| task.regions[r] > th.align_prob);
        if above != state.align_candidate {
            state.align_candidate = above;
            state.align_timer.reset();
            state.align_fired = false;
        }
        let fired = state
            .align_timer
            .advance(above.is_some(), dt, th.align_hold);
        if let (true, false, Some(r)) = (fired, state.align_fired, above) {
            state.align_fired = true;
            if state.alignment_active != Some(r) {
                state.alignment_active = Some(r);
            }
            if !state.task_queue.contains(&r) && !state.pushed.contains(&r) {
                state.task_queue.push_back(r);
                events.push(SupervisorEvent::Enqueued { region: r });
            }
        }
        events
    }

    /// Next region to push: the oldest queued region not yet pushed.
    pub fn plan_push(state: &mut ModeState) -> Option<usize> {
        while let Some(&r) = state.task_queue.front() {
            if state.pushed.contains(&r) {
                state.task_queue.pop_front();
            } else {
                return Some(r);
            }
        }
        None
    }

    /// Marks a completed push, autonomous or guided.
    pub fn record_push(state: &mut ModeState, region: usize) -> SupervisorEvent {
        state.pushed.insert(region);
        state.task_queue.retain(|&r| r != region);
        SupervisorEvent::PushRecorded { region }
    }

    /// True when the failure-recovery hold fires.
    pub fn detect_cooperation(&self, state: &mut ModeState, p_recovery: f64, dt: f64) -> bool {
        if state.active_tree != ActiveTree::It || state.mode != Mode::Coexistence {
            return false;
        }
        let th = &self.thresholds;
        state
            .coop_timer
            .advance(p_recovery > th.coop_prob, dt, th.coop_hold)
    }

    /// True when the Abnormal hold fires.
    pub fn verify(&self, state: &mut ModeState, p_abnormal: f64, dt: f64) -> bool {
        if state.active_tree != ActiveTree::Vt || state.mode != Mode::CooperationApproach {
            return false;
        }
        let th = &self.thresholds;
        state
            .abnormal_timer
            .advance(p_abnormal > th.abnormal_prob, dt, th.abnormal_hold)
    }

    fn contact(&self, force: f64) -> bool {
        force > self.thresholds.contact_force
    }

    /// Release hold during guidance; true when the release push should fire.
    pub fn release(&self, state: &mut ModeState, force: f64, dt: f64) -> bool {
        let th = &self.thresholds;
        state
            .release_timer
            .advance(force < th.release_force, dt, th.release_hold)
    }

    fn enter_guidance(state: &mut ModeState) -> ModeDecision {
        let tree = if state.active_tree == ActiveTree::Vt {
            TreeDirective::SwitchIt
        } else {
            TreeDirective::Keep
        };
        state.active_tree = ActiveTree::It;
        state.mode = Mode::CooperationGuidance;
        state.paused = true;
        state.reset_mode_timers();
        ModeDecision {
            directive: Directive::Admittance,
            tree,
            events: vec![SupervisorEvent::Contact],
        }
    }

    /// One frame of the switching logic, mutating `state`.
    pub fn step(&self, state: &mut ModeState, signals: &FrameSignals) -> ModeDecision {
        let dt = signals.dt;
        let mut events = Vec::new();
        let mut tree = TreeDirective::Keep;

        match state.mode {
            Mode::CooperationGuidance => {
                if self.release(state, signals.force, dt) {
                    state.mode = Mode::Coexistence;
                    state.paused = false;
                    state.reset_mode_timers();
                    if state.active_tree != ActiveTree::It {
                        state.active_tree = ActiveTree::It;
                        tree = TreeDirective::SwitchIt;
                    }
                    return ModeDecision {
                        directive: Directive::PushAtCurrent,
                        tree,
                        events: vec![SupervisorEvent::Release],
                    };
                }
                return ModeDecision {
                    directive: Directive::Admittance,
                    tree,
                    events,
                };
            }
            Mode::CooperationApproach => {
                let latched = self.variant.verifies()
                    && signals.abnormal.is_some_and(|p| self.verify(state, p, dt));
                if latched {
                    state.mode = Mode::Coexistence;
                    state.active_tree = ActiveTree::It;
                    state.reset_mode_timers();
                    tree = TreeDirective::SwitchIt;
                    events.push(SupervisorEvent::AbnormalRevert);
                } else if self.contact(signals.force) {
                    let mut d = Self::enter_guidance(state);
                    d.events.splice(0..0, events);
                    return d;
                } else {
                    if let Some(task) = &signals.task {
                        events.extend(self.update_alignment(state, task, dt));
                    }
                    return ModeDecision {
                        directive: Directive::ApproachWrist,
                        tree,
                        events,
                    };
                }
            }
            Mode::Coexistence => {
                if self.variant == SystemVariant::CooperationBaseline {
                    if self.contact(signals.force) {
                        return Self::enter_guidance(state);
                    }
                    return ModeDecision {
                        directive: Directive::Idle,
                        tree,
                        events,
                    };
                }
            }
        }

        // Coexistence from here on (possibly just reverted).
        if let Some(task) = &signals.task {
            if self.variant.detects_cooperation()
                && tree == TreeDirective::Keep
                && self.detect_cooperation(state, task.failure_recovery, dt)
            {
                state.mode = Mode::CooperationApproach;
                state.reset_mode_timers();
                if self.variant.verifies() {
                    state.active_tree = ActiveTree::Vt;
                    tree = TreeDirective::SwitchVt;
                }
                events.push(SupervisorEvent::CooperationDetected);
                events.extend(self.update_alignment(state, task, dt));
                return ModeDecision {
                    directive: Directive::ApproachWrist,
                    tree,
                    events,
                };
            }
            events.extend(self.update_alignment(state, task, dt));
        }
        let target = Self::plan_push(state);
        ModeDecision {
            directive: Directive::AvoidAndPush { target },
            tree,
            events,
        }
    }

    /// Pure form of [`Supervisor::step`].
    pub fn supervise(
        &self,
        state: &ModeState,
        signals: &FrameSignals,
    ) -> (ModeDecision, ModeState) {
        let mut next = state.clone();
        let decision = self.step(&mut next, signals);
        (decision, next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 1.0 / 30.0;

    fn task(regions: [f64; 4], fr: f64) -> TaskPosterior {
        let prep = 1.0 - regions.iter().sum::<f64>() - fr;
        TaskPosterior {
            regions: regions.to_vec(),
            prep,
            failure_recovery: fr,
        }
    }

    fn signals(t: TaskPosterior) -> FrameSignals {
        FrameSignals {
            task: Some(t),
            abnormal: None,
            force: 0.0,
            dt: DT,
        }
    }

    #[test]
    fn hold_timer_frame_boundaries() {
        for (hold, frames) in [(2.0, 61), (0.5, 16), (1.0, 31), (1.5, 46)] {
            let mut t = HoldTimer::default();
            let fired_at = (1..=100).find(|_| t.advance(true, DT, hold)).unwrap();
            assert_eq!(fired_at, frames, "hold {hold}");
        }
    }

    #[test]
    fn plan_push_fifo_and_once() {
        let mut s = ModeState::default();
        s.task_queue.extend([1, 3]);
        assert_eq!(Supervisor::plan_push(&mut s), Some(1));
        Supervisor::record_push(&mut s, 1);
        assert_eq!(Supervisor::plan_push(&mut s), Some(3));

        let mut s = ModeState::default();
        s.task_queue.push_back(1);
        s.pushed.insert(1);
        assert_eq!(Supervisor::plan_push(&mut s), None);
        assert_eq!(Supervisor::plan_push(&mut ModeState::default()), None);
    }

    #[test]
    fn idle_start_avoids_without_target() {
        let sup = Supervisor::default();
        let mut s = ModeState::default();
        let d = sup.step(&mut s, &signals(task([0.1; 4], 0.05)));
        assert_eq!(d.directive, Directive::AvoidAndPush { target: None });
        assert_eq!(s.mode, Mode::Coexistence);
    }

    #[test]
    fn validate_rejects_bad_values() {
        let mut th = ThresholdConfig::default();
        assert!(th.validate().is_ok());
        th.coop_prob = 1.0;
        assert_eq!(th.validate().unwrap_err().0, "coop_prob");
        let th = ThresholdConfig {
            release_hold: -1.0,
            ..Default::default()
        };
        assert_eq!(th.validate().unwrap_err().0, "release_hold");
    }

    #[test]
    fn variant_names_round_trip() {
        for v in SystemVariant::ALL {
            assert_eq!(SystemVariant::from_name(v.name()), Some(v));
        }
    }
}
