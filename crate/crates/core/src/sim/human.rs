//! Scripted, mildly reactive human hand.
//!
//! A script is a list of high-level steps. Steps that involve the robot look at
//! what the robot is visibly doing (approaching, held, pushing) and adapt, so
//! the same script runs under every system variant. Each frame yields the true
//! wrist position, the grab flag and ground-truth intention labels.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::push::Dislodge;
use super::workspace::{add, advance, dist, norm, scale, sub, Point, WorkspaceConfig};
use crate::engine::{
    region_label, ABNORMAL, COEXISTENCE, COOPERATION, FAILURE_RECOVERY, NORMAL, PREP,
};
use crate::supervisor::{Directive, SystemVariant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Region(usize),
    Prep,
    Point(Point),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    /// Fetch a part from the prep area.
    Pick {
        dwell: f64,
    },
    /// Carry a part to a region and align it.
    Align {
        region: usize,
        dwell: f64,
    },
    /// Hand-guide the robot onto a region and let go.
    Guide {
        region: usize,
    },
    /// Realign and guide every failed region, repeating while failures remain.
    RecoverFailures,
    /// Reach for the robot, then change one's mind and withdraw.
    FalseReach {
        linger: f64,
        withdraw_to: Target,
        dwell: f64,
    },
    /// Pass slowly beside the effector on the way to a region, then align there.
    PassNear {
        region: usize,
        clearance: f64,
        linger: f64,
        dwell: f64,
    },
    Wait {
        secs: f64,
    },
    MoveTo {
        point: Point,
    },
    /// Rest at the prep area until no aligned part awaits a push.
    WaitForRobot {
        timeout: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanScript {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub start: Point,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub dislodge: Vec<Dislodge>,
    /// Overrides the injector's push noise radius when set.
    #[serde(default)]
    pub push_noise: Option<f64>,
    /// s
    pub max_duration: f64,
    /// Scripts exercising a false cooperation detection.
    #[serde(default)]
    pub abnormal: bool,
}

impl HumanScript {
    pub fn validate(&self, regions: usize) -> Result<(), (String, String)> {
        if !(self.max_duration > 0.0) {
            return Err(("max_duration".into(), "must be positive".into()));
        }
        let check_region = |i: usize, r: usize| -> Result<(), (String, String)> {
            if r >= regions {
                Err((format!("steps[{i}].region"), format!("no region {r}")))
            } else {
                Ok(())
            }
        };
        for (i, s) in self.steps.iter().enumerate() {
            match s {
                Step::Align { region, dwell } => {
                    check_region(i, *region)?;
                    if *dwell < 0.0 {
                        return Err((format!("steps[{i}].dwell"), "must be >= 0".into()));
                    }
                }
                Step::Guide { region } | Step::PassNear { region, .. } => check_region(i, *region)?,
                Step::FalseReach {
                    withdraw_to: Target::Region(r),
                    ..
                } => check_region(i, *r)?,
                Step::Pick { dwell } | Step::Wait { secs: dwell } if *dwell < 0.0 => {
                    return Err((format!("steps[{i}]"), "durations must be >= 0".into()));
                }
                _ => {}
            }
        }
        for (i, d) in self.dislodge.iter().enumerate() {
            if d.region >= regions {
                return Err((
                    format!("dislodge[{i}].region"),
                    format!("no region {}", d.region),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanParams {
    /// m/s
    pub travel_speed: f64,
    /// m/s, careful motion close to the robot.
    pub creep_speed: f64,
    /// m/s, while dragging the effector.
    pub drag_speed: f64,
    /// m, where the hand pauses when reaching for the effector.
    pub hover_distance: f64,
    /// m, the hand can grab the effector within this distance.
    pub contact_radius: f64,
    /// m, an unwanted approach this close gets pushed away.
    pub counteract_distance: f64,
    /// m, how far an unwanted robot is shoved.
    pub shove_distance: f64,
    /// s, waiting for a robot that never approaches.
    pub patience: f64,
    /// s, a guidance attempt is abandoned after this long.
    pub give_up_after: f64,
    /// Recovery rounds before the human stops retrying.
    pub max_recovery_rounds: usize,
}

impl Default for HumanParams {
    fn default() -> Self {
        Self {
            travel_speed: 0.6,
            creep_speed: 0.1,
            drag_speed: 0.3,
            hover_distance: 0.12,
            contact_radius: 0.06,
            counteract_distance: 0.08,
            shove_distance: 0.25,
            patience: 2.0,
            give_up_after: 12.0,
            max_recovery_rounds: 3,
        }
    }
}

impl HumanParams {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = [
            ("travel_speed", self.travel_speed),
            ("creep_speed", self.creep_speed),
            ("drag_speed", self.drag_speed),
            ("hover_distance", self.hover_distance),
            ("contact_radius", self.contact_radius),
            ("give_up_after", self.give_up_after),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err((k, format!("{v} must be positive")));
            }
        }
        if self.contact_radius >= self.hover_distance {
            return Err(("contact_radius", "must be below hover_distance".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionStatus {
    Empty,
    Aligned,
    Assembled,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskIntent {
    Region(usize),
    Prep,
    FailureRecovery,
}

impl TaskIntent {
    pub fn label(self) -> String {
        match self {
            TaskIntent::Region(r) => region_label(r),
            TaskIntent::Prep => PREP.to_owned(),
            TaskIntent::FailureRecovery => FAILURE_RECOVERY.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub task: String,
    pub interaction: String,
    pub verification: String,
    /// Moving between locations; labeled as prep.
    pub transit: bool,
}

impl GroundTruth {
    fn new(task: TaskIntent, cooperate: bool, transit: bool) -> Self {
        let task = if transit { TaskIntent::Prep } else { task };
        Self {
            task: task.label(),
            interaction: if cooperate { COOPERATION } else { COEXISTENCE }.to_owned(),
            verification: if cooperate { NORMAL } else { ABNORMAL }.to_owned(),
            transit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum HumanEvent {
    StepStarted {
        index: usize,
    },
    Aligned {
        region: usize,
    },
    /// The hand turns away from the robot it had been reaching for or passing.
    Diverged,
    Grabbed,
    Released,
    GaveUp,
}

/// What the human can see of the world.
#[derive(Debug, Clone, Copy)]
pub struct WorldView<'a> {
    pub time: f64,
    pub effector: Point,
    pub robot_behavior: Directive,
    pub robot_pushing: bool,
    pub regions: &'a [RegionStatus],
    pub workspace: &'a WorkspaceConfig,
}

impl WorldView<'_> {
    fn approaching(&self) -> bool {
        self.robot_behavior == Directive::ApproachWrist
    }

    fn held(&self) -> bool {
        self.robot_behavior == Directive::Admittance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanAction {
    pub position: Point,
    pub grabbed: bool,
    pub truth: GroundTruth,
    pub events: Vec<HumanEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Travel,
    Dwell,
    Reach,
    Hover,
    Grab,
    Drag(Point),
    Withdraw,
    Pass,
    Done,
}

#[derive(Debug, Clone)]
struct Active {
    step: Step,
    index: usize,
    phase: Phase,
    started: f64,
    phase_started: f64,
    /// When the robot was first seen approaching during this step.
    approach_seen: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Counter {
    Grab { since: f64 },
    Shove { to: Point },
}

#[derive(Debug, Clone)]
pub struct HumanAgent {
    params: HumanParams,
    variant: SystemVariant,
    plan: VecDeque<(usize, Step)>,
    active: Option<Active>,
    position: Point,
    grabbed: bool,
    recovery_rounds: usize,
    counter: Option<Counter>,
    /// Set after a shove moved the hand off its step location.
    displaced: bool,
    last_task: TaskIntent,
}

impl HumanAgent {
    pub fn new(script: &HumanScript, params: HumanParams, variant: SystemVariant) -> Self {
        Self {
            params,
            variant,
            plan: script.steps.iter().cloned().enumerate().collect(),
            active: None,
            position: script.start,
            grabbed: false,
            recovery_rounds: 0,
            counter: None,
            displaced: false,
            last_task: TaskIntent::Prep,
        }
    }

    pub fn position(&self) -> Point {
        self.position
    }

    pub fn is_done(&self) -> bool {
        self.active.is_none() && self.plan.is_empty() && self.counter.is_none()
    }

    fn wants_cooperation(&self) -> bool {
        match &self.active {
            Some(a) => match a.step {
                Step::Guide { .. } => matches!(
                    a.phase,
                    Phase::Reach | Phase::Hover | Phase::Grab | Phase::Drag(_)
                ),
                Step::FalseReach { .. } => matches!(a.phase, Phase::Reach | Phase::Hover),
                _ => false,
            },
            None => false,
        }
    }

    fn set_phase(a: &mut Active, phase: Phase, t: f64) {
        a.phase = phase;
        a.phase_started = t;
    }

    fn expand_recovery(&mut self, view: &WorldView, index: usize) {
        if !self.variant.detects_cooperation() && self.variant != SystemVariant::CooperationBaseline
        {
            return;
        }
        if self.recovery_rounds >= self.params.max_recovery_rounds {
            return;
        }
        let failed: Vec<usize> = view
            .regions
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == RegionStatus::Failed)
            .map(|(i, _)| i)
            .collect();
        if failed.is_empty() {
            return;
        }
        self.recovery_rounds += 1;
        let mut steps = Vec::new();
        for r in failed {
            steps.push(Step::Pick { dwell: 0.8 });
            steps.push(Step::Align {
                region: r,
                dwell: 2.5,
            });
            if self.variant != SystemVariant::CooperationBaseline {
                steps.push(Step::Guide { region: r });
            }
            steps.push(Step::WaitForRobot { timeout: 6.0 });
        }
        steps.push(Step::RecoverFailures);
        for s in steps.into_iter().rev() {
            self.plan.push_front((index, s));
        }
    }

    /// Without autonomous pushing every aligned part is guided by hand.
    fn guide_after_align(&mut self, index: usize, region: usize) {
        if self.variant == SystemVariant::CooperationBaseline {
            self.plan
                .push_front((index, Step::WaitForRobot { timeout: 6.0 }));
            self.plan.push_front((index, Step::Guide { region }));
        }
    }

    /// Handles an unwanted approach; returns true while it owns the hand.
    fn counteract(&mut self, view: &WorldView, dt: f64, events: &mut Vec<HumanEvent>) -> bool {
        let p = &self.params;
        match self.counter {
            None => {
                let trigger = view.approaching()
                    && !self.wants_cooperation()
                    && dist(self.position, view.effector) < p.counteract_distance;
                if !trigger {
                    return false;
                }
                self.counter = Some(Counter::Grab { since: view.time });
                self.grabbed = true;
                events.push(HumanEvent::Grabbed);
                true
            }
            Some(Counter::Grab { since }) => {
                if view.held() {
                    let away = sub(view.workspace.home, view.effector);
                    let n = norm(away).max(1e-9);
                    let to = add(self.position, scale(away, p.shove_distance / n));
                    self.counter = Some(Counter::Shove { to });
                } else if view.time - since > 1.0 {
                    self.grabbed = false;
                    self.counter = None;
                    events.push(HumanEvent::Released);
                }
                true
            }
            Some(Counter::Shove { to }) => {
                let (next, arrived) = advance(self.position, to, p.drag_speed * dt);
                self.position = next;
                if arrived {
                    self.grabbed = false;
                    self.counter = None;
                    self.displaced = true;
                    events.push(HumanEvent::Released);
                }
                true
            }
        }
    }

    /// Advances the hand by one frame.
    pub fn act(&mut self, view: &WorldView, dt: f64) -> HumanAction {
        let mut events = Vec::new();
        if self.counteract(view, dt, &mut events) {
            let truth = GroundTruth::new(self.last_task, false, false);
            return HumanAction {
                position: self.position,
                grabbed: self.grabbed,
                truth,
                events,
            };
        }

        // Pull the next step if idle. Steps that finish immediately are skipped
        // within the same frame.
        let mut guard = 0;
        let truth = loop {
            guard += 1;
            if self.active.is_none() {
                match self.plan.pop_front() {
                    Some((index, step)) => {
                        events.push(HumanEvent::StepStarted { index });
                        let phase = match step {
                            Step::Guide { .. } | Step::FalseReach { .. } => Phase::Reach,
                            _ => Phase::Travel,
                        };
                        self.active = Some(Active {
                            step,
                            index,
                            phase,
                            started: view.time,
                            phase_started: view.time,
                            approach_seen: None,
                        });
                    }
                    None => break GroundTruth::new(self.last_task, false, false),
                }
            }
            let out = self.advance_step(view, dt, &mut events);
            match out {
                Some(truth) => break truth,
                None if guard > 64 => break GroundTruth::new(self.last_task, false, false),
                None => continue,
            }
        };
        if !truth.transit {
            if let Some(t) = parse_task(&truth.task) {
                self.last_task = t;
            }
        }
        HumanAction {
            position: self.position,
            grabbed: self.grabbed,
            truth,
            events,
        }
    }

    fn travel(&mut self, to: Point, speed: f64, dt: f64) -> bool {
        let (next, arrived) = advance(self.position, to, speed * dt);
        self.position = next;
        arrived
    }

    /// Runs the active step for this frame. `None` means it finished without
    /// consuming the frame.
    fn advance_step(
        &mut self,
        view: &WorldView,
        dt: f64,
        events: &mut Vec<HumanEvent>,
    ) -> Option<GroundTruth> {
        let mut a = self.active.take().expect("active step");
        let t = view.time;
        let p = self.params.clone();
        let ws = view.workspace;
        if view.approaching() && a.approach_seen.is_none() {
            a.approach_seen = Some(t);
        }
        if std::mem::take(&mut self.displaced) && a.phase == Phase::Dwell {
            let back = match a.step {
                Step::FalseReach { .. } | Step::PassNear { .. } => Phase::Withdraw,
                _ => Phase::Travel,
            };
            Self::set_phase(&mut a, back, t);
        }

        let truth = match a.step.clone() {
            Step::Pick { dwell } => match a.phase {
                Phase::Travel => {
                    if self.travel(ws.prep.center, p.travel_speed, dt) {
                        Self::set_phase(&mut a, Phase::Dwell, t);
                    }
                    Some(GroundTruth::new(TaskIntent::Prep, false, true))
                }
                _ => {
                    if t - a.phase_started >= dwell {
                        None
                    } else {
                        Some(GroundTruth::new(TaskIntent::Prep, false, false))
                    }
                }
            },
            Step::Align { region, dwell } => match a.phase {
                Phase::Travel => {
                    if self.travel(ws.regions[region].center, p.travel_speed, dt) {
                        Self::set_phase(&mut a, Phase::Dwell, t);
                    }
                    Some(GroundTruth::new(TaskIntent::Region(region), false, true))
                }
                _ => {
                    if t - a.phase_started >= dwell {
                        events.push(HumanEvent::Aligned { region });
                        self.guide_after_align(a.index, region);
                        None
                    } else {
                        Some(GroundTruth::new(TaskIntent::Region(region), false, false))
                    }
                }
            },
            Step::Guide { region } => {
                let coop = GroundTruth::new(TaskIntent::FailureRecovery, true, false);
                if t - a.started > p.give_up_after && !matches!(a.phase, Phase::Drag(_)) {
                    self.grabbed = false;
                    events.push(HumanEvent::GaveUp);
                    None
                } else {
                    match a.phase {
                        Phase::Reach => {
                            let d = dist(self.position, view.effector);
                            if d <= p.hover_distance + 1e-6 {
                                Self::set_phase(&mut a, Phase::Hover, t);
                            } else {
                                let step = (p.travel_speed * dt).min(d - p.hover_distance);
                                self.travel(view.effector, step / dt, dt);
                            }
                            Some(coop)
                        }
                        Phase::Hover => {
                            let d = dist(self.position, view.effector);
                            if d <= p.contact_radius {
                                self.grabbed = true;
                                events.push(HumanEvent::Grabbed);
                                Self::set_phase(&mut a, Phase::Grab, t);
                            } else if !view.approaching() {
                                let step = (p.creep_speed * dt).min(d - p.contact_radius * 0.5);
                                self.travel(view.effector, step / dt, dt);
                            }
                            Some(coop)
                        }
                        Phase::Grab => {
                            if view.held() {
                                let offset = sub(self.position, view.effector);
                                let to = add(ws.regions[region].center, offset);
                                Self::set_phase(&mut a, Phase::Drag(to), t);
                            } else if t - a.phase_started > 1.0 {
                                self.grabbed = false;
                                events.push(HumanEvent::Released);
                                Self::set_phase(&mut a, Phase::Hover, t);
                            }
                            Some(coop)
                        }
                        Phase::Drag(to) => {
                            if self.travel(to, p.drag_speed, dt) {
                                self.grabbed = false;
                                events.push(HumanEvent::Released);
                                Self::set_phase(&mut a, Phase::Done, t);
                            }
                            Some(coop)
                        }
                        _ => None,
                    }
                }
            }
            Step::RecoverFailures => {
                self.expand_recovery(view, a.index);
                None
            }
            Step::FalseReach {
                linger,
                withdraw_to,
                dwell,
            } => {
                let target = match withdraw_to {
                    Target::Region(r) => (ws.regions[r].center, TaskIntent::Region(r)),
                    Target::Prep => (ws.prep.center, TaskIntent::Prep),
                    Target::Point(pt) => (pt, TaskIntent::Prep),
                };
                match a.phase {
                    Phase::Reach => {
                        let d = dist(self.position, view.effector);
                        if d <= p.hover_distance + 1e-6 {
                            Self::set_phase(&mut a, Phase::Hover, t);
                        } else {
                            let step = (p.travel_speed * dt).min(d - p.hover_distance);
                            self.travel(view.effector, step / dt, dt);
                        }
                        Some(GroundTruth::new(TaskIntent::FailureRecovery, true, false))
                    }
                    Phase::Hover => {
                        let ready = match a.approach_seen {
                            Some(seen) => t - seen >= linger,
                            None => t - a.phase_started >= p.patience,
                        };
                        if ready {
                            events.push(HumanEvent::Diverged);
                            Self::set_phase(&mut a, Phase::Withdraw, t);
                            if self.travel(target.0, p.travel_speed, dt) {
                                Self::set_phase(&mut a, Phase::Dwell, t);
                            }
                            Some(GroundTruth::new(target.1, false, true))
                        } else {
                            Some(GroundTruth::new(TaskIntent::FailureRecovery, true, false))
                        }
                    }
                    Phase::Withdraw => {
                        if self.travel(target.0, p.travel_speed, dt) {
                            Self::set_phase(&mut a, Phase::Dwell, t);
                        }
                        Some(GroundTruth::new(target.1, false, true))
                    }
                    _ => {
                        if t - a.phase_started >= dwell {
                            None
                        } else {
                            Some(GroundTruth::new(target.1, false, false))
                        }
                    }
                }
            }
            Step::PassNear {
                region,
                clearance,
                linger,
                dwell,
            } => {
                let goal = ws.regions[region].center;
                match a.phase {
                    Phase::Travel => {
                        // Aim for a point beside the effector, on the hand's side.
                        let side = sub(self.position, view.effector);
                        let n = norm(side).max(1e-9);
                        let via = add(view.effector, scale(side, clearance / n));
                        if self.travel(via, p.travel_speed, dt)
                            || dist(self.position, view.effector) <= clearance
                        {
                            Self::set_phase(&mut a, Phase::Pass, t);
                        }
                        Some(GroundTruth::new(TaskIntent::Region(region), false, true))
                    }
                    Phase::Pass => {
                        if t - a.phase_started >= linger {
                            events.push(HumanEvent::Diverged);
                            Self::set_phase(&mut a, Phase::Withdraw, t);
                            if self.travel(goal, p.travel_speed, dt) {
                                Self::set_phase(&mut a, Phase::Dwell, t);
                            }
                        } else {
                            self.travel(goal, p.creep_speed, dt);
                        }
                        Some(GroundTruth::new(TaskIntent::Region(region), false, true))
                    }
                    Phase::Withdraw => {
                        if self.travel(goal, p.travel_speed, dt) {
                            Self::set_phase(&mut a, Phase::Dwell, t);
                        }
                        Some(GroundTruth::new(TaskIntent::Region(region), false, true))
                    }
                    _ => {
                        if t - a.phase_started >= dwell {
                            events.push(HumanEvent::Aligned { region });
                            self.guide_after_align(a.index, region);
                            None
                        } else {
                            Some(GroundTruth::new(TaskIntent::Region(region), false, false))
                        }
                    }
                }
            }
            Step::Wait { secs } => {
                if t - a.started >= secs {
                    None
                } else {
                    Some(GroundTruth::new(self.last_task, false, false))
                }
            }
            Step::MoveTo { point } => {
                if self.travel(point, p.travel_speed, dt) {
                    Self::set_phase(&mut a, Phase::Done, t);
                }
                Some(GroundTruth::new(TaskIntent::Prep, false, true))
            }
            Step::WaitForRobot { timeout } => match a.phase {
                Phase::Travel => {
                    if self.travel(ws.prep.center, p.travel_speed, dt) {
                        Self::set_phase(&mut a, Phase::Dwell, t);
                    }
                    Some(GroundTruth::new(TaskIntent::Prep, false, true))
                }
                _ => {
                    let pending =
                        view.regions.contains(&RegionStatus::Aligned) || view.robot_pushing;
                    if !pending || t - a.started >= timeout {
                        None
                    } else {
                        Some(GroundTruth::new(TaskIntent::Prep, false, false))
                    }
                }
            },
        };

        match truth {
            Some(truth) if a.phase != Phase::Done => {
                self.active = Some(a);
                Some(truth)
            }
            // A step that reached Done still owns this frame.
            Some(truth) => Some(truth),
            None => None,
        }
    }
}

fn parse_task(label: &str) -> Option<TaskIntent> {
    match label {
        PREP => Some(TaskIntent::Prep),
        FAILURE_RECOVERY => Some(TaskIntent::FailureRecovery),
        other => other.parse().ok().map(TaskIntent::Region),
    }
}
