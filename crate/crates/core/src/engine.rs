//! Per-frame closed-loop inference: wrist tracking, intention filtering and
//! mode supervision. Used unchanged by scenario runs, replay and live sessions.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{
    estimate_speed, BehaviorError, BehaviorParams, GoalSpec, Vector, WristObservation,
};
use crate::filter::{FilterError, FilterSession, TransitionParams};
use crate::sim::workspace::WorkspaceConfig;
use crate::supervisor::{
    ActiveTree, FrameSignals, Mode, ModeDecision, ModeState, Supervisor, SystemVariant,
    TaskPosterior, ThresholdConfig, TreeDirective,
};
use crate::tracker::{TrackerParams, WristTracker};
use crate::tree::{IntentionTree, NodeMap, NodeSpec, TreeError};

pub const COEXISTENCE: &str = "Coexistence";
pub const COOPERATION: &str = "Cooperation";
pub const NORMAL: &str = "Normal";
pub const ABNORMAL: &str = "Abnormal";
pub const PREP: &str = "prep";
pub const FAILURE_RECOVERY: &str = "failure_recovery";

pub fn region_label(region: usize) -> String {
    region.to_string()
}

fn fixed_task_specs(regions: usize, parent: Option<&str>) -> Vec<NodeSpec> {
    let mut out: Vec<NodeSpec> = (0..regions)
        .map(|r| NodeSpec::new(&region_label(r), 1, parent))
        .collect();
    out.push(NodeSpec::new(PREP, 1, parent));
    out
}

/// Interaction-task tree.
pub fn it_tree_spec(regions: usize) -> Vec<NodeSpec> {
    let mut spec = vec![
        NodeSpec::new(COEXISTENCE, 2, None),
        NodeSpec::new(COOPERATION, 2, None),
    ];
    spec.extend(fixed_task_specs(regions, Some(COEXISTENCE)));
    spec.push(NodeSpec::new(FAILURE_RECOVERY, 1, Some(COOPERATION)));
    spec
}

/// Verification-task tree.
pub fn vt_tree_spec(regions: usize) -> Vec<NodeSpec> {
    let mut spec = vec![
        NodeSpec::new(NORMAL, 2, None),
        NodeSpec::new(ABNORMAL, 2, None),
        NodeSpec::new(FAILURE_RECOVERY, 1, Some(NORMAL)),
    ];
    spec.extend(fixed_task_specs(regions, Some(ABNORMAL)));
    spec
}

/// Single-layer task tree for the coexistence baseline.
pub fn flat_tree_spec(regions: usize) -> Vec<NodeSpec> {
    fixed_task_specs(regions, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperOnSwitch {
    /// Restart the swapped upper level at 1/m.
    #[default]
    Uniform,
    /// Map Coexistence to Abnormal and Cooperation to Normal (and back).
    Carry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub behavior: BehaviorParams,
    pub tracker: TrackerParams,
    pub thresholds: ThresholdConfig,
    /// Momentum probability at the task level.
    pub kappa_task: f64,
    /// Momentum probability at the interaction and verification levels.
    pub kappa_upper: f64,
    pub upper_on_switch: UpperOnSwitch,
    /// Restart the interaction level at 1/m when guidance ends.
    pub reset_interaction_on_resume: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            behavior: BehaviorParams::default(),
            tracker: TrackerParams::default(),
            thresholds: ThresholdConfig::default(),
            kappa_task: 0.99,
            kappa_upper: 0.99,
            upper_on_switch: UpperOnSwitch::Uniform,
            reset_interaction_on_resume: true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("wrist sample has {got} coordinates, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("frame {frame} at t={time} is not after the previous frame")]
    OutOfOrder { frame: u64, time: f64 },
}

/// Everything the engine needs from the world for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameInput {
    pub frame: u64,
    pub time: f64,
    /// Measured wrist position.
    pub wrist: Vec<f64>,
    pub effector: Vec<f64>,
    /// N, hand force on the effector.
    pub force: f64,
    /// Regions whose push finished since the previous frame.
    pub pushes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    /// Marginals of every node of the active tree; empty without tracking.
    pub posterior: BTreeMap<String, f64>,
    pub decision: ModeDecision,
    pub mode: Mode,
    pub active_tree: ActiveTree,
    pub paused: bool,
    pub queue: Vec<usize>,
    pub pushed: Vec<usize>,
    /// m/s, the speed fed to the behavior model.
    pub speed: f64,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    variant: SystemVariant,
    it: Arc<IntentionTree>,
    vt: Arc<IntentionTree>,
    session: Option<FilterSession>,
    goals: Vec<(String, GoalSpec)>,
    tracker: WristTracker,
    history: VecDeque<WristObservation>,
    anchor: Option<Vector>,
    buffer: Vec<Vector>,
    supervisor: Supervisor,
    state: ModeState,
    regions: usize,
    last_frame: Option<(u64, f64)>,
    speed: f64,
}

impl Engine {
    pub fn new(
        config: &EngineConfig,
        workspace: &WorkspaceConfig,
        variant: SystemVariant,
    ) -> Result<Self, EngineError> {
        let regions = workspace.regions.len();
        let it = Arc::new(IntentionTree::build(&it_tree_spec(regions))?);
        let vt = Arc::new(IntentionTree::build(&vt_tree_spec(regions))?);

        let mut goal_points: Vec<(String, [f64; 2])> = workspace
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| (region_label(i), r.center))
            .collect();
        goal_points.push((PREP.to_owned(), workspace.prep.center));

        let var = config.behavior.goal_var;
        let (session, goals) = if variant.tracks_intentions() {
            let (tree, kappa) = if variant == SystemVariant::CoexistenceBaseline {
                let flat = Arc::new(IntentionTree::build(&flat_tree_spec(regions))?);
                (flat, vec![config.kappa_task])
            } else {
                (it.clone(), vec![config.kappa_task, config.kappa_upper])
            };
            // Goal specs hold the IT/flat ids; they are rebuilt by label on every switch.
            let session =
                FilterSession::new(tree, TransitionParams::new(kappa)?, config.behavior.clone())?;
            let mut goals: Vec<(String, GoalSpec)> = Vec::new();
            for (label, p) in &goal_points {
                let id = session.tree().id(label)?;
                goals.push((
                    label.clone(),
                    GoalSpec::fixed(id, Vector::from_column_slice(p), var),
                ));
            }
            if let Ok(id) = session.tree().id(FAILURE_RECOVERY) {
                goals.push((
                    FAILURE_RECOVERY.to_owned(),
                    GoalSpec::end_effector(id, 2, var),
                ));
            }
            (Some(session), goals)
        } else {
            (None, Vec::new())
        };

        Ok(Self {
            config: config.clone(),
            variant,
            it,
            vt,
            session,
            goals,
            tracker: WristTracker::new(config.tracker.clone()),
            history: VecDeque::new(),
            anchor: None,
            buffer: Vec::new(),
            supervisor: Supervisor::new(config.thresholds.clone(), variant),
            state: ModeState::default(),
            regions,
            last_frame: None,
            speed: 0.0,
        })
    }

    pub fn variant(&self) -> SystemVariant {
        self.variant
    }

    pub fn state(&self) -> &ModeState {
        &self.state
    }

    pub fn session(&self) -> Option<&FilterSession> {
        self.session.as_ref()
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    /// Current marginals by node label; empty for the unfiltered variant.
    pub fn posterior(&self) -> BTreeMap<String, f64> {
        match &self.session {
            Some(s) => s
                .tree()
                .nodes()
                .iter()
                .map(|n| (n.label.clone(), s.belief().marginal[n.id]))
                .collect(),
            None => BTreeMap::new(),
        }
    }

    fn resolved_goals(
        &self,
        session: &FilterSession,
        effector: &Vector,
    ) -> Result<Vec<GoalSpec>, EngineError> {
        let tree = session.tree();
        let mut out = Vec::with_capacity(self.goals.len());
        for (label, g) in &self.goals {
            let mut g = g.resolve(Some(effector))?;
            g.intention = tree.id(label)?;
            out.push(g);
        }
        Ok(out)
    }

    fn track(&mut self, input: &FrameInput, filtered: &Vector) -> Result<(), EngineError> {
        let Some(session) = &self.session else {
            return Ok(());
        };
        if self.state.paused {
            self.buffer.clear();
            self.anchor = Some(filtered.clone());
            return Ok(());
        }
        let start = self.anchor.clone().unwrap_or_else(|| filtered.clone());
        self.buffer.push(Vector::from_column_slice(&input.wrist));
        if self.buffer.len() < self.config.behavior.horizon {
            return Ok(());
        }
        self.speed = if self.history.len() >= 2 {
            let h: Vec<WristObservation> = self.history.iter().cloned().collect();
            estimate_speed(&h, self.config.behavior.speed_window)?.speed
        } else {
            0.0
        };
        let effector = Vector::from_column_slice(&input.effector);
        let goals = self.resolved_goals(session, &effector)?;
        let observations = std::mem::take(&mut self.buffer);
        let speed = self.speed;
        let session = self.session.as_mut().expect("checked above");
        session.step(&start, &observations, &goals, speed)?;
        self.anchor = Some(filtered.clone());
        Ok(())
    }

    fn signals(&self, force: f64, dt: f64) -> FrameSignals {
        let mut signals = FrameSignals {
            task: None,
            abnormal: None,
            force,
            dt,
        };
        let Some(session) = &self.session else {
            return signals;
        };
        if self.state.paused {
            return signals;
        }
        let tree = session.tree();
        let m = &session.belief().marginal;
        let p = |label: &str| tree.id(label).map(|id| m[id]).unwrap_or(0.0);
        signals.task = Some(TaskPosterior {
            regions: (0..self.regions).map(|r| p(&region_label(r))).collect(),
            prep: p(PREP),
            failure_recovery: p(FAILURE_RECOVERY),
        });
        if self.state.active_tree == ActiveTree::Vt {
            signals.abnormal = Some(p(ABNORMAL));
        }
        signals
    }

    fn switch_tree(&mut self, to: ActiveTree) -> Result<(), EngineError> {
        let Some(session) = &mut self.session else {
            return Ok(());
        };
        let target = match to {
            ActiveTree::It => self.it.clone(),
            ActiveTree::Vt => self.vt.clone(),
        };
        let old = session.tree();
        let old_cond = &session.belief().conditional;
        let mut cond = NodeMap::zeros(&target);
        for group in target.groups() {
            let uniform = 1.0 / group.len() as f64;
            for id in group {
                cond[*id] = uniform;
            }
        }
        for node in target.nodes() {
            let carried = if node.level == 1 {
                Some(node.label.as_str())
            } else if self.config.upper_on_switch == UpperOnSwitch::Carry {
                match node.label.as_str() {
                    ABNORMAL => Some(COEXISTENCE),
                    NORMAL => Some(COOPERATION),
                    COEXISTENCE => Some(ABNORMAL),
                    COOPERATION => Some(NORMAL),
                    _ => None,
                }
            } else {
                None
            };
            if let Some(id) = carried.and_then(|l| old.id(l).ok()) {
                cond[node.id] = old_cond[id];
            }
        }
        session.replace_tree(target, cond)?;
        Ok(())
    }

    /// Processes one frame.
    pub fn step(&mut self, input: &FrameInput) -> Result<FrameOutput, EngineError> {
        if input.wrist.len() != 2 || input.effector.len() != 2 {
            let got = if input.wrist.len() != 2 {
                input.wrist.len()
            } else {
                input.effector.len()
            };
            return Err(EngineError::Dimension { expected: 2, got });
        }
        let dt = match self.last_frame {
            Some((f, t)) if input.frame <= f || input.time <= t => {
                return Err(EngineError::OutOfOrder {
                    frame: input.frame,
                    time: input.time,
                })
            }
            Some((_, t)) => input.time - t,
            None => self.config.behavior.dt,
        };
        self.last_frame = Some((input.frame, input.time));

        let mut events = Vec::new();
        for &r in &input.pushes {
            events.push(Supervisor::record_push(&mut self.state, r));
        }

        let filtered = Vector::from_vec(self.tracker.update(&input.wrist, input.time));
        self.history.push_back(WristObservation::new(
            filtered.iter().copied().collect(),
            input.time,
            input.frame,
        ));
        while self.history.len() > self.config.behavior.speed_window + 1 {
            self.history.pop_front();
        }
        self.track(input, &filtered)?;

        let was_paused = self.state.paused;
        let signals = self.signals(input.force, dt);
        let mut decision = self.supervisor.step(&mut self.state, &signals);
        match decision.tree {
            TreeDirective::Keep => {}
            TreeDirective::SwitchIt => self.switch_tree(ActiveTree::It)?,
            TreeDirective::SwitchVt => self.switch_tree(ActiveTree::Vt)?,
        }
        if was_paused && !self.state.paused && self.config.reset_interaction_on_resume {
            if let Some(s) = &mut self.session {
                if s.tree().depth() >= 2 {
                    s.reset_level(2)?;
                }
            }
        }
        events.append(&mut decision.events);
        decision.events = events;

        Ok(FrameOutput {
            posterior: self.posterior(),
            decision,
            mode: self.state.mode,
            active_tree: self.state.active_tree,
            paused: self.state.paused,
            queue: self.state.task_queue.iter().copied().collect(),
            pushed: self.state.pushed.iter().copied().collect(),
            speed: self.speed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trees_build_with_expected_groups() {
        let it = IntentionTree::build(&it_tree_spec(4)).unwrap();
        assert_eq!(it.depth(), 2);
        assert_eq!(it.groups().len(), 3);
        let vt = IntentionTree::build(&vt_tree_spec(4)).unwrap();
        let fr = vt.id(FAILURE_RECOVERY).unwrap();
        assert_eq!(vt.siblings(fr).unwrap().len(), 1);
        let flat = IntentionTree::build(&flat_tree_spec(4)).unwrap();
        assert_eq!(flat.depth(), 1);
        assert_eq!(flat.leaves().len(), 5);
    }

    fn input(frame: u64, wrist: [f64; 2]) -> FrameInput {
        FrameInput {
            frame,
            time: frame as f64 / 30.0,
            wrist: wrist.to_vec(),
            effector: vec![0.0, 0.85],
            force: 0.0,
            pushes: vec![],
        }
    }

    #[test]
    fn rejects_out_of_order_frames() {
        let ws = WorkspaceConfig::default();
        let mut e = Engine::new(&EngineConfig::default(), &ws, SystemVariant::HitItvt).unwrap();
        e.step(&input(3, [0.0, 0.0])).unwrap();
        assert!(matches!(
            e.step(&input(3, [0.0, 0.0])),
            Err(EngineError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn dwelling_at_a_region_raises_its_marginal() {
        let ws = WorkspaceConfig::default();
        let mut e = Engine::new(&EngineConfig::default(), &ws, SystemVariant::HitItvt).unwrap();
        let mut out = None;
        for f in 0..30 {
            out = Some(e.step(&input(f, ws.regions[2].center)).unwrap());
        }
        let post = out.unwrap().posterior;
        assert!(post["2"] > 0.8, "{post:?}");
        let total: f64 = ["0", "1", "2", "3", PREP, FAILURE_RECOVERY]
            .iter()
            .map(|l| post[*l])
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cooperation_baseline_has_no_posterior() {
        let ws = WorkspaceConfig::default();
        let mut e = Engine::new(
            &EngineConfig::default(),
            &ws,
            SystemVariant::CooperationBaseline,
        )
        .unwrap();
        let out = e.step(&input(0, [0.0, 0.0])).unwrap();
        assert!(out.posterior.is_empty());
    }
}
