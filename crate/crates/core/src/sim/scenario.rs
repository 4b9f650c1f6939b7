//! Closed-loop scenario runner.
//!
//! Each frame: the human acts, the sensor adds noise, the engine infers and
//! supervises, the robot moves or pushes, and one trace event is emitted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::force::ForceChannel;
use super::human::{HumanAgent, HumanEvent, HumanScript, RegionStatus, WorldView};
use super::push::{execute_push, DislodgeSchedule, FailureInjector, PushOutcome};
use super::robot::{drag, robot_step, RobotSimState};
use super::workspace::Point;
use crate::config::{ConfigError, ScenarioConfig};
use crate::engine::{Engine, EngineError, FrameInput};
use crate::supervisor::SystemVariant;
use crate::trace::{PushRecord, Trace, TraceEvent, TraceHeader, TraceMeta};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("script `{script}`: invalid `{key}`: {reason}")]
    Script {
        script: String,
        key: String,
        reason: String,
    },
    #[error("frame {frame}: {source}")]
    Engine {
        frame: u64,
        #[source]
        source: EngineError,
    },
}

/// Robot, parts and engine; everything except the hand.
#[derive(Debug, Clone)]
pub struct World {
    config: ScenarioConfig,
    engine: Engine,
    pub robot: RobotSimState,
    pub regions: Vec<RegionStatus>,
    force: ForceChannel,
    injector: FailureInjector,
    schedule: DislodgeSchedule,
    push_rng: ChaCha8Rng,
    pending: Vec<usize>,
    frame: u64,
}

impl World {
    pub fn new(
        config: &ScenarioConfig,
        variant: SystemVariant,
        injector: FailureInjector,
        seed: u64,
    ) -> Result<Self, EngineError> {
        let engine = Engine::new(&config.engine, &config.workspace, variant)?;
        let mut push_rng = ChaCha8Rng::seed_from_u64(seed);
        push_rng.set_stream(1);
        Ok(Self {
            config: config.clone(),
            engine,
            robot: RobotSimState::at(config.workspace.home),
            regions: vec![RegionStatus::Empty; config.workspace.regions.len()],
            force: ForceChannel::default(),
            schedule: injector.schedule(),
            injector,
            push_rng,
            pending: Vec::new(),
            frame: 0,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn time(&self) -> f64 {
        self.frame as f64 * self.config.dt()
    }

    pub fn view(&self) -> WorldView<'_> {
        WorldView {
            time: self.time(),
            effector: self.robot.position,
            robot_behavior: self.robot.behavior,
            robot_pushing: self.robot.is_pushing(),
            regions: &self.regions,
            workspace: &self.config.workspace,
        }
    }

    /// A part placed at `region`; failed parts are replaced.
    pub fn align(&mut self, region: usize) {
        if let Some(s) = self.regions.get_mut(region) {
            if matches!(s, RegionStatus::Empty | RegionStatus::Failed) {
                *s = RegionStatus::Aligned;
            }
        }
    }

    /// Advances one frame given the measured and true hand positions.
    pub fn step(
        &mut self,
        measured: Point,
        truth: Point,
        grabbed: bool,
    ) -> Result<TraceEvent, SimError> {
        let dt = self.config.dt();
        let time = self.time();
        let frame = self.frame;
        let force = self.force.update(&self.config.force, grabbed, time);
        let input = FrameInput {
            frame,
            time,
            wrist: measured.to_vec(),
            effector: self.robot.position.to_vec(),
            force,
            pushes: std::mem::take(&mut self.pending),
        };
        let out = self
            .engine
            .step(&input)
            .map_err(|source| SimError::Engine { frame, source })?;

        let directive = out.decision.directive;
        let finished = robot_step(
            &mut self.robot,
            directive,
            measured,
            &self.config.robot,
            &self.config.workspace,
            dt,
        );
        drag(&mut self.robot, truth, grabbed, dt);
        let push_force = if self.robot.is_pushing() || finished.is_some() {
            self.config.robot.push_force
        } else {
            0.0
        };

        let push = finished.map(|f| {
            let outcome = f.region.and_then(|r| match self.regions[r] {
                RegionStatus::Aligned => {
                    let center = self.config.workspace.regions[r].center;
                    let o = execute_push(
                        center,
                        f.at,
                        &self.injector,
                        &mut self.schedule,
                        r,
                        time,
                        f.guided,
                        &mut self.push_rng,
                    );
                    self.regions[r] = match o {
                        PushOutcome::Success => RegionStatus::Assembled,
                        PushOutcome::Failure => RegionStatus::Failed,
                    };
                    Some(o)
                }
                RegionStatus::Failed => Some(PushOutcome::Failure),
                RegionStatus::Empty | RegionStatus::Assembled => None,
            });
            if let Some(r) = f.region {
                self.pending.push(r);
            }
            PushRecord {
                region: f.region,
                at: f.at,
                guided: f.guided,
                outcome,
            }
        });

        self.frame += 1;
        Ok(TraceEvent {
            frame,
            time,
            wrist: input.wrist,
            wrist_true: Some(truth),
            effector: input.effector,
            force,
            push_force,
            pushes_reported: input.pushes,
            posterior: out.posterior,
            speed: out.speed,
            mode: out.mode,
            active_tree: out.active_tree,
            paused: out.paused,
            directive,
            tree_directive: out.decision.tree,
            queue: out.queue,
            pushed: out.pushed,
            supervisor_events: out.decision.events,
            human_events: Vec::new(),
            push,
            truth: None,
        })
    }
}

/// Runs `script` under `variant` and returns the full trace.
pub fn run_scenario(
    config: &ScenarioConfig,
    script: &HumanScript,
    variant: SystemVariant,
    seed: u64,
) -> Result<Trace, SimError> {
    script
        .validate(config.workspace.regions.len())
        .map_err(|(key, reason)| SimError::Script {
            script: script.name.clone(),
            key,
            reason,
        })?;
    let dt = config.dt();
    let mut injector = config.injector.clone();
    injector.dislodge.extend(script.dislodge.iter().cloned());
    if let Some(r) = script.push_noise {
        injector.noise_radius = r;
    }
    let mut world = World::new(config, variant, injector, seed)
        .map_err(|source| SimError::Engine { frame: 0, source })?;
    let mut human = HumanAgent::new(script, config.human.clone(), variant);
    let mut sensor_rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, config.sensor_noise).expect("validated sensor noise");

    let max_frames = (script.max_duration / dt).ceil() as u64;
    let tail_frames = (config.tail / dt).round() as u64;
    let mut done_at: Option<u64> = None;
    let mut events = Vec::new();
    while world.frame() < max_frames {
        let action = human.act(&world.view(), dt);
        for ev in &action.events {
            if let HumanEvent::Aligned { region } = ev {
                world.align(*region);
            }
        }
        let truth = action.position;
        let measured = [
            truth[0] + noise.sample(&mut sensor_rng),
            truth[1] + noise.sample(&mut sensor_rng),
        ];
        let mut ev = world.step(measured, truth, action.grabbed)?;
        ev.human_events = action.events;
        ev.truth = Some(action.truth);
        events.push(ev);

        if human.is_done() && done_at.is_none() {
            done_at = Some(world.frame());
        }
        if let Some(d) = done_at {
            if world.frame() >= d + tail_frames && !world.robot.is_pushing() {
                break;
            }
        }
    }

    Ok(Trace {
        header: TraceHeader::new(Some(TraceMeta {
            script: script.name.clone(),
            variant,
            seed,
            dt,
            config: config.clone(),
        })),
        events,
    })
}

/// Runs the configured script, variant and seed.
pub fn run_configured(config: &ScenarioConfig) -> Result<Trace, SimError> {
    let script = config.script(&config.run.script)?;
    run_scenario(config, &script, config.run.variant, config.run.seed)
}
