//! Live session protocol: an interactive client drives the wrist while the
//! server steps the closed loop on its own clock.
//!
//! Messages are JSON objects tagged by `type`. A connection starts with
//! `hello`; after that every [`Connection::tick`] yields exactly one `state`
//! message until the session goes stale or is replaced.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::engine::{ABNORMAL, COEXISTENCE, COOPERATION, NORMAL};
use crate::sim::human::RegionStatus;
use crate::sim::push::{Dislodge, FailureInjector};
use crate::sim::scenario::{SimError, World};
use crate::sim::workspace::{dist, Point};
use crate::supervisor::{ActiveTree, Directive, Mode, SupervisorEvent, SystemVariant};
use crate::trace::PushRecord;

pub const PROTOCOL_VERSION: u32 = 1;

/// Built-in configurations a client may ask for in `hello`.
pub const PRESETS: [&str; 3] = ["default", "dislodge", "noisy_push"];

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let mut cfg = ScenarioConfig::default();
    match name {
        "default" => {}
        "dislodge" => {
            cfg.injector.dislodge = vec![Dislodge {
                region: 1,
                time: 0.0,
            }]
        }
        "noisy_push" => cfg.injector.noise_radius = 0.04,
        _ => return None,
    }
    Some(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        version: u32,
        #[serde(default)]
        preset: Option<String>,
        #[serde(default)]
        variant: Option<SystemVariant>,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Wrist sample in workspace metres; `t` is the client clock in seconds.
    Wrist {
        t: f64,
        x: f64,
        y: f64,
    },
    Grab {
        grabbed: bool,
    },
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    VersionMismatch,
    Malformed,
    NotStarted,
    Stale,
    UnknownPreset,
    OutOfOrder,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPosteriors {
    pub task: BTreeMap<String, f64>,
    pub interaction: BTreeMap<String, f64>,
    pub verification: BTreeMap<String, f64>,
}

impl LevelPosteriors {
    pub fn split(posterior: &BTreeMap<String, f64>) -> Self {
        let mut out = Self {
            task: BTreeMap::new(),
            interaction: BTreeMap::new(),
            verification: BTreeMap::new(),
        };
        for (k, &p) in posterior {
            let level = match k.as_str() {
                COEXISTENCE | COOPERATION => &mut out.interaction,
                NORMAL | ABNORMAL => &mut out.verification,
                _ => &mut out.task,
            };
            level.insert(k.clone(), p);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotView {
    pub position: Point,
    pub velocity: Point,
    pub behavior: Directive,
    pub pushing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub version: u32,
    /// Connection-wide tick counter; never regresses, also across resets.
    pub frame: u64,
    /// s of simulated time since the session (re)started.
    pub time: f64,
    pub preset: String,
    pub variant: SystemVariant,
    pub posteriors: LevelPosteriors,
    pub mode: Mode,
    pub active_tree: ActiveTree,
    pub robot: RobotView,
    /// Held wrist sample fed to the engine this tick.
    pub wrist: Point,
    /// Effective grab; a grab request only takes hold within reach of the effector.
    pub grabbed: bool,
    pub force: f64,
    pub queue: Vec<usize>,
    pub pushed: Vec<usize>,
    pub regions: Vec<RegionStatus>,
    pub events: Vec<SupervisorEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub push: Option<PushRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(Box<StateMessage>),
    Error { code: ErrorCode, detail: String },
}

impl ServerMessage {
    fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// One simulated world plus the latest client inputs.
#[derive(Debug, Clone)]
pub struct LiveSession {
    preset: String,
    config: ScenarioConfig,
    variant: SystemVariant,
    seed: u64,
    world: World,
    wrist: Point,
    last_sample: Option<f64>,
    grab_requested: bool,
    grabbed: bool,
}

impl LiveSession {
    pub fn new(
        preset: &str,
        config: ScenarioConfig,
        variant: SystemVariant,
        seed: u64,
    ) -> Result<Self, SimError> {
        let world = build_world(&config, variant, seed)?;
        Ok(Self {
            preset: preset.to_owned(),
            wrist: config.workspace.prep.center,
            config,
            variant,
            seed,
            world,
            last_sample: None,
            grab_requested: false,
            grabbed: false,
        })
    }

    pub fn reset(&mut self) -> Result<(), SimError> {
        *self = Self::new(&self.preset, self.config.clone(), self.variant, self.seed)?;
        Ok(())
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    /// Newest sample wins; an older client timestamp is rejected.
    pub fn sample(&mut self, t: f64, x: f64, y: f64) -> Result<(), (ErrorCode, String)> {
        if !(t.is_finite() && x.is_finite() && y.is_finite()) {
            return Err((ErrorCode::Malformed, "wrist sample must be finite".into()));
        }
        if let Some(last) = self.last_sample {
            if t < last {
                return Err((
                    ErrorCode::OutOfOrder,
                    format!("sample t={t} is older than t={last}"),
                ));
            }
        }
        self.last_sample = Some(t);
        let ws = &self.config.workspace;
        self.wrist = [
            x.clamp(ws.bounds_min[0], ws.bounds_max[0]),
            y.clamp(ws.bounds_min[1], ws.bounds_max[1]),
        ];
        Ok(())
    }

    pub fn grab(&mut self, grabbed: bool) {
        self.grab_requested = grabbed;
    }

    /// Advances one frame with the held wrist sample.
    pub fn tick(&mut self, frame: u64) -> Result<StateMessage, SimError> {
        // The hand lays a part in whichever region it is over.
        if let Some(r) = self.config.workspace.region_at(self.wrist) {
            self.world.align(r);
        }
        let reach = self.config.human.contact_radius;
        self.grabbed = self.grab_requested
            && (self.grabbed || dist(self.wrist, self.world.robot.position) <= reach);
        let time = self.world.time();
        let ev = self.world.step(self.wrist, self.wrist, self.grabbed)?;
        let robot = &self.world.robot;
        Ok(StateMessage {
            version: PROTOCOL_VERSION,
            frame,
            time,
            preset: self.preset.clone(),
            variant: self.variant,
            posteriors: LevelPosteriors::split(&ev.posterior),
            mode: ev.mode,
            active_tree: ev.active_tree,
            robot: RobotView {
                position: robot.position,
                velocity: robot.velocity,
                behavior: robot.behavior,
                pushing: robot.is_pushing(),
            },
            wrist: self.wrist,
            grabbed: self.grabbed,
            force: ev.force,
            queue: ev.queue,
            pushed: ev.pushed,
            regions: self.world.regions.clone(),
            events: ev.supervisor_events,
            push: ev.push,
        })
    }
}

fn build_world(
    config: &ScenarioConfig,
    variant: SystemVariant,
    seed: u64,
) -> Result<World, SimError> {
    let injector: FailureInjector = config.injector.clone();
    World::new(config, variant, injector, seed)
        .map_err(|source| SimError::Engine { frame: 0, source })
}

/// Per-connection protocol state. Not shared between connections.
#[derive(Debug)]
pub struct Connection {
    session: Option<LiveSession>,
    frame: u64,
    idle_ticks: u64,
    stale_after: u64,
}

impl Connection {
    /// `stale_after` ticks without any client message end the session.
    pub fn new(stale_after: u64) -> Self {
        Self {
            session: None,
            frame: 0,
            idle_ticks: 0,
            stale_after,
        }
    }

    pub fn session(&self) -> Option<&LiveSession> {
        self.session.as_ref()
    }

    /// Handles one inbound text message; replies only on error.
    pub fn handle_text(&mut self, text: &str) -> Option<ServerMessage> {
        match serde_json::from_str::<ClientMessage>(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => Some(ServerMessage::error(ErrorCode::Malformed, e.to_string())),
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Option<ServerMessage> {
        self.idle_ticks = 0;
        match msg {
            ClientMessage::Hello {
                version,
                preset: name,
                variant,
                seed,
            } => {
                if version != PROTOCOL_VERSION {
                    return Some(ServerMessage::error(
                        ErrorCode::VersionMismatch,
                        format!("server speaks version {PROTOCOL_VERSION}, client sent {version}"),
                    ));
                }
                let name = name.unwrap_or_else(|| "default".to_owned());
                let Some(cfg) = preset(&name) else {
                    return Some(ServerMessage::error(
                        ErrorCode::UnknownPreset,
                        format!("unknown preset `{name}`; known: {}", PRESETS.join(", ")),
                    ));
                };
                let variant = variant.unwrap_or(cfg.run.variant);
                let seed = seed.unwrap_or(cfg.run.seed);
                match LiveSession::new(&name, cfg, variant, seed) {
                    Ok(s) => {
                        self.session = Some(s);
                        None
                    }
                    Err(e) => Some(ServerMessage::error(ErrorCode::Internal, e.to_string())),
                }
            }
            other => {
                let Some(session) = self.session.as_mut() else {
                    return Some(ServerMessage::error(
                        ErrorCode::NotStarted,
                        "send hello first",
                    ));
                };
                match other {
                    ClientMessage::Wrist { t, x, y } => session
                        .sample(t, x, y)
                        .err()
                        .map(|(code, detail)| ServerMessage::error(code, detail)),
                    ClientMessage::Grab { grabbed } => {
                        session.grab(grabbed);
                        None
                    }
                    ClientMessage::Reset => session
                        .reset()
                        .err()
                        .map(|e| ServerMessage::error(ErrorCode::Internal, e.to_string())),
                    ClientMessage::Hello { .. } => unreachable!("handled above"),
                }
            }
        }
    }

    /// One server clock tick. Emits a state message while a session is open,
    /// or a single `stale` error when the client has gone quiet.
    pub fn tick(&mut self) -> Option<ServerMessage> {
        let session = self.session.as_mut()?;
        self.idle_ticks += 1;
        if self.idle_ticks > self.stale_after {
            self.session = None;
            return Some(ServerMessage::error(
                ErrorCode::Stale,
                format!("no client message for {} ticks", self.stale_after),
            ));
        }
        let frame = self.frame;
        self.frame += 1;
        Some(match session.tick(frame) {
            Ok(state) => ServerMessage::State(Box::new(state)),
            Err(e) => {
                self.session = None;
                ServerMessage::error(ErrorCode::Internal, e.to_string())
            }
        })
    }
}
