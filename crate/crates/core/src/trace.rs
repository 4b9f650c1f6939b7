//! Line-delimited JSON traces: one header line, then one event per frame.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::engine::FrameInput;
use crate::sim::human::{GroundTruth, HumanEvent};
use crate::sim::push::PushOutcome;
use crate::sim::workspace::Point;
use crate::supervisor::{
    ActiveTree, Directive, Mode, SupervisorEvent, SystemVariant, TreeDirective,
};

pub const SCHEMA: &str = "hit-trace";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace is empty; expected a header line")]
    MissingHeader,
    #[error("unknown trace schema `{0}`")]
    Schema(String),
    #[error("trace version {found} is not supported (this reader handles {VERSION})")]
    Version { found: u32 },
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("serializing frame {frame}: {message}")]
    Serialize { frame: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub script: String,
    pub variant: SystemVariant,
    pub seed: u64,
    pub dt: f64,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<TraceMeta>,
}

impl TraceHeader {
    pub fn new(meta: Option<TraceMeta>) -> Self {
        Self {
            schema: SCHEMA.to_owned(),
            version: VERSION,
            meta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushRecord {
    pub region: Option<usize>,
    pub at: Point,
    pub guided: bool,
    /// `None` when there was no part to push.
    pub outcome: Option<PushOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub frame: u64,
    pub time: f64,
    /// Measured wrist position, as fed to the engine.
    pub wrist: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrist_true: Option<Point>,
    pub effector: Vec<f64>,
    /// N, hand force on the effector.
    pub force: f64,
    /// N, robot force on the part.
    #[serde(default)]
    pub push_force: f64,
    /// Regions reported to the engine as pushed this frame.
    #[serde(default)]
    pub pushes_reported: Vec<usize>,
    pub posterior: BTreeMap<String, f64>,
    pub speed: f64,
    pub mode: Mode,
    pub active_tree: ActiveTree,
    pub paused: bool,
    pub directive: Directive,
    pub tree_directive: TreeDirective,
    pub queue: Vec<usize>,
    pub pushed: Vec<usize>,
    #[serde(default)]
    pub supervisor_events: Vec<SupervisorEvent>,
    #[serde(default)]
    pub human_events: Vec<HumanEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub push: Option<PushRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruth>,
}

impl TraceEvent {
    /// The engine input this frame was produced from.
    pub fn input(&self) -> FrameInput {
        FrameInput {
            frame: self.frame,
            time: self.time,
            wrist: self.wrist.clone(),
            effector: self.effector.clone(),
            force: self.force,
            pushes: self.pushes_reported.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn meta(&self) -> Option<&TraceMeta> {
        self.header.meta.as_ref()
    }
}

pub fn write_trace_to<W: Write>(trace: &Trace, mut out: W) -> Result<(), TraceError> {
    let io = |source| TraceError::Io {
        path: PathBuf::from("<writer>"),
        source,
    };
    let header = serde_json::to_string(&trace.header).map_err(|e| TraceError::Serialize {
        frame: 0,
        message: e.to_string(),
    })?;
    writeln!(out, "{header}").map_err(io)?;
    for ev in &trace.events {
        let line = serde_json::to_string(ev).map_err(|e| TraceError::Serialize {
            frame: ev.frame,
            message: e.to_string(),
        })?;
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<(), TraceError> {
    let file = File::create(path).map_err(|source| TraceError::Io {
        path: path.to_owned(),
        source,
    })?;
    write_trace_to(trace, BufWriter::new(file)).map_err(|e| match e {
        TraceError::Io { source, .. } => TraceError::Io {
            path: path.to_owned(),
            source,
        },
        other => other,
    })
}

pub fn read_trace_from<R: Read>(input: R) -> Result<Trace, TraceError> {
    let reader = BufReader::new(input);
    let mut header: Option<TraceHeader> = None;
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TraceError::Corrupt {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match &header {
            None => {
                let raw: serde_json::Value =
                    serde_json::from_str(&line).map_err(|e| TraceError::Corrupt {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                let schema = raw.get("schema").and_then(|s| s.as_str()).unwrap_or("");
                if schema != SCHEMA {
                    return Err(TraceError::Schema(schema.to_owned()));
                }
                let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
                if version != VERSION {
                    return Err(TraceError::Version { found: version });
                }
                header = Some(
                    serde_json::from_value(raw).map_err(|e| TraceError::Corrupt {
                        line: line_no,
                        message: e.to_string(),
                    })?,
                );
            }
            Some(_) => {
                let ev: TraceEvent =
                    serde_json::from_str(&line).map_err(|e| TraceError::Corrupt {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                events.push(ev);
            }
        }
    }
    let header = header.ok_or(TraceError::MissingHeader)?;
    Ok(Trace { header, events })
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_trace_from(file)
}
