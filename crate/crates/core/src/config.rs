//! Scenario configuration (TOML) with key-path validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{flat_tree_spec, it_tree_spec, vt_tree_spec, EngineConfig};
use crate::filter::TransitionParams;
use crate::sim::force::ForceParams;
use crate::sim::human::{HumanParams, HumanScript};
use crate::sim::push::FailureInjector;
use crate::sim::robot::RobotParams;
use crate::sim::scripts;
use crate::sim::workspace::WorkspaceConfig;
use crate::supervisor::SystemVariant;
use crate::tree::IntentionTree;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("unknown script `{0}`")]
    UnknownScript(String),
}

impl ConfigError {
    fn invalid(prefix: &str, key: impl AsRef<str>, reason: impl Into<String>) -> Self {
        let key = key.as_ref();
        ConfigError::Invalid {
            key: if key.is_empty() {
                prefix.to_owned()
            } else {
                format!("{prefix}.{key}")
            },
            reason: reason.into(),
        }
    }

    /// The dotted key path for validation errors.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub script: String,
    pub variant: SystemVariant,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            script: "nominal".to_owned(),
            variant: SystemVariant::HitItvt,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunSection,
    pub workspace: WorkspaceConfig,
    pub robot: RobotParams,
    pub human: HumanParams,
    pub force: ForceParams,
    pub injector: FailureInjector,
    pub engine: EngineConfig,
    /// m, standard deviation of the simulated wrist sensor.
    pub sensor_noise: f64,
    /// s simulated after the script ends.
    pub tail: f64,
    /// Extra scripts, looked up by name before the built-in library.
    pub scripts: Vec<HumanScript>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            workspace: WorkspaceConfig::default(),
            robot: RobotParams::default(),
            human: HumanParams::default(),
            force: ForceParams::default(),
            injector: FailureInjector::default(),
            engine: EngineConfig::default(),
            sensor_noise: 0.01,
            tail: 1.0,
            scripts: Vec::new(),
        }
    }
}

fn check_prob(prefix: &str, key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            prefix,
            key,
            format!("{v} is not in (0, 1]"),
        ))
    }
}

fn check_positive(prefix: &str, key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            prefix,
            key,
            format!("{v} must be positive"),
        ))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.workspace
            .validate()
            .map_err(|(k, r)| ConfigError::invalid("workspace", k, r))?;
        self.robot
            .validate()
            .map_err(|(k, r)| ConfigError::invalid("robot", k, r))?;
        self.human
            .validate()
            .map_err(|(k, r)| ConfigError::invalid("human", k, r))?;
        self.force
            .validate()
            .map_err(|(k, r)| ConfigError::invalid("force", k, r))?;
        self.injector
            .validate(self.workspace.regions.len())
            .map_err(|(k, r)| ConfigError::invalid("injector", k, r))?;

        let e = &self.engine;
        e.thresholds
            .validate()
            .map_err(|(k, r)| ConfigError::invalid("engine.thresholds", k, r))?;
        check_prob("engine", "kappa_task", e.kappa_task)?;
        check_prob("engine", "kappa_upper", e.kappa_upper)?;
        TransitionParams::new(vec![e.kappa_task, e.kappa_upper])
            .map_err(|err| ConfigError::invalid("engine", "kappa_task", err.to_string()))?;
        let b = &e.behavior;
        let p = "engine.behavior";
        check_positive(p, "wrist_var", b.wrist_var)?;
        check_positive(p, "goal_var", b.goal_var)?;
        check_positive(p, "dt", b.dt)?;
        check_positive(p, "distance_eps", b.distance_eps)?;
        check_positive(p, "density_floor", b.density_floor)?;
        if !(b.speed_threshold >= 0.0) {
            return Err(ConfigError::invalid(p, "speed_threshold", "must be >= 0"));
        }
        if !(b.fast_noise >= 0.0) {
            return Err(ConfigError::invalid(p, "fast_noise", "must be >= 0"));
        }
        if b.speed_window == 0 {
            return Err(ConfigError::invalid(
                p,
                "speed_window",
                "must be at least 1",
            ));
        }
        if b.horizon == 0 {
            return Err(ConfigError::invalid(p, "horizon", "must be at least 1"));
        }
        check_positive(
            "engine.tracker",
            "measurement_sigma",
            e.tracker.measurement_sigma,
        )?;
        if !(e.tracker.accel_density >= 0.0) {
            return Err(ConfigError::invalid(
                "engine.tracker",
                "accel_density",
                "must be >= 0",
            ));
        }

        if !(self.sensor_noise >= 0.0 && self.sensor_noise.is_finite()) {
            return Err(ConfigError::invalid(
                "sensor_noise",
                "",
                "must be a finite value >= 0",
            ));
        }
        if !(self.tail >= 0.0) {
            return Err(ConfigError::invalid("tail", "", "must be >= 0"));
        }
        let regions = self.workspace.regions.len();
        for spec in [
            it_tree_spec(regions),
            vt_tree_spec(regions),
            flat_tree_spec(regions),
        ] {
            IntentionTree::build(&spec)
                .map_err(|err| ConfigError::invalid("workspace", "regions", err.to_string()))?;
        }
        for (i, s) in self.scripts.iter().enumerate() {
            s.validate(regions)
                .map_err(|(k, r)| ConfigError::invalid(&format!("scripts[{i}]"), k, r))?;
        }
        if self.script(&self.run.script).is_err() {
            return Err(ConfigError::invalid(
                "run",
                "script",
                format!("unknown script `{}`", self.run.script),
            ));
        }
        Ok(())
    }

    /// Resolves a script by name: config-defined first, then the built-in library.
    pub fn script(&self, name: &str) -> Result<HumanScript, ConfigError> {
        if let Some(s) = self.scripts.iter().find(|s| s.name == name) {
            return Ok(s.clone());
        }
        scripts::builtin(name).ok_or_else(|| ConfigError::UnknownScript(name.to_owned()))
    }

    /// Frame period of the closed loop.
    pub fn dt(&self) -> f64 {
        self.engine.behavior.dt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ScenarioConfig::default();
        let text = cfg.to_toml_string();
        let back = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn errors_carry_key_paths() {
        let err =
            ScenarioConfig::from_toml_str("[engine.thresholds]\nalign_prob = 1.5\n").unwrap_err();
        assert_eq!(err.key(), Some("engine.thresholds.align_prob"));

        let err = ScenarioConfig::from_toml_str("[engine]\nkappa_task = 0.0\n").unwrap_err();
        assert_eq!(err.key(), Some("engine.kappa_task"));

        let err = ScenarioConfig::from_toml_str("[run]\nscript = \"nope\"\n").unwrap_err();
        assert_eq!(err.key(), Some("run.script"));

        let err = ScenarioConfig::from_toml_str("sensor_noise = -1.0\n").unwrap_err();
        assert_eq!(err.key(), Some("sensor_noise"));

        assert!(matches!(
            ScenarioConfig::from_toml_str("[robot]\nwarp = 3\n"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn workspace_errors_are_nested() {
        let text = "[workspace]\nhome = [5.0, 5.0]\n";
        let err = ScenarioConfig::from_toml_str(text).unwrap_err();
        assert_eq!(err.key(), Some("workspace.home"));
    }
}
