//! Simulated wrist force/torque channel driven by the hand's grab flag.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceParams {
    /// N while the hand holds the effector.
    pub grip_force: f64,
    /// s, exponential decay constant after release.
    pub release_tau: f64,
    /// N, readings below this are reported as zero.
    pub floor: f64,
}

impl Default for ForceParams {
    fn default() -> Self {
        Self {
            grip_force: 25.0,
            release_tau: 0.05,
            floor: 1e-3,
        }
    }
}

impl ForceParams {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.grip_force >= 0.0 && self.grip_force.is_finite()) {
            return Err(("grip_force", "must be a finite value >= 0".into()));
        }
        if !(self.release_tau > 0.0) {
            return Err(("release_tau", "must be positive".into()));
        }
        if !(self.floor >= 0.0) {
            return Err(("floor", "must be >= 0".into()));
        }
        Ok(())
    }
}

/// Force reading for a grab state, given time since the last release.
pub fn force_signal(params: &ForceParams, grabbed: bool, since_release: Option<f64>) -> f64 {
    let f = if grabbed {
        params.grip_force
    } else {
        match since_release {
            Some(s) => params.grip_force * (-s.max(0.0) / params.release_tau).exp(),
            None => 0.0,
        }
    };
    if f < params.floor {
        0.0
    } else {
        f
    }
}

/// Stateful wrapper that remembers when the hand last let go.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForceChannel {
    held: bool,
    released_at: Option<f64>,
}

impl ForceChannel {
    pub fn update(&mut self, params: &ForceParams, grabbed: bool, time: f64) -> f64 {
        if grabbed {
            self.held = true;
            self.released_at = None;
        } else if self.held {
            self.held = false;
            self.released_at = Some(time);
        }
        force_signal(params, grabbed, self.released_at.map(|t0| time - t0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_crosses_thresholds() {
        let p = ForceParams::default();
        assert_eq!(force_signal(&p, true, None), 25.0);
        assert_eq!(force_signal(&p, false, None), 0.0);
        assert!(force_signal(&p, false, Some(0.2)) < 3.0);
        assert!(force_signal(&p, false, Some(0.0)) > 20.0);
    }

    #[test]
    fn channel_decays_after_release() {
        let p = ForceParams::default();
        let mut c = ForceChannel::default();
        let dt = 1.0 / 30.0;
        assert_eq!(c.update(&p, false, 0.0), 0.0);
        assert_eq!(c.update(&p, true, dt), 25.0);
        let first = c.update(&p, false, 2.0 * dt);
        assert_eq!(first, 25.0);
        let later: Vec<f64> = (3..10)
            .map(|i| c.update(&p, false, i as f64 * dt))
            .collect();
        assert!(later.windows(2).all(|w| w[1] <= w[0]));
        assert!(later[5] < 3.0);
    }
}
