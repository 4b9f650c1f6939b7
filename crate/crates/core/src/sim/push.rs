//! Push outcomes: position noise against a tolerance box, and scheduled dislodges.

use rand::Rng;
use rand_distr::{Distribution, UnitDisc};
use serde::{Deserialize, Serialize};

use super::workspace::{sub, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dislodge {
    pub region: usize,
    /// s; the first push at `region` at or after this time fails.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureInjector {
    /// m, radius of the uniform disk added to the push position.
    pub noise_radius: f64,
    /// m, half-width of the square the push must land in around the region center.
    pub tolerance: f64,
    /// Also perturb hand-guided pushes; off by default since the hand places the effector.
    pub perturb_guided: bool,
    pub dislodge: Vec<Dislodge>,
}

impl Default for FailureInjector {
    fn default() -> Self {
        Self {
            noise_radius: 0.0,
            tolerance: 0.03,
            perturb_guided: false,
            dislodge: Vec::new(),
        }
    }
}

impl FailureInjector {
    pub fn validate(&self, regions: usize) -> Result<(), (String, String)> {
        if !(self.noise_radius >= 0.0 && self.noise_radius.is_finite()) {
            return Err(("noise_radius".into(), "must be a finite value >= 0".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(("tolerance".into(), "must be positive".into()));
        }
        for (i, d) in self.dislodge.iter().enumerate() {
            if d.region >= regions {
                return Err((
                    format!("dislodge[{i}].region"),
                    format!("no region {} in the workspace", d.region),
                ));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> DislodgeSchedule {
        DislodgeSchedule {
            entries: self.dislodge.clone(),
            consumed: vec![false; self.dislodge.len()],
        }
    }
}

/// Consumable copy of the dislodge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DislodgeSchedule {
    entries: Vec<Dislodge>,
    consumed: Vec<bool>,
}

impl DislodgeSchedule {
    /// Consumes the earliest pending entry for `region` due by `time`.
    pub fn take(&mut self, region: usize, time: f64) -> bool {
        let hit = self
            .entries
            .iter()
            .enumerate()
            .filter(|(i, d)| !self.consumed[*i] && d.region == region && d.time <= time)
            .min_by(|a, b| a.1.time.total_cmp(&b.1.time))
            .map(|(i, _)| i);
        if let Some(i) = hit {
            self.consumed[i] = true;
        }
        hit.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PushOutcome {
    Success,
    Failure,
}

/// Outcome of a push at `at` on the region centered at `center`; `guided`
/// pushes skip the position noise unless the injector says otherwise.
///
/// The rng is drawn from exactly once per call whatever the outcome, so the
/// random stream does not depend on the schedule.
#[allow(clippy::too_many_arguments)]
pub fn execute_push<R: Rng + ?Sized>(
    center: Point,
    at: Point,
    injector: &FailureInjector,
    schedule: &mut DislodgeSchedule,
    region: usize,
    time: f64,
    guided: bool,
    rng: &mut R,
) -> PushOutcome {
    let [dx, dy]: [f64; 2] = UnitDisc.sample(rng);
    let radius = if guided && !injector.perturb_guided {
        0.0
    } else {
        injector.noise_radius
    };
    let err = sub(at, center);
    let ex = err[0] + dx * radius;
    let ey = err[1] + dy * radius;
    let placed = ex.abs() <= injector.tolerance && ey.abs() <= injector.tolerance;
    let dislodged = schedule.take(region, time);
    if placed && !dislodged {
        PushOutcome::Success
    } else {
        PushOutcome::Failure
    }
}
