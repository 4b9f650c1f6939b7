//! Planar end-effector kinematics under potential fields.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::workspace::{add, dist, norm, scale, sub, Point, WorkspaceConfig};
use crate::supervisor::Directive;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotParams {
    /// m/s
    pub speed_cap: f64,
    /// m/s, cap while approaching the wrist.
    pub approach_speed: f64,
    /// 1/s
    pub attract_gain: f64,
    /// m^3/s
    pub repulse_gain: f64,
    /// m
    pub influence_radius: f64,
    /// m, hard keep-out around the wrist while avoiding.
    pub safety_radius: f64,
    /// m, kept on top of `safety_radius` to absorb sensor noise and hand motion.
    pub clearance_margin: f64,
    /// Frames in the velocity running mean.
    pub smoothing_frames: usize,
    /// m
    pub arrive_tolerance: f64,
    /// s
    pub push_duration: f64,
    /// m, the approach stops this close to the wrist.
    pub approach_standoff: f64,
    /// N, force pulse applied to the part while pushing.
    pub push_force: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            speed_cap: 0.25,
            approach_speed: 0.15,
            attract_gain: 2.0,
            repulse_gain: 1e-4,
            influence_radius: 0.3,
            safety_radius: 0.05,
            clearance_margin: 0.04,
            smoothing_frames: 4,
            arrive_tolerance: 0.01,
            push_duration: 0.5,
            approach_standoff: 0.04,
            push_force: 15.0,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = [
            ("speed_cap", self.speed_cap),
            ("approach_speed", self.approach_speed),
            ("attract_gain", self.attract_gain),
            ("influence_radius", self.influence_radius),
            ("arrive_tolerance", self.arrive_tolerance),
            ("push_duration", self.push_duration),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err((k, format!("{v} must be positive")));
            }
        }
        let nonneg = [
            ("repulse_gain", self.repulse_gain),
            ("safety_radius", self.safety_radius),
            ("clearance_margin", self.clearance_margin),
            ("approach_standoff", self.approach_standoff),
            ("push_force", self.push_force),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err((k, format!("{v} must be >= 0")));
            }
        }
        if self.smoothing_frames == 0 {
            return Err(("smoothing_frames", "must be at least 1".into()));
        }
        if self.safety_radius + self.clearance_margin >= self.influence_radius {
            return Err(("safety_radius", "must be below influence_radius".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushInProgress {
    /// Region under the effector when the push started.
    pub region: Option<usize>,
    pub at: Point,
    pub remaining: f64,
    pub guided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushFinished {
    pub region: Option<usize>,
    pub at: Point,
    pub guided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSimState {
    pub position: Point,
    pub velocity: Point,
    pub behavior: Directive,
    pub push: Option<PushInProgress>,
    /// Effector minus wrist, captured when admittance starts.
    pub grab_offset: Option<Point>,
    recent: VecDeque<Point>,
}

impl RobotSimState {
    pub fn at(position: Point) -> Self {
        Self {
            position,
            velocity: [0.0, 0.0],
            behavior: Directive::Idle,
            push: None,
            grab_offset: None,
            recent: VecDeque::new(),
        }
    }

    pub fn speed(&self) -> f64 {
        norm(self.velocity)
    }

    pub fn is_pushing(&self) -> bool {
        self.push.is_some()
    }

    fn smooth(&mut self, desired: Point, window: usize, cap: f64) -> Point {
        self.recent.push_back(desired);
        while self.recent.len() > window {
            self.recent.pop_front();
        }
        let n = self.recent.len() as f64;
        let mean = self.recent.iter().fold([0.0, 0.0], |acc, v| add(acc, *v));
        let v = scale(mean, 1.0 / n);
        let s = norm(v);
        if s > cap {
            scale(v, cap / s)
        } else {
            v
        }
    }
}

fn repulsion(p: Point, wrist: Point, params: &RobotParams) -> Point {
    let d = dist(p, wrist).max(1e-6);
    if d >= params.influence_radius {
        return [0.0, 0.0];
    }
    let mag = params.repulse_gain * (1.0 / d - 1.0 / params.influence_radius) / (d * d);
    scale(sub(p, wrist), mag / d)
}

/// Removes any motion that would bring the effector inside the keep-out
/// circle, and backs straight out at `retreat` when already inside.
fn keep_out(p: Point, v: Point, wrist: Point, radius: f64, retreat: f64, dt: f64) -> Point {
    let away = sub(p, wrist);
    let d = norm(away);
    if d < 1e-9 {
        return [0.0, 0.0];
    }
    let n = scale(away, 1.0 / d);
    if d < radius {
        return scale(n, retreat);
    }
    let next = add(p, scale(v, dt));
    if dist(next, wrist) >= radius {
        return v;
    }
    let toward = -(v[0] * n[0] + v[1] * n[1]);
    if toward > 0.0 {
        add(v, scale(n, toward))
    } else {
        v
    }
}

/// One control frame. Returns a finished push, if any.
pub fn robot_step(
    robot: &mut RobotSimState,
    directive: Directive,
    wrist: Point,
    params: &RobotParams,
    workspace: &WorkspaceConfig,
    dt: f64,
) -> Option<PushFinished> {
    if let Some(push) = &mut robot.push {
        push.remaining -= dt;
        robot.velocity = [0.0, 0.0];
        robot.recent.clear();
        if push.remaining <= 1e-12 {
            let done = robot.push.take().map(|p| PushFinished {
                region: p.region,
                at: p.at,
                guided: p.guided,
            });
            return done;
        }
        return None;
    }
    robot.behavior = directive;
    if directive != Directive::Admittance {
        robot.grab_offset = None;
    }

    let p = robot.position;
    let (desired, cap) = match directive {
        Directive::AvoidAndPush { target } => {
            let goal = target
                .map(|r| workspace.regions[r].center)
                .unwrap_or(workspace.home);
            if let Some(r) = target {
                if dist(p, goal) <= params.arrive_tolerance {
                    robot.push = Some(PushInProgress {
                        region: Some(r),
                        at: p,
                        remaining: params.push_duration,
                        guided: false,
                    });
                    robot.velocity = [0.0, 0.0];
                    robot.recent.clear();
                    return None;
                }
            }
            let attract = scale(sub(goal, p), params.attract_gain);
            (add(attract, repulsion(p, wrist, params)), params.speed_cap)
        }
        Directive::ApproachWrist => {
            let gap = dist(p, wrist);
            let desired = if gap <= params.approach_standoff {
                [0.0, 0.0]
            } else {
                scale(
                    sub(wrist, p),
                    params.attract_gain * (gap - params.approach_standoff) / gap,
                )
            };
            (desired, params.approach_speed)
        }
        // Moved by `drag` while the hand holds it.
        Directive::Admittance => return None,
        Directive::PushAtCurrent => {
            robot.push = Some(PushInProgress {
                region: workspace.region_at(p),
                at: p,
                remaining: params.push_duration,
                guided: true,
            });
            robot.velocity = [0.0, 0.0];
            robot.recent.clear();
            return None;
        }
        Directive::Idle => ([0.0, 0.0], params.speed_cap),
    };

    let mut v = robot.smooth(desired, params.smoothing_frames, cap);
    if matches!(directive, Directive::AvoidAndPush { .. }) {
        let radius = params.safety_radius + params.clearance_margin;
        v = keep_out(p, v, wrist, radius, params.speed_cap, dt);
    }
    robot.velocity = v;
    robot.position = add(p, scale(v, dt));
    None
}

/// Admittance coupling: the effector keeps its grab offset from the hand.
pub fn drag(robot: &mut RobotSimState, wrist: Point, grabbed: bool, dt: f64) {
    if robot.behavior != Directive::Admittance || robot.push.is_some() {
        return;
    }
    if !grabbed {
        robot.grab_offset = None;
        robot.velocity = [0.0, 0.0];
        return;
    }
    let offset = *robot
        .grab_offset
        .get_or_insert_with(|| sub(robot.position, wrist));
    let next = add(wrist, offset);
    robot.velocity = scale(sub(next, robot.position), 1.0 / dt);
    robot.position = next;
}
