//! Gaussian goal-directed wrist motion model.
//!
//! The wrist moves a fraction `alpha` of the way to a Gaussian goal each step,
//! plus Gaussian process noise:
//!
//! ```text
//! X' = X + alpha (G - X) + W,   X ~ N(mu, S),  G ~ N(mu_G, S_G),  W ~ N(0, S_W)
//! ```
//!
//! which keeps `X'` Gaussian with
//!
//! ```text
//! mu' = (1 - alpha) mu + alpha mu_G
//! S'  = (1 - alpha)^2 S + alpha^2 S_G + S_W + alpha (1 - alpha) (C + C^T)
//! C'  = (1 - alpha) C + alpha S_G                      (C = Cov(X, G))
//! ```
//!
//! The per-goal likelihood of an observed horizon is the product of predictive
//! densities evaluated at the observed positions.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::IntentionId;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviorError {
    #[error("need at least 2 observations to estimate speed, got {0}")]
    InsufficientHistory(usize),
    #[error("timestamps decrease at frame {frame}: {prev} s then {next} s")]
    NonMonotoneTime { frame: u64, prev: f64, next: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance is singular even after jitter")]
    SingularCovariance,
    #[error("empty observation horizon")]
    EmptyHorizon,
    #[error("goal {0} needs an end-effector position to resolve")]
    UnresolvedGoal(IntentionId),
}

/// Tunables of the behavior model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorParams {
    /// Isotropic wrist position variance at the start of a horizon, m^2.
    pub wrist_var: f64,
    /// Isotropic goal variance, m^2.
    pub goal_var: f64,
    /// Below this speed (m/s) the process noise scales with goal distance.
    pub speed_threshold: f64,
    /// Process noise variance used at or above the speed threshold, m^2.
    pub fast_noise: f64,
    /// Moving window (steps) for the wrist speed estimate.
    pub speed_window: usize,
    /// Floor on the goal distance in the step gain, m.
    pub distance_eps: f64,
    pub density_floor: f64,
    /// Frame period, s.
    pub dt: f64,
    /// Frames per tracking iteration.
    pub horizon: usize,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        Self {
            wrist_var: 0.05,
            goal_var: 0.05,
            speed_threshold: 0.2,
            fast_noise: 0.5,
            speed_window: 4,
            distance_eps: 1e-6,
            density_floor: 1e-300,
            dt: 1.0 / 30.0,
            horizon: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector,
    pub cov: Matrix,
    /// `Cov(X, G)`.
    pub cross_cov_goal: Matrix,
}

impl GaussianBelief {
    /// Isotropic belief with zero goal cross-covariance.
    pub fn isotropic(mean: Vector, var: f64) -> Self {
        let d = mean.len();
        Self {
            mean,
            cov: Matrix::identity(d, d) * var,
            cross_cov_goal: Matrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalKind {
    StaticRegion,
    /// Centered on the robot end-effector, re-resolved every frame.
    DynamicEndEffector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub kind: GoalKind,
    pub mean: Vector,
    pub cov: Matrix,
    pub intention: IntentionId,
}

impl GoalSpec {
    pub fn fixed(intention: IntentionId, mean: Vector, var: f64) -> Self {
        let d = mean.len();
        Self {
            kind: GoalKind::StaticRegion,
            mean,
            cov: Matrix::identity(d, d) * var,
            intention,
        }
    }

    pub fn end_effector(intention: IntentionId, dim: usize, var: f64) -> Self {
        Self {
            kind: GoalKind::DynamicEndEffector,
            mean: Vector::zeros(dim),
            cov: Matrix::identity(dim, dim) * var,
            intention,
        }
    }

    /// Copy with a dynamic goal's mean moved onto `effector`.
    pub fn resolve(&self, effector: Option<&Vector>) -> Result<GoalSpec, BehaviorError> {
        match self.kind {
            GoalKind::StaticRegion => Ok(self.clone()),
            GoalKind::DynamicEndEffector => {
                let e = effector.ok_or(BehaviorError::UnresolvedGoal(self.intention))?;
                Ok(GoalSpec {
                    mean: e.clone(),
                    ..self.clone()
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WristObservation {
    pub position: Vec<f64>,
    pub timestamp: f64,
    pub frame: u64,
}

impl WristObservation {
    pub fn new(position: Vec<f64>, timestamp: f64, frame: u64) -> Self {
        Self {
            position,
            timestamp,
            frame,
        }
    }

    pub fn vector(&self) -> Vector {
        Vector::from_column_slice(&self.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionEstimate {
    /// m/s, never negative.
    pub speed: f64,
    /// Steps actually averaged.
    pub window: usize,
}

/// Mean step speed over the last `window` steps of `history`.
///
/// Steps with zero elapsed time carry no speed information and are skipped.
pub fn estimate_speed(
    history: &[WristObservation],
    window: usize,
) -> Result<MotionEstimate, BehaviorError> {
    if history.len() < 2 {
        return Err(BehaviorError::InsufficientHistory(history.len()));
    }
    let steps = window.max(1).min(history.len() - 1);
    let tail = &history[history.len() - steps - 1..];
    let mut total = 0.0;
    let mut counted = 0usize;
    for pair in tail.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let dt = b.timestamp - a.timestamp;
        if dt < 0.0 {
            return Err(BehaviorError::NonMonotoneTime {
                frame: b.frame,
                prev: a.timestamp,
                next: b.timestamp,
            });
        }
        if a.position.len() != b.position.len() {
            return Err(BehaviorError::DimensionMismatch {
                expected: a.position.len(),
                got: b.position.len(),
            });
        }
        if dt == 0.0 {
            continue;
        }
        let dist = a
            .position
            .iter()
            .zip(&b.position)
            .map(|(x, y)| (y - x) * (y - x))
            .sum::<f64>()
            .sqrt();
        total += dist / dt;
        counted += 1;
    }
    let speed = if counted == 0 {
        0.0
    } else {
        total / counted as f64
    };
    Ok(MotionEstimate {
        speed,
        window: steps,
    })
}

/// Speed-switched isotropic process noise.
pub fn process_noise(
    mean: &Vector,
    goal_mean: &Vector,
    speed: f64,
    params: &BehaviorParams,
) -> Matrix {
    let d = mean.len();
    let scalar = if speed < params.speed_threshold {
        (mean - goal_mean).norm_squared()
    } else {
        params.fast_noise
    };
    Matrix::identity(d, d) * scalar
}

/// Fraction of the remaining goal distance covered in one step, clamped to `[0, 1]`.
pub fn step_gain(mean: &Vector, goal_mean: &Vector, speed: f64, dt: f64, eps: f64) -> f64 {
    let dist = (goal_mean - mean).norm().max(eps);
    (speed * dt / dist).clamp(0.0, 1.0)
}

pub fn propagate_gaussian(
    belief: &GaussianBelief,
    goal: &GoalSpec,
    alpha: f64,
    sigma_w: &Matrix,
) -> Result<GaussianBelief, BehaviorError> {
    let d = belief.dim();
    for (rows, cols) in [
        belief.cov.shape(),
        belief.cross_cov_goal.shape(),
        goal.cov.shape(),
        sigma_w.shape(),
    ] {
        if rows != d || cols != d {
            return Err(BehaviorError::DimensionMismatch {
                expected: d,
                got: rows.max(cols),
            });
        }
    }
    if goal.mean.len() != d {
        return Err(BehaviorError::DimensionMismatch {
            expected: d,
            got: goal.mean.len(),
        });
    }

    let keep = 1.0 - alpha;
    let mean = &belief.mean * keep + &goal.mean * alpha;
    let c = &belief.cross_cov_goal;
    let cov = &belief.cov * (keep * keep)
        + &goal.cov * (alpha * alpha)
        + sigma_w
        + (c + c.transpose()) * (alpha * keep);
    let cross = c * keep + &goal.cov * alpha;

    Ok(GaussianBelief {
        mean,
        cov: clamp_psd(symmetrize(cov)),
        cross_cov_goal: cross,
    })
}

fn symmetrize(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

/// Projects tiny negative eigenvalues (round-off) back to zero.
fn clamp_psd(m: Matrix) -> Matrix {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return m;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    symmetrize(q * Matrix::from_diagonal(&clamped) * q.transpose())
}

/// Normal density of `position` under `predicted`, floored at `floor`.
pub fn observation_density(
    predicted: &GaussianBelief,
    position: &Vector,
    floor: f64,
) -> Result<f64, BehaviorError> {
    let d = predicted.dim();
    if position.len() != d {
        return Err(BehaviorError::DimensionMismatch {
            expected: d,
            got: position.len(),
        });
    }
    let chol = match Cholesky::new(predicted.cov.clone()) {
        Some(c) => c,
        None => Cholesky::new(&predicted.cov + Matrix::identity(d, d) * 1e-9)
            .ok_or(BehaviorError::SingularCovariance)?,
    };
    let diff = position - &predicted.mean;
    let solved = chol.solve(&diff);
    let quad = diff.dot(&solved);
    let log_det = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
    let density = (log_norm - 0.5 * quad).exp();
    Ok(density.max(floor))
}

/// Likelihood of an observed horizon under one goal.
///
/// The horizon starts from `start` (the tracked wrist estimate) with the
/// configured wrist variance and zero goal cross-covariance; the gain and the
/// process noise are re-evaluated from the running predictive mean each step.
pub fn sequence_likelihood(
    start: &Vector,
    observations: &[Vector],
    goal: &GoalSpec,
    speed: f64,
    params: &BehaviorParams,
) -> Result<f64, BehaviorError> {
    if observations.is_empty() {
        return Err(BehaviorError::EmptyHorizon);
    }
    let mut belief = GaussianBelief::isotropic(start.clone(), params.wrist_var);
    let mut likelihood = 1.0;
    for obs in observations {
        let alpha = step_gain(
            &belief.mean,
            &goal.mean,
            speed,
            params.dt,
            params.distance_eps,
        );
        let sigma_w = process_noise(&belief.mean, &goal.mean, speed, params);
        belief = propagate_gaussian(&belief, goal, alpha, &sigma_w)?;
        likelihood *= observation_density(&belief, obs, params.density_floor)?;
    }
    Ok(likelihood.max(params.density_floor))
}
