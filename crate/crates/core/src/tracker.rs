//! Constant-velocity Kalman tracker for the wrist position stream.
//!
//! Each axis is filtered independently with state `[position, velocity]`. The
//! filtered positions seed the behavior model's horizon mean and feed the
//! moving-window speed estimate.

use nalgebra::{Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// White-acceleration spectral density, m^2/s^3.
    pub accel_density: f64,
    /// Measurement noise standard deviation, m.
    pub measurement_sigma: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            accel_density: 0.005,
            measurement_sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
struct AxisFilter {
    x: Vector2<f64>,
    p: Matrix2<f64>,
}

#[derive(Debug, Clone)]
pub struct WristTracker {
    params: TrackerParams,
    axes: Vec<AxisFilter>,
    last_time: Option<f64>,
}

impl WristTracker {
    pub fn new(params: TrackerParams) -> Self {
        Self {
            params,
            axes: Vec::new(),
            last_time: None,
        }
    }

    /// Filtered position after the most recent update.
    pub fn position(&self) -> Option<Vec<f64>> {
        self.last_time?;
        Some(self.axes.iter().map(|a| a.x[0]).collect())
    }

    /// Incorporates one measurement and returns the filtered position.
    pub fn update(&mut self, position: &[f64], time: f64) -> Vec<f64> {
        let r = self.params.measurement_sigma.powi(2).max(1e-12);
        let dt = match self.last_time {
            Some(t) if self.axes.len() == position.len() => (time - t).max(0.0),
            _ => {
                self.axes = position
                    .iter()
                    .map(|&z| AxisFilter {
                        x: Vector2::new(z, 0.0),
                        p: Matrix2::new(r, 0.0, 0.0, 1.0),
                    })
                    .collect();
                self.last_time = Some(time);
                return position.to_vec();
            }
        };
        self.last_time = Some(time);

        let f = Matrix2::new(1.0, dt, 0.0, 1.0);
        let q = self.params.accel_density
            * Matrix2::new(dt.powi(3) / 3.0, dt.powi(2) / 2.0, dt.powi(2) / 2.0, dt);
        let h = RowVector2::new(1.0, 0.0);

        self.axes
            .iter_mut()
            .zip(position)
            .map(|(axis, &z)| {
                let x = f * axis.x;
                let p = f * axis.p * f.transpose() + q;
                let s = (h * p * h.transpose())[0] + r;
                let k = p * h.transpose() / s;
                let innovation = z - (h * x)[0];
                axis.x = x + k * innovation;
                axis.p = (Matrix2::identity() - k * h) * p;
                axis.x[0]
            })
            .collect()
    }
}
