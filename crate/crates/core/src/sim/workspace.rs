//! Planar table layout: four square task regions, the prep area and the robot home.

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

pub fn norm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}

/// Moves `from` toward `to` by at most `step`; returns the new point and whether it arrived.
pub fn advance(from: Point, to: Point, step: f64) -> (Point, bool) {
    let d = dist(from, to);
    if d <= step {
        (to, true)
    } else {
        (add(from, scale(sub(to, from), step / d)), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub center: Point,
    pub half_extent: Point,
}

impl Region {
    pub fn square(center: Point, half: f64) -> Self {
        Self {
            center,
            half_extent: [half, half],
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        (p[0] - self.center[0]).abs() <= self.half_extent[0]
            && (p[1] - self.center[1]).abs() <= self.half_extent[1]
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        (self.center[0] - other.center[0]).abs() < self.half_extent[0] + other.half_extent[0]
            && (self.center[1] - other.center[1]).abs() < self.half_extent[1] + other.half_extent[1]
    }

    fn inside(&self, lo: Point, hi: Point) -> bool {
        (0..2).all(|i| {
            self.center[i] - self.half_extent[i] >= lo[i]
                && self.center[i] + self.half_extent[i] <= hi[i]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceConfig {
    pub regions: Vec<Region>,
    pub prep: Region,
    pub home: Point,
    pub bounds_min: Point,
    pub bounds_max: Point,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self {
            regions: vec![
                Region::square([-0.3, 0.55], 0.06),
                Region::square([0.3, 0.55], 0.06),
                Region::square([-0.3, 0.25], 0.06),
                Region::square([0.3, 0.25], 0.06),
            ],
            prep: Region {
                center: [0.0, -0.1],
                half_extent: [0.25, 0.06],
            },
            home: [0.0, 0.85],
            bounds_min: [-0.7, -0.3],
            bounds_max: [0.7, 1.0],
        }
    }
}

impl WorkspaceConfig {
    /// First offending key (relative to the workspace table) and the reason.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.regions.is_empty() {
            return Err((
                "regions".into(),
                "at least one task region is required".into(),
            ));
        }
        let (lo, hi) = (self.bounds_min, self.bounds_max);
        if !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(("bounds_min".into(), "must lie below bounds_max".into()));
        }
        let mut all: Vec<(String, &Region)> = self
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("regions[{i}]"), r))
            .collect();
        all.push(("prep".into(), &self.prep));
        for (key, r) in &all {
            if r.half_extent.iter().any(|h| !(*h > 0.0)) {
                return Err((format!("{key}.half_extent"), "must be positive".into()));
            }
            if !r.inside(lo, hi) {
                return Err((key.clone(), "extends outside the workspace bounds".into()));
            }
        }
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if all[i].1.overlaps(all[j].1) {
                    return Err((all[j].0.clone(), format!("overlaps {}", all[i].0)));
                }
            }
        }
        if !(0..2).all(|i| self.home[i] >= lo[i] && self.home[i] <= hi[i]) {
            return Err(("home".into(), "outside the workspace bounds".into()));
        }
        Ok(())
    }

    pub fn region_at(&self, p: Point) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_valid() {
        let ws = WorkspaceConfig::default();
        ws.validate().unwrap();
        assert_eq!(ws.region_at([0.31, 0.24]), Some(3));
        assert_eq!(ws.region_at([0.0, 0.4]), None);
    }

    #[test]
    fn overlap_and_bounds_are_rejected() {
        let mut ws = WorkspaceConfig::default();
        ws.regions[1] = Region::square([-0.25, 0.55], 0.06);
        assert_eq!(ws.validate().unwrap_err().0, "regions[1]");

        let mut ws = WorkspaceConfig::default();
        ws.regions[0].center = [-0.68, 0.55];
        assert_eq!(ws.validate().unwrap_err().0, "regions[0]");
    }

    #[test]
    fn advance_stops_at_target() {
        let (p, arrived) = advance([0.0, 0.0], [0.1, 0.0], 0.05);
        assert!(!arrived);
        assert!((p[0] - 0.05).abs() < 1e-15);
        assert_eq!(advance(p, [0.1, 0.0], 0.06), ([0.1, 0.0], true));
    }
}
