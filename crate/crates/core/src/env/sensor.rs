use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Cell, GridMap, Pose};
use crate::math;

/// Ray-cast range sensor layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Number of rays, equally spaced counter-clockwise starting straight ahead.
    /// Must be a positive multiple of four so that the left, back and right rays exist.
    pub rays: usize,
    /// Maximum range in cells.
    pub max_range_cells: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            rays: 16,
            max_range_cells: 10.0,
        }
    }
}

impl SensorConfig {
    pub fn is_valid(&self) -> bool {
        self.rays >= 4 && self.rays % 4 == 0 && self.max_range_cells > 0.0
    }

    /// Length of the flattened observation vector: rays plus the two point-goal values.
    pub fn input_width(&self) -> usize {
        self.rays + 2
    }
}

/// Egocentric range readings plus the point-goal vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Ray distances in meters, index 0 straight ahead, counter-clockwise.
    pub rays: Vec<f64>,
    /// Euclidean distance to the goal in meters.
    pub goal_distance: f64,
    /// Goal bearing minus agent heading, in `(-pi, pi]`; positive means the goal is to the left.
    pub goal_heading: f64,
    /// Meters per cell of the map this observation came from.
    pub cell_size: f64,
}

impl Observation {
    pub fn front(&self) -> f64 {
        self.rays[0]
    }

    pub fn left(&self) -> f64 {
        self.rays[self.rays.len() / 4]
    }

    pub fn right(&self) -> f64 {
        self.rays[3 * self.rays.len() / 4]
    }

    /// Network input layout: rays, then goal distance, then relative heading.
    pub fn to_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.rays.len() + 2);
        v.extend_from_slice(&self.rays);
        v.push(self.goal_distance);
        v.push(self.goal_heading);
        v
    }
}

/// Computes the observation for `pose` with the goal at `goal`.
pub fn observe(map: &GridMap, pose: Pose, goal: Cell, sensor: &SensorConfig) -> Observation {
    let base = pose.heading.angle();
    let rays = (0..sensor.rays)
        .map(|k| {
            let angle = base + 2.0 * PI * k as f64 / sensor.rays as f64;
            cast_ray(map, pose.cell(), angle, sensor.max_range_cells) * map.cell_size()
        })
        .collect();
    let dx = f64::from(goal.x - pose.x);
    // Rows grow southward, so flip y to get a counter-clockwise bearing.
    let dy = f64::from(pose.y - goal.y);
    let bearing = math::atan2(dy, dx);
    Observation {
        rays,
        goal_distance: pose.cell().distance(goal) * map.cell_size(),
        goal_heading: math::wrap_angle(bearing - base),
        cell_size: map.cell_size(),
    }
}

const TIE_EPS: f64 = 1e-9;

/// Walks the grid cells crossed by a ray from the centre of `origin` and returns the
/// centre-to-centre distance (in cells) to the first blocked cell entered within
/// `max_range`, clipped to `max_range`. A ray crossing exactly through a lattice corner
/// tests both side cells before moving diagonally.
fn cast_ray(map: &GridMap, origin: Cell, angle: f64, max_range: f64) -> f64 {
    let mut dx = math::cos(angle);
    // Grid rows increase southward.
    let mut dy = -math::sin(angle);
    if math::abs(dx) < 1e-12 {
        dx = 0.0;
    }
    if math::abs(dy) < 1e-12 {
        dy = 0.0;
    }
    let step_x: i32 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i32 = if dy > 0.0 { 1 } else { -1 };
    let delta_x = if dx == 0.0 { f64::INFINITY } else { 1.0 / math::abs(dx) };
    let delta_y = if dy == 0.0 { f64::INFINITY } else { 1.0 / math::abs(dy) };
    let mut t_x = 0.5 * delta_x;
    let mut t_y = 0.5 * delta_y;
    let mut cell = origin;
    let hit = |c: Cell| (origin.distance(c)).min(max_range);

    loop {
        let t_next = t_x.min(t_y);
        if t_next > max_range {
            return max_range;
        }
        if math::abs(t_x - t_y) < TIE_EPS {
            let side_a = Cell::new(cell.x + step_x, cell.y);
            let side_b = Cell::new(cell.x, cell.y + step_y);
            let da = (!map.is_free(side_a)).then(|| hit(side_a));
            let db = (!map.is_free(side_b)).then(|| hit(side_b));
            match (da, db) {
                (Some(a), Some(b)) => return a.min(b),
                (Some(a), None) => return a,
                (None, Some(b)) => return b,
                (None, None) => {}
            }
            cell = Cell::new(cell.x + step_x, cell.y + step_y);
            t_x += delta_x;
            t_y += delta_y;
        } else if t_x < t_y {
            cell.x += step_x;
            t_x += delta_x;
        } else {
            cell.y += step_y;
            t_y += delta_y;
        }
        if !map.is_free(cell) {
            return hit(cell);
        }
    }
}
