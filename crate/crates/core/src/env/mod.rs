//! Deterministic 2D grid world for point-goal navigation.
//!
//! Cells are addressed by `(x, y)` = (column, row); row 0 is the top of the map
//! and "north" points toward decreasing rows. The agent occupies one cell, moves
//! one cell per `FORWARD` and turns in 90 degree increments.

mod episode;
mod map;
mod sensor;

pub use episode::{
    sample_episode, EpisodeSpec, EpisodeState, NavEnv, Status, DEFAULT_MAX_STEPS, MAX_SAMPLE_ATTEMPTS,
};
pub use map::{geodesic_distance, DistanceField, GridMap, DEFAULT_CELL_SIZE, UNREACHABLE};
pub use sensor::{observe, Observation, SensorConfig};

use core::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use alloc::string::String;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("malformed map: {0}")]
    MalformedMap(String),
    #[error("map has no connected free region of at least two cells")]
    UnreachableMap,
    #[error("cell ({x}, {y}) is blocked or out of bounds")]
    BlockedEndpoint { x: i32, y: i32 },
    #[error("episode already terminated")]
    EpisodeTerminated,
    #[error("no start/goal pair found after {0} attempts")]
    NoFeasiblePair(u32),
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
}

/// A grid cell, `x` = column and `y` = row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, heading: Heading) -> Cell {
        let (dx, dy) = heading.delta();
        Cell::new(self.x + dx, self.y + dy)
    }

    /// Euclidean distance in cells.
    pub fn distance(self, other: Cell) -> f64 {
        let dx = f64::from(other.x - self.x);
        let dy = f64::from(other.y - self.y);
        crate::math::sqrt(dx * dx + dy * dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    /// Neighbor order used for tie-breaking everywhere: N, E, S, W.
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    /// Angle counter-clockwise from east, in radians.
    pub fn angle(self) -> f64 {
        match self {
            Heading::E => 0.0,
            Heading::N => FRAC_PI_2,
            Heading::W => PI,
            Heading::S => -FRAC_PI_2,
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::N => Heading::W,
            Heading::W => Heading::S,
            Heading::S => Heading::E,
            Heading::E => Heading::N,
        }
    }

    pub fn right(self) -> Heading {
        match self {
            Heading::N => Heading::E,
            Heading::E => Heading::S,
            Heading::S => Heading::W,
            Heading::W => Heading::N,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Heading::N => 0,
            Heading::E => 1,
            Heading::S => 2,
            Heading::W => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub x: i32,
    pub y: i32,
    pub heading: Heading,
}

impl Pose {
    pub const fn new(x: i32, y: i32, heading: Heading) -> Self {
        Self { x, y, heading }
    }

    pub fn cell(self) -> Cell {
        Cell::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Forward, Action::TurnLeft, Action::TurnRight, Action::Stop];

    pub fn index(self) -> usize {
        match self {
            Action::Forward => 0,
            Action::TurnLeft => 1,
            Action::TurnRight => 2,
            Action::Stop => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Forward => "FORWARD",
            Action::TurnLeft => "TURN_LEFT",
            Action::TurnRight => "TURN_RIGHT",
            Action::Stop => "STOP",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

/// Who issued an executed action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Actor {
    Agent,
    Human,
    Expert,
}

impl Actor {
    pub fn is_agent(self) -> bool {
        self == Actor::Agent
    }
}
