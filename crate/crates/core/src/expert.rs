//! Intervention sources: the shortest-path expert, its noisy variant, and the marker
//! for a live human whose actions arrive through the session protocol.

use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, Cell, DistanceField, EpisodeState, GridMap, Heading, NavEnv, Pose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpertError {
    #[error("goal ({}, {}) is unreachable from ({}, {})", goal.x, goal.y, from.x, from.y)]
    Unreachable { from: Cell, goal: Cell },
    #[error("live human interventions are driven by the session protocol")]
    LiveHumanDelegated,
    #[error("invalid intervener configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Maximum consecutive non-agent steps granted per help request (M).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionBudget {
    pub max_steps_per_request: u32,
}

impl InterventionBudget {
    pub const DEFAULT: InterventionBudget = InterventionBudget {
        max_steps_per_request: 25,
    };

    pub fn new(max_steps_per_request: u32) -> Result<Self, ExpertError> {
        if max_steps_per_request == 0 {
            return Err(ExpertError::InvalidConfig("budget must be at least one step"));
        }
        Ok(Self { max_steps_per_request })
    }

    /// A budget no episode can exhaust.
    pub fn unlimited() -> Self {
        Self {
            max_steps_per_request: u32::MAX,
        }
    }
}

impl Default for InterventionBudget {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntervenerKind {
    SimExpert,
    NoisyExpert,
    LiveHuman,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervener {
    pub kind: IntervenerKind,
    /// Per-step probability of replacing the planned action with a random non-STOP
    /// action. Only used by `NoisyExpert`.
    pub noise_rate: f64,
}

impl Intervener {
    pub const DEFAULT_NOISE_RATE: f64 = 0.2;

    pub fn sim_expert() -> Self {
        Self {
            kind: IntervenerKind::SimExpert,
            noise_rate: 0.0,
        }
    }

    pub fn noisy_expert(noise_rate: f64) -> Result<Self, ExpertError> {
        if !(0.0..1.0).contains(&noise_rate) {
            return Err(ExpertError::InvalidConfig("noise rate must lie in [0, 1)"));
        }
        Ok(Self {
            kind: IntervenerKind::NoisyExpert,
            noise_rate,
        })
    }

    pub fn live_human() -> Self {
        Self {
            kind: IntervenerKind::LiveHuman,
            noise_rate: 0.0,
        }
    }
}

fn turns_between(from: Heading, to: Heading) -> &'static [Action] {
    if from == to {
        &[]
    } else if from.left() == to {
        &[Action::TurnLeft]
    } else if from.right() == to {
        &[Action::TurnRight]
    } else {
        &[Action::TurnLeft, Action::TurnLeft]
    }
}

/// Converts a cell path (consecutive 4-neighbors) into turn/forward actions ending in STOP.
pub fn path_to_actions(start: Heading, path: &[Cell]) -> Vec<Action> {
    let mut actions = Vec::new();
    let mut heading = start;
    for pair in path.windows(2) {
        let (dx, dy) = (pair[1].x - pair[0].x, pair[1].y - pair[0].y);
        let dir = Heading::ALL
            .into_iter()
            .find(|h| h.delta() == (dx, dy))
            .expect("path cells must be 4-neighbors");
        actions.extend_from_slice(turns_between(heading, dir));
        actions.push(Action::Forward);
        heading = dir;
    }
    actions.push(Action::Stop);
    actions
}

/// Shortest cell path from `from` to the source of `field`, preferring N, E, S, W among
/// equally short continuations.
pub fn shortest_cell_path(field: &DistanceField, from: Cell) -> Option<Vec<Cell>> {
    let mut d = field.steps(from)?;
    let mut path = alloc::vec![from];
    let mut cur = from;
    while d > 0 {
        cur = Heading::ALL
            .into_iter()
            .map(|h| cur.offset(h))
            .find(|n| field.steps(*n) == Some(d - 1))?;
        path.push(cur);
        d -= 1;
    }
    Some(path)
}

/// Turns, forwards and a terminal STOP that drive `pose` onto `goal` along a shortest path.
pub fn shortest_path_actions(map: &GridMap, pose: Pose, goal: Cell) -> Result<Vec<Action>, ExpertError> {
    let field = DistanceField::from_source(map, goal);
    plan_with_field(&field, pose)
}

fn plan_with_field(field: &DistanceField, pose: Pose) -> Result<Vec<Action>, ExpertError> {
    let path = shortest_cell_path(field, pose.cell()).ok_or(ExpertError::Unreachable {
        from: pose.cell(),
        goal: field.source(),
    })?;
    Ok(path_to_actions(pose.heading, &path))
}

/// Actions for one intervention of at most `budget_steps` steps, replanned from the
/// current pose. The STOP is only included when it fits in the budget.
pub fn provide_intervention(
    intervener: &Intervener,
    env: &NavEnv,
    state: &EpisodeState,
    budget_steps: u32,
    rng: &mut crate::Rng,
) -> Result<Vec<Action>, ExpertError> {
    let mut plan = plan_with_field(env.goal_field(), state.pose)?;
    plan.truncate(budget_steps.min(u32::MAX - 1) as usize);
    match intervener.kind {
        IntervenerKind::SimExpert => Ok(plan),
        IntervenerKind::NoisyExpert => {
            for a in plan.iter_mut() {
                if rng.random::<f64>() < intervener.noise_rate {
                    *a = [Action::Forward, Action::TurnLeft, Action::TurnRight][rng.random_range(0..3)];
                }
            }
            Ok(plan)
        }
        IntervenerKind::LiveHuman => Err(ExpertError::LiveHumanDelegated),
    }
}
