use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{observe, Action, Actor, Cell, DistanceField, EnvError, GridMap, Heading, Observation, Pose, SensorConfig};

/// Rejection-sampling bound for [`sample_episode`].
pub const MAX_SAMPLE_ATTEMPTS: u32 = 10_000;

/// One navigation task on a named map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub map_id: String,
    pub start: Pose,
    pub goal: Cell,
    /// Geodesic start-to-goal distance in meters.
    pub shortest_path_length: f64,
    pub max_steps: u32,
    pub seed: u64,
}

pub const DEFAULT_MAX_STEPS: u32 = 500;

/// A map bound to an episode, with the goal distance field precomputed.
#[derive(Debug, Clone)]
pub struct NavEnv {
    map: GridMap,
    spec: EpisodeSpec,
    to_goal: DistanceField,
    sensor: SensorConfig,
}

impl NavEnv {
    pub fn new(map: GridMap, spec: EpisodeSpec) -> Result<Self, EnvError> {
        Self::with_sensor(map, spec, SensorConfig::default())
    }

    pub fn with_sensor(map: GridMap, spec: EpisodeSpec, sensor: SensorConfig) -> Result<Self, EnvError> {
        if spec.map_id != map.id() {
            return Err(EnvError::InvalidEpisode(format!(
                "episode targets map {:?} but map is {:?}",
                spec.map_id,
                map.id()
            )));
        }
        if !sensor.is_valid() {
            return Err(EnvError::InvalidEpisode(format!("invalid sensor layout {sensor:?}")));
        }
        for c in [spec.start.cell(), spec.goal] {
            if !map.is_free(c) {
                return Err(EnvError::BlockedEndpoint { x: c.x, y: c.y });
            }
        }
        if spec.start.cell() == spec.goal {
            return Err(EnvError::InvalidEpisode("start equals goal".into()));
        }
        if spec.max_steps == 0 {
            return Err(EnvError::InvalidEpisode("max_steps must be positive".into()));
        }
        let to_goal = DistanceField::from_source(&map, spec.goal);
        let steps = to_goal
            .steps(spec.start.cell())
            .ok_or_else(|| EnvError::InvalidEpisode("goal unreachable from start".into()))?;
        let geodesic = f64::from(steps) * map.cell_size();
        if geodesic != spec.shortest_path_length {
            return Err(EnvError::InvalidEpisode(format!(
                "shortest_path_length {} does not match geodesic {geodesic}",
                spec.shortest_path_length
            )));
        }
        Ok(Self {
            map,
            spec,
            to_goal,
            sensor,
        })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn spec(&self) -> &EpisodeSpec {
        &self.spec
    }

    pub fn goal(&self) -> Cell {
        self.spec.goal
    }

    pub fn sensor(&self) -> &SensorConfig {
        &self.sensor
    }

    pub fn goal_field(&self) -> &DistanceField {
        &self.to_goal
    }

    /// Geodesic distance from `c` to the goal in meters (infinite if unreachable).
    pub fn geodesic_to_goal(&self, c: Cell) -> f64 {
        self.to_goal
            .steps(c)
            .map_or(f64::INFINITY, |s| f64::from(s) * self.map.cell_size())
    }

    pub fn observe(&self, pose: Pose) -> Observation {
        observe(&self.map, pose, self.spec.goal, &self.sensor)
    }

    pub fn initial_state(&self) -> EpisodeState {
        EpisodeState {
            pose: self.spec.start,
            steps: 0,
            max_steps: self.spec.max_steps,
            help_requests: 0,
            intervention_len: 0,
            intervening: false,
            human_actions: 0,
            agent_actions: 0,
            moves: 0,
            distance_history: alloc::vec![self.geodesic_to_goal(self.spec.start.cell())],
            status: Status::Running,
        }
    }

    /// Success iff the episode ended on STOP with the agent closer than two agent
    /// widths (two cells) to the goal, measured in straight-line distance.
    pub fn is_success(&self, state: &EpisodeState) -> bool {
        state.status == Status::Stopped && state.pose.cell().distance(self.spec.goal) < 2.0
    }

    pub fn success_radius(&self) -> f64 {
        2.0 * self.map.cell_size()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Running,
    /// Terminated by a STOP action.
    Stopped,
    /// Terminated by reaching `max_steps` without STOP.
    TimedOut,
}

/// Live counters of one episode. Owned by a single episode runner.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub pose: Pose,
    pub steps: u32,
    pub max_steps: u32,
    /// Help requests so far (C_r).
    pub help_requests: u32,
    /// Steps of the intervention currently in progress (c_p); zero outside interventions.
    pub intervention_len: u32,
    pub intervening: bool,
    /// Actions executed by a human or the expert (C_h).
    pub human_actions: u32,
    /// Actions executed by the agent (C_a).
    pub agent_actions: u32,
    /// Successful forward moves.
    pub moves: u32,
    /// Geodesic distance to goal in meters: the start value, then one entry per step.
    pub distance_history: Vec<f64>,
    pub status: Status,
}

impl EpisodeState {
    pub fn is_terminated(&self) -> bool {
        self.status != Status::Running
    }

    /// Distance actually travelled, in meters.
    pub fn path_length(&self, cell_size: f64) -> f64 {
        f64::from(self.moves) * cell_size
    }

    pub fn total_actions(&self) -> u32 {
        self.human_actions + self.agent_actions
    }

    /// Opens an intervention: counts a help request and resets the current path length.
    pub fn begin_intervention(&mut self) {
        self.help_requests += 1;
        self.intervening = true;
        self.intervention_len = 0;
    }

    pub fn end_intervention(&mut self) {
        self.intervening = false;
        self.intervention_len = 0;
    }

    /// Applies one action. Moving into a blocked cell leaves the pose unchanged but
    /// still consumes the step.
    pub fn step(&mut self, env: &NavEnv, action: Action, actor: Actor) -> Result<(), EnvError> {
        if self.is_terminated() {
            return Err(EnvError::EpisodeTerminated);
        }
        match action {
            Action::Forward => {
                let next = self.pose.cell().offset(self.pose.heading);
                if env.map.is_free(next) {
                    self.pose.x = next.x;
                    self.pose.y = next.y;
                    self.moves += 1;
                }
            }
            Action::TurnLeft => self.pose.heading = self.pose.heading.left(),
            Action::TurnRight => self.pose.heading = self.pose.heading.right(),
            Action::Stop => self.status = Status::Stopped,
        }
        self.steps += 1;
        if actor.is_agent() {
            self.agent_actions += 1;
        } else {
            self.human_actions += 1;
            if self.intervening {
                self.intervention_len += 1;
            }
        }
        self.distance_history
            .push(env.geodesic_to_goal(self.pose.cell()));
        if self.status == Status::Running && self.steps >= self.max_steps {
            self.status = Status::TimedOut;
        }
        Ok(())
    }
}

/// Samples a start pose and goal uniformly among connected free pairs whose geodesic
/// distance is at least `min_geodesic` meters. Deterministic per seed.
pub fn sample_episode(
    map: &GridMap,
    seed: u64,
    min_geodesic: f64,
    max_steps: u32,
) -> Result<EpisodeSpec, EnvError> {
    let free: Vec<Cell> = map.free_cells().collect();
    let mut rng = crate::seeded_rng(seed);
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let start = free[rng.random_range(0..free.len())];
        let goal = free[rng.random_range(0..free.len())];
        let heading = Heading::ALL[rng.random_range(0..4)];
        if start == goal {
            continue;
        }
        let field = DistanceField::from_source(map, goal);
        let Some(steps) = field.steps(start) else {
            continue;
        };
        let geodesic = f64::from(steps) * map.cell_size();
        if geodesic >= min_geodesic {
            return Ok(EpisodeSpec {
                map_id: map.id().into(),
                start: Pose::new(start.x, start.y, heading),
                goal,
                shortest_path_length: geodesic,
                max_steps,
                seed,
            });
        }
    }
    Err(EnvError::NoFeasiblePair(MAX_SAMPLE_ATTEMPTS))
}
