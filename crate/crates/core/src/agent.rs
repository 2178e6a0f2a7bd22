//! The frozen navigation agent.
//!
//! Two controllers share one interface: a scripted greedy-bearing controller with
//! local sensing, and a small learned policy. Both run a feature encoder on every
//! observation; its output is what the help policy sees as "encoder features".

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_4;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EpisodeState, GridMap, NavEnv, Observation, SensorConfig};
use crate::learn::ppo::{self, EnvStep, PpoConfig, PpoEnv, UpdateStats};
use crate::learn::LearnError;
use crate::nnet::{chain_forward, MlpParams, NnetError};
use crate::{Error, Rng};

pub const ENCODER_WIDTH: usize = 64;
const HEAD_HIDDEN: usize = 64;
const ANGLE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgentKind {
    Scripted,
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPolicy {
    pub kind: AgentKind,
    /// Observation (rays + point goal) to feature vector.
    pub encoder: MlpParams,
    /// Features to four action logits; `Learned` only.
    pub head: Option<MlpParams>,
    pub frozen: bool,
}

/// Output of one agent evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub action: Action,
    pub features: Vec<f64>,
}

impl AgentPolicy {
    /// Scripted controller with a fixed, seeded random encoder. Always frozen.
    pub fn scripted(sensor: &SensorConfig, encoder_width: usize, seed: u64) -> Result<Self, NnetError> {
        let mut rng = crate::seeded_rng(seed);
        let encoder = MlpParams::init(&[sensor.input_width(), ENCODER_WIDTH, encoder_width], &mut rng)?;
        Ok(Self {
            kind: AgentKind::Scripted,
            encoder,
            head: None,
            frozen: true,
        })
    }

    /// Untrained learned policy (not frozen yet).
    pub fn learned(sensor: &SensorConfig, encoder_width: usize, seed: u64) -> Result<Self, NnetError> {
        let mut rng = crate::seeded_rng(seed);
        let encoder = MlpParams::init(&[sensor.input_width(), ENCODER_WIDTH, encoder_width], &mut rng)?;
        let head = MlpParams::init(&[encoder_width, HEAD_HIDDEN, Action::ALL.len()], &mut rng)?;
        Ok(Self {
            kind: AgentKind::Learned,
            encoder,
            head: Some(head),
            frozen: false,
        })
    }

    pub fn encoder_width(&self) -> usize {
        self.encoder.output_width()
    }

    /// Hash over every weight of the agent, used to prove it was never modified.
    pub fn fingerprint(&self) -> u64 {
        let mut h = self.encoder.fingerprint();
        if let Some(head) = &self.head {
            h = h.rotate_left(17) ^ head.fingerprint();
        }
        h
    }

    pub fn networks(&self) -> Vec<MlpParams> {
        let mut nets = alloc::vec![self.encoder.clone()];
        nets.extend(self.head.iter().cloned());
        nets
    }

    /// Chooses an action and returns the shared encoder features. Learned policies
    /// act greedily here; sampling only happens during pre-training.
    pub fn act(&self, obs: &Observation) -> Result<AgentStep, NnetError> {
        let input = obs.to_input();
        let features = self.encoder.predict(&input)?;
        let action = match (&self.kind, &self.head) {
            (AgentKind::Learned, Some(head)) => {
                let logits = head.predict(&features)?;
                let best = logits
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, v)| if *v > logits[best] { i } else { best });
                Action::ALL[best]
            }
            _ => scripted_action(obs),
        };
        Ok(AgentStep { action, features })
    }
}

/// Greedy-bearing rule with local sensing:
///
/// 1. On the goal cell: STOP.
/// 2. Goal behind (|bearing| > 3π/4): turn toward the goal's side (left on a tie).
/// 3. Goal ahead (|bearing| <= π/4): FORWARD if the next cell is free, otherwise turn
///    toward the longer of the left/right rays (left on a tie).
/// 4. Goal to one side: turn toward it if that side is open; else FORWARD if possible;
///    else turn away.
pub fn scripted_action(obs: &Observation) -> Action {
    let cell = obs.cell_size;
    if obs.goal_distance < 0.5 * cell {
        return Action::Stop;
    }
    let open = |ray: f64| ray > 1.5 * cell;
    let bearing = obs.goal_heading;
    let toward = |left: bool| if left { Action::TurnLeft } else { Action::TurnRight };
    let magnitude = crate::math::abs(bearing);
    if magnitude > 3.0 * FRAC_PI_4 + ANGLE_EPS {
        return toward(bearing >= 0.0);
    }
    if magnitude <= FRAC_PI_4 + ANGLE_EPS {
        if open(obs.front()) {
            return Action::Forward;
        }
        return toward(obs.left() >= obs.right());
    }
    let goal_left = bearing > 0.0;
    let side = if goal_left { obs.left() } else { obs.right() };
    if open(side) {
        toward(goal_left)
    } else if open(obs.front()) {
        Action::Forward
    } else {
        toward(!goal_left)
    }
}

/// Reward shaping for agent pre-training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub success_bonus: f64,
    pub slack_penalty: f64,
    pub min_geodesic: f64,
    pub max_steps: u32,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            success_bonus: 2.5,
            slack_penalty: 0.01,
            min_geodesic: 0.3,
            max_steps: 150,
        }
    }
}

struct PretrainEnv<'a> {
    maps: &'a [GridMap],
    sensor: SensorConfig,
    cfg: PretrainConfig,
    current: Option<(NavEnv, EpisodeState)>,
    episode_seed: u64,
}

impl PpoEnv for PretrainEnv<'_> {
    fn num_actions(&self) -> usize {
        Action::ALL.len()
    }

    fn reset(&mut self, rng: &mut Rng) -> Result<Vec<f64>, Error> {
        let map = &self.maps[rng.random_range(0..self.maps.len())];
        self.episode_seed = rng.random();
        let spec = crate::env::sample_episode(map, self.episode_seed, self.cfg.min_geodesic, self.cfg.max_steps)?;
        let env = NavEnv::with_sensor(map.clone(), spec, self.sensor)?;
        let state = env.initial_state();
        let obs = env.observe(state.pose).to_input();
        self.current = Some((env, state));
        Ok(obs)
    }

    fn step(&mut self, action: usize, _rng: &mut Rng) -> Result<EnvStep, Error> {
        let (env, state) = self.current.as_mut().expect("reset before step");
        let action = Action::from_index(action).expect("action index in range");
        let before = *state.distance_history.last().expect("history has the start");
        state.step(env, action, crate::env::Actor::Agent)?;
        let after = *state.distance_history.last().expect("history grows by one");
        let mut reward = before - after - self.cfg.slack_penalty;
        let done = state.is_terminated();
        let success = done && env.is_success(state);
        if success {
            reward += self.cfg.success_bonus;
        }
        Ok(EnvStep {
            reward,
            done,
            observation: env.observe(state.pose).to_input(),
            success: done.then_some(success),
        })
    }
}

/// Trains a learned agent with PPO on dense progress reward, then freezes it.
pub fn pretrain_agent(
    maps: &[GridMap],
    sensor: &SensorConfig,
    ppo_cfg: &PpoConfig,
    pretrain: &PretrainConfig,
    seed: u64,
) -> Result<(AgentPolicy, Vec<UpdateStats>), Error> {
    if maps.is_empty() {
        return Err(LearnError::EmptyDataset.into());
    }
    let mut agent = AgentPolicy::learned(sensor, ENCODER_WIDTH, seed)?;
    let mut nets = agent.networks();
    let mut env = PretrainEnv {
        maps,
        sensor: *sensor,
        cfg: *pretrain,
        current: None,
        episode_seed: 0,
    };
    let log = ppo::train(&mut env, &mut nets, ppo_cfg, seed)?;
    let mut nets = nets.into_iter();
    agent.encoder = nets.next().expect("encoder");
    agent.head = nets.next();
    agent.frozen = true;
    Ok((agent, log))
}

/// Action logits of a learned agent, for tests and diagnostics.
pub fn learned_logits(agent: &AgentPolicy, obs: &Observation) -> Result<Vec<f64>, NnetError> {
    let nets = agent.networks();
    Ok(chain_forward(&nets, &obs.to_input())?.0)
}
