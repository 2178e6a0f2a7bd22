//! PPO training of the help policy against a simulated intervener.
//!
//! Each PPO decision is one gate decision: PROCEED executes a single agent step,
//! ASK runs a whole intervention of up to M steps. The reward of a decision is the
//! change of the cumulative help reward across it; the terminal decision also pays
//! the episode SPL minus the human-ratio penalty.

use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ppo::{self, EnvStep, PpoConfig, PpoEnv};
use super::reward::{total_reward, HelpRewardAccumulator, RewardConfig};
use super::LearnError;
use crate::agent::AgentPolicy;
use crate::env::NavEnv;
use crate::expert::{Intervener, InterventionBudget};
use crate::help::{FeatureVariant, HelpPolicy};
use crate::metrics;
use crate::runner::{EpisodeRunner, Phase};
use crate::{Error, Rng};

/// Supplies training episodes.
pub trait EpisodeSource {
    fn next_env(&mut self, rng: &mut Rng) -> Result<NavEnv, Error>;
}

/// Draws uniformly from a fixed list of episodes.
#[derive(Debug, Clone)]
pub struct SuiteSource {
    envs: Vec<NavEnv>,
}

impl SuiteSource {
    pub fn new(envs: Vec<NavEnv>) -> Result<Self, LearnError> {
        if envs.is_empty() {
            return Err(LearnError::EmptyDataset);
        }
        Ok(Self { envs })
    }
}

impl EpisodeSource for SuiteSource {
    fn next_env(&mut self, rng: &mut Rng) -> Result<NavEnv, Error> {
        Ok(self.envs[rng.random_range(0..self.envs.len())].clone())
    }
}

/// The gate decision process seen by PPO. Action 0 is PROCEED, 1 is ASK.
pub struct HelpGateEnv<'a> {
    source: &'a mut dyn EpisodeSource,
    agent: &'a AgentPolicy,
    variant: FeatureVariant,
    intervener: Intervener,
    budget: InterventionBudget,
    reward: RewardConfig,
    runner: Option<EpisodeRunner<'a>>,
    acc: HelpRewardAccumulator,
    last_help_reward: f64,
}

impl<'a> HelpGateEnv<'a> {
    pub fn new(
        source: &'a mut dyn EpisodeSource,
        agent: &'a AgentPolicy,
        variant: FeatureVariant,
        intervener: Intervener,
        budget: InterventionBudget,
        reward: RewardConfig,
    ) -> Self {
        Self {
            source,
            agent,
            variant,
            intervener,
            budget,
            reward,
            runner: None,
            acc: HelpRewardAccumulator::new(),
            last_help_reward: 0.0,
        }
    }

    fn observation(&mut self) -> Result<Vec<f64>, Error> {
        let runner = self.runner.as_mut().expect("reset before step");
        Ok(runner.decision_point()?.features.values.clone())
    }
}

impl PpoEnv for HelpGateEnv<'_> {
    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut Rng) -> Result<Vec<f64>, Error> {
        let env = self.source.next_env(rng)?;
        self.runner = Some(EpisodeRunner::new(env, self.agent, self.variant, self.budget));
        self.acc = HelpRewardAccumulator::new();
        self.last_help_reward = 0.0;
        self.observation()
    }

    fn step(&mut self, action: usize, rng: &mut Rng) -> Result<EnvStep, Error> {
        let runner = self.runner.as_mut().expect("reset before step");
        if action == 1 {
            runner.ask(None)?;
            runner.run_intervention(&self.intervener, rng, false)?;
        } else {
            runner.proceed(None)?;
        }
        let state = runner.state();
        self.acc.update(&state.distance_history, &self.reward);
        let help = self.acc.value(state.help_requests, state.intervention_len);
        let mut reward = help - self.last_help_reward;
        self.last_help_reward = help;
        if runner.phase() == Phase::Terminated {
            let env = runner.env();
            let success = env.is_success(state);
            let spl = metrics::spl(
                success,
                env.spec().shortest_path_length,
                state.path_length(env.map().cell_size()),
            )?;
            reward += total_reward(0.0, spl, state.human_actions, state.agent_actions, &self.reward)?;
            return Ok(EnvStep {
                reward,
                done: true,
                observation: Vec::new(),
                success: Some(success),
            });
        }
        Ok(EnvStep {
            reward,
            done: false,
            observation: self.observation()?,
            success: None,
        })
    }
}

/// One line of the help-policy training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogEntry {
    pub update: usize,
    pub timesteps: u64,
    pub mean_return: f64,
    pub ask_rate: f64,
    pub success_rate: f64,
    pub loss_policy: f64,
    pub loss_value: f64,
}

/// Trains `policy` in place with PPO. The agent must be frozen and is verified
/// unchanged afterwards.
#[allow(clippy::too_many_arguments)]
pub fn ppo_train(
    source: &mut dyn EpisodeSource,
    agent: &AgentPolicy,
    policy: &mut HelpPolicy,
    intervener: &Intervener,
    budget: InterventionBudget,
    reward: &RewardConfig,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<Vec<TrainingLogEntry>, Error> {
    if !agent.frozen {
        return Err(LearnError::AgentNotFrozen.into());
    }
    reward.validate()?;
    let expected = policy.variant.width(agent.encoder_width());
    if policy.input_width() != expected {
        return Err(crate::help::HelpError::VariantShapeMismatch {
            variant: policy.variant,
            expected,
            found: policy.input_width(),
        }
        .into());
    }
    let fingerprint = agent.fingerprint();
    let mut nets = [policy.net.clone()];
    let stats = {
        let mut env = HelpGateEnv::new(source, agent, policy.variant, *intervener, budget, *reward);
        ppo::train(&mut env, &mut nets, cfg, seed)?
    };
    if agent.fingerprint() != fingerprint {
        return Err(LearnError::FrozenViolation.into());
    }
    let [net] = nets;
    policy.net = net;
    Ok(stats
        .into_iter()
        .map(|s| TrainingLogEntry {
            update: s.update,
            timesteps: s.timesteps,
            mean_return: s.mean_return,
            ask_rate: s.action_fraction[1],
            success_rate: s.success_rate,
            loss_policy: s.loss_policy,
            loss_value: s.loss_value,
        })
        .collect())
}
