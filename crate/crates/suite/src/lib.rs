//! The desk-scale experiment protocol: one frozen scripted agent, seeded training and
//! validation suites, and fixed training and evaluation settings.
//!
//! Every number reported by the acceptance run comes from the functions here, so a
//! rerun with the same constants reproduces it bit for bit.

use anyhow::{Context, Result};
use helpnav::trace_file::trace_hash;
use helpnav::weights::{AgentFile, HelpFile};
use helpnav_core::agent::{AgentPolicy, ENCODER_WIDTH};
use helpnav_core::env::{NavEnv, SensorConfig};
use helpnav_core::expert::{Intervener, InterventionBudget};
use helpnav_core::help::{FeatureVariant, HelpPolicy};
use helpnav_core::learn::{
    bc_train, label_demonstration, ppo_train, BcConfig, ClassWeight, PpoConfig, RewardConfig, SuiteSource,
    TrainingLogEntry,
};
use helpnav_core::metrics::{aggregate, ReportRow};
use helpnav_core::runner::{record_scripted_demo, run_episode, GateMode, HelpGate, ScriptedOperator, TraceMeta};
use helpnav_core::suite::{generate_suite, SuiteConfig};
use helpnav_core::trace::EpisodeTrace;

pub const AGENT_SEED: u64 = 1;
pub const TRAIN_SUITE_SEED: u64 = 11;
pub const VAL_SUITE_SEED: u64 = 22;
pub const TRAIN_EPISODES: usize = 200;
pub const VAL_EPISODES: usize = 100;
pub const BUDGET: u32 = 25;
pub const PPO_TIMESTEPS: u64 = 100_000;
pub const PPO_SEED: u64 = 5;
pub const EVAL_SEED: u64 = 9;
pub const DEMO_SEED: u64 = 1;
pub const DEMO_COUNT: usize = 8;
pub const NOISE_RATE: f64 = 0.2;
const TIMESTAMP: &str = "0";

/// Help-policy weights start from `seed + 100`, keeping them apart from rollout draws.
pub fn init_seed(seed: u64) -> u64 {
    seed + 100
}

pub struct Setup {
    pub agent: AgentPolicy,
    pub train: Vec<NavEnv>,
    pub val: Vec<NavEnv>,
}

impl Setup {
    pub fn desk() -> Result<Self> {
        let agent = AgentPolicy::scripted(&SensorConfig::default(), ENCODER_WIDTH, AGENT_SEED)?;
        let train = generate_suite(&SuiteConfig::training(TRAIN_EPISODES), TRAIN_SUITE_SEED)?.envs()?;
        let val = generate_suite(&SuiteConfig::validation(VAL_EPISODES), VAL_SUITE_SEED)?.envs()?;
        Ok(Self { agent, train, val })
    }

    pub fn budget(&self, m: u32) -> Result<InterventionBudget> {
        Ok(InterventionBudget::new(m)?)
    }

    /// PPO against the simulated expert at the default budget.
    pub fn train_ppo(
        &self,
        variant: FeatureVariant,
        seed: u64,
        timesteps: u64,
    ) -> Result<(HelpPolicy, Vec<TrainingLogEntry>)> {
        let mut source = SuiteSource::new(self.train.clone())?;
        let mut policy = HelpPolicy::new(variant, ENCODER_WIDTH, &mut helpnav_core::seeded_rng(init_seed(seed)))?;
        let cfg = PpoConfig {
            total_timesteps: timesteps,
            ..PpoConfig::default()
        };
        let log = ppo_train(
            &mut source,
            &self.agent,
            &mut policy,
            &Intervener::sim_expert(),
            self.budget(BUDGET)?,
            &RewardConfig::default(),
            &cfg,
            seed,
        )?;
        Ok((policy, log))
    }

    /// Scripted-operator demonstrations on the first training episodes.
    pub fn scripted_demos(&self) -> Result<Vec<EpisodeTrace>> {
        let mut rng = helpnav_core::seeded_rng(DEMO_SEED);
        let meta = TraceMeta::new(&helpnav::weights::agent_id(&self.agent), "none", &Intervener::sim_expert(), TIMESTAMP);
        self.train
            .iter()
            .take(DEMO_COUNT)
            .map(|env| {
                Ok(record_scripted_demo(
                    env.clone(),
                    &self.agent,
                    &ScriptedOperator::default(),
                    self.budget(BUDGET)?,
                    &mut rng,
                    meta.clone(),
                )?)
            })
            .collect()
    }

    /// Behavioral cloning from `demos` (3 epochs), starting from the same weights as
    /// the PPO run with seed [`PPO_SEED`].
    pub fn train_bc(&self, demos: &[EpisodeTrace]) -> Result<(HelpPolicy, Vec<f64>)> {
        let mut data = Vec::new();
        for t in demos {
            let env = self
                .train
                .iter()
                .find(|e| e.spec() == &t.header.episode)
                .context("demonstration episode is not in the training suite")?;
            data.extend(label_demonstration(t, env.map(), &self.agent, FeatureVariant::All)?);
        }
        let mut policy = HelpPolicy::new(
            FeatureVariant::All,
            ENCODER_WIDTH,
            &mut helpnav_core::seeded_rng(init_seed(PPO_SEED)),
        )?;
        let losses = bc_train(&data, &mut policy, &BcConfig::default(), ClassWeight::Balanced)?;
        Ok((policy, losses))
    }
}

pub struct Evaluation {
    pub row: ReportRow,
    pub traces: Vec<EpisodeTrace>,
}

impl Evaluation {
    pub fn hashes(&self) -> Result<Vec<String>> {
        self.traces.iter().map(trace_hash).collect()
    }
}

/// Runs every episode in order with one generator seeded by [`EVAL_SEED`], gating by
/// argmax.
pub fn evaluate(
    envs: &[NavEnv],
    agent: &AgentPolicy,
    gate: HelpGate<'_>,
    intervener: &Intervener,
    m: u32,
) -> Result<Evaluation> {
    let mut rng = helpnav_core::seeded_rng(EVAL_SEED);
    let help_id = match gate {
        HelpGate::AlwaysProceed => "none".to_string(),
        HelpGate::AlwaysAsk => "always".to_string(),
        HelpGate::Policy(p) => helpnav::weights::help_policy_id(p),
    };
    let meta = TraceMeta::new(&helpnav::weights::agent_id(agent), &help_id, intervener, TIMESTAMP);
    let budget = InterventionBudget::new(m)?;
    let mut traces = Vec::with_capacity(envs.len());
    let mut results = Vec::with_capacity(envs.len());
    for env in envs {
        let t = run_episode(env.clone(), agent, gate, intervener, budget, GateMode::Argmax, &mut rng, meta.clone())?;
        let footer = t.footer.as_ref().context("finished episode without a footer")?;
        results.push((help_id.clone(), footer.result.clone()));
        traces.push(t);
    }
    let row = aggregate(&results)?.remove(0);
    Ok(Evaluation { row, traces })
}

/// Weight-file bytes, as `save_help_policy` writes them.
pub fn help_policy_bytes(p: &HelpPolicy) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec_pretty(&HelpFile::from_policy(p))?)
}

pub fn agent_bytes(a: &AgentPolicy) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec_pretty(&AgentFile::from_agent(a))?)
}
