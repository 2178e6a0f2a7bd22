//! The episode loop: observe, let the agent propose an action, consult the help gate,
//! and either execute the agent's action or hand control to an intervener.
//!
//! [`EpisodeRunner`] is a step-driven state machine with no IO, so the same code backs
//! batch evaluation, PPO rollouts, scripted demonstrations and live operator sessions.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentPolicy;
use crate::env::{Action, Actor, EpisodeState, NavEnv, Observation};
use crate::expert::{provide_intervention, Intervener, InterventionBudget};
use crate::help::{DecisionMode, FeatureVariant, HelpDecision, HelpFeatures, HelpPolicy, HelpTracker, PointGoal};
use crate::metrics::EpisodeResult;
use crate::trace::{EpisodeTrace, StepRecord, TraceFooter, TraceHeader, TRACE_FORMAT_VERSION};
use crate::{Error, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    AgentControl,
    AwaitingHuman,
    HumanControl,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunnerError {
    #[error("{op} is not allowed in phase {phase:?}")]
    WrongPhase { op: &'static str, phase: Phase },
    #[error("agent must be frozen before it is evaluated with a help gate")]
    AgentNotFrozen,
}

/// What decides between PROCEED and ASK.
#[derive(Debug, Clone, Copy)]
pub enum HelpGate<'a> {
    AlwaysProceed,
    AlwaysAsk,
    Policy(&'a HelpPolicy),
}

impl HelpGate<'_> {
    pub fn variant(&self) -> FeatureVariant {
        match self {
            HelpGate::Policy(p) => p.variant,
            _ => FeatureVariant::All,
        }
    }

    pub fn decide(&self, features: &HelpFeatures, mode: DecisionMode<'_>) -> Result<(HelpDecision, f64), Error> {
        Ok(match self {
            HelpGate::AlwaysProceed => (HelpDecision::Proceed, 0.0),
            HelpGate::AlwaysAsk => (HelpDecision::Ask, 1.0),
            HelpGate::Policy(p) => p.decide(features, mode)?,
        })
    }
}

/// Everything computed at an agent-controlled step before the gate decides.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionPoint {
    pub observation: Observation,
    pub agent_action: Action,
    pub features: HelpFeatures,
}

/// Flags attached to the next recorded step.
#[derive(Debug, Clone, Copy, Default)]
struct PendingFlags {
    help_requested: bool,
    interrupt: bool,
}

pub struct EpisodeRunner<'a> {
    env: NavEnv,
    agent: &'a AgentPolicy,
    variant: FeatureVariant,
    budget: InterventionBudget,
    state: EpisodeState,
    tracker: HelpTracker,
    phase: Phase,
    budget_remaining: u32,
    decision: Option<DecisionPoint>,
    pending_ask_probability: Option<f64>,
    flags: PendingFlags,
    steps: Vec<StepRecord>,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(env: NavEnv, agent: &'a AgentPolicy, variant: FeatureVariant, budget: InterventionBudget) -> Self {
        let state = env.initial_state();
        Self {
            env,
            agent,
            variant,
            budget,
            state,
            tracker: HelpTracker::new(),
            phase: Phase::AgentControl,
            budget_remaining: 0,
            decision: None,
            pending_ask_probability: None,
            flags: PendingFlags::default(),
            steps: Vec::new(),
        }
    }

    pub fn env(&self) -> &NavEnv {
        &self.env
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn budget(&self) -> InterventionBudget {
        self.budget
    }

    pub fn budget_remaining(&self) -> u32 {
        self.budget_remaining
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    fn require(&self, op: &'static str, allowed: &[Phase]) -> Result<(), RunnerError> {
        if allowed.contains(&self.phase) {
            Ok(())
        } else {
            Err(RunnerError::WrongPhase { op, phase: self.phase })
        }
    }

    fn point_goal(&self) -> PointGoal {
        let obs = self.env.observe(self.state.pose);
        PointGoal {
            distance: obs.goal_distance,
            heading: obs.goal_heading,
        }
    }

    /// Observation, agent proposal and help features for the current agent step.
    pub fn decision_point(&mut self) -> Result<&DecisionPoint, Error> {
        self.require("decision_point", &[Phase::AgentControl])?;
        if self.decision.is_none() {
            let observation = self.env.observe(self.state.pose);
            let step = self.agent.act(&observation)?;
            let now = PointGoal {
                distance: observation.goal_distance,
                heading: observation.goal_heading,
            };
            let features = self
                .tracker
                .features(self.variant, &step.features, now, self.state.max_steps)?;
            self.decision = Some(DecisionPoint {
                observation,
                agent_action: step.action,
                features,
            });
        }
        Ok(self.decision.as_ref().expect("just computed"))
    }

    fn execute(&mut self, action: Action, actor: Actor, ask_probability: Option<f64>, fallback: bool) -> Result<(), Error> {
        let before = self.point_goal();
        let pose_before = self.state.pose;
        let moves = self.state.moves;
        self.state.step(&self.env, action, actor)?;
        self.tracker.record_step(before, self.state.moves > moves);
        let flags = core::mem::take(&mut self.flags);
        self.steps.push(StepRecord {
            index: self.steps.len() as u32,
            pose_before,
            action,
            actor,
            help_requested: flags.help_requested,
            interrupt: flags.interrupt,
            distance_to_goal: *self.state.distance_history.last().expect("history is never empty"),
            ask_probability,
            fallback,
        });
        self.decision = None;
        if self.state.is_terminated() {
            self.phase = Phase::Terminated;
        }
        Ok(())
    }

    /// Executes the agent's proposed action.
    pub fn proceed(&mut self, ask_probability: Option<f64>) -> Result<(), Error> {
        let action = self.decision_point()?.agent_action;
        self.execute(action, Actor::Agent, ask_probability, false)
    }

    /// Registers a help request and waits for an intervener.
    pub fn ask(&mut self, ask_probability: Option<f64>) -> Result<(), Error> {
        self.decision_point()?;
        self.state.begin_intervention();
        self.tracker.reset_help();
        self.flags.help_requested = true;
        self.pending_ask_probability = ask_probability;
        self.budget_remaining = self.budget.max_steps_per_request;
        self.phase = Phase::AwaitingHuman;
        Ok(())
    }

    /// The operator refused the pending request; the agent takes its proposed step.
    pub fn decline(&mut self) -> Result<(), Error> {
        self.require("decline", &[Phase::AwaitingHuman])?;
        self.state.end_intervention();
        self.budget_remaining = 0;
        self.phase = Phase::AgentControl;
        let action = self.decision.as_ref().expect("set by ask").agent_action;
        let p = self.pending_ask_probability.take();
        self.execute(action, Actor::Agent, p, false)
    }

    /// Operator-initiated takeover from agent control.
    pub fn interrupt(&mut self) -> Result<(), Error> {
        self.require("interrupt", &[Phase::AgentControl])?;
        self.state.begin_intervention();
        self.tracker.reset_help();
        self.flags.interrupt = true;
        self.budget_remaining = self.budget.max_steps_per_request;
        self.phase = Phase::HumanControl;
        Ok(())
    }

    /// Executes one intervention step. Control returns to the agent automatically when
    /// the budget is spent.
    pub fn intervene(&mut self, action: Action, actor: Actor, fallback: bool) -> Result<(), Error> {
        self.require("intervene", &[Phase::AwaitingHuman, Phase::HumanControl])?;
        debug_assert!(!actor.is_agent());
        self.phase = Phase::HumanControl;
        self.pending_ask_probability = None;
        self.execute(action, actor, None, fallback)?;
        self.budget_remaining = self.budget_remaining.saturating_sub(1);
        if self.phase == Phase::HumanControl && self.budget_remaining == 0 {
            self.release()?;
        }
        Ok(())
    }

    /// Ends the intervention early and returns control to the agent.
    pub fn release(&mut self) -> Result<(), Error> {
        self.require("release", &[Phase::HumanControl])?;
        self.state.end_intervention();
        self.budget_remaining = 0;
        self.phase = Phase::AgentControl;
        Ok(())
    }

    /// Runs a simulated intervention for the pending request to completion.
    pub fn run_intervention(&mut self, intervener: &Intervener, rng: &mut Rng, fallback: bool) -> Result<(), Error> {
        self.require("run_intervention", &[Phase::AwaitingHuman, Phase::HumanControl])?;
        let actions = provide_intervention(intervener, &self.env, &self.state, self.budget_remaining, rng)?;
        for a in actions {
            self.intervene(a, Actor::Expert, fallback)?;
            if self.phase != Phase::HumanControl {
                break;
            }
        }
        if self.phase == Phase::HumanControl {
            self.release()?;
        }
        Ok(())
    }

    pub fn result(&self) -> Result<EpisodeResult, Error> {
        self.require("result", &[Phase::Terminated])?;
        Ok(EpisodeResult::from_state(&self.env, &self.state)?)
    }

    /// Closes the episode into a trace.
    pub fn finish(self, meta: TraceMeta) -> Result<EpisodeTrace, Error> {
        let result = self.result()?;
        let mut trace = EpisodeTrace::new(TraceHeader {
            episode: self.env.spec().clone(),
            agent_id: meta.agent_id,
            help_policy_id: meta.help_policy_id,
            budget: self.budget.max_steps_per_request,
            intervener: meta.intervener,
            timestamp: meta.timestamp,
            format_version: TRACE_FORMAT_VERSION,
        });
        for s in self.steps {
            trace.append_step(s)?;
        }
        trace.close(TraceFooter {
            status: self.state.status,
            result,
        })?;
        Ok(trace)
    }
}

/// Identifiers written into a trace header.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub agent_id: String,
    pub help_policy_id: String,
    pub intervener: crate::expert::IntervenerKind,
    pub timestamp: String,
}

impl TraceMeta {
    pub fn new(agent_id: &str, help_policy_id: &str, intervener: &Intervener, timestamp: &str) -> Self {
        Self {
            agent_id: agent_id.into(),
            help_policy_id: help_policy_id.into(),
            intervener: intervener.kind,
            timestamp: timestamp.into(),
        }
    }
}

/// Sampling or thresholded decisions for [`run_episode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateMode {
    Sample,
    Argmax,
}

/// Runs one episode with a simulated intervener and returns its trace.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    env: NavEnv,
    agent: &AgentPolicy,
    gate: HelpGate<'_>,
    intervener: &Intervener,
    budget: InterventionBudget,
    mode: GateMode,
    rng: &mut Rng,
    meta: TraceMeta,
) -> Result<EpisodeTrace, Error> {
    if !agent.frozen {
        return Err(RunnerError::AgentNotFrozen.into());
    }
    let mut runner = EpisodeRunner::new(env, agent, gate.variant(), budget);
    while runner.phase() != Phase::Terminated {
        match runner.phase() {
            Phase::AgentControl => {
                let features = runner.decision_point()?.features.clone();
                let dm = match mode {
                    GateMode::Sample => DecisionMode::Sample(rng),
                    GateMode::Argmax => DecisionMode::Argmax,
                };
                let (decision, p) = gate.decide(&features, dm)?;
                match decision {
                    HelpDecision::Proceed => runner.proceed(Some(p))?,
                    HelpDecision::Ask => runner.ask(Some(p))?,
                }
            }
            Phase::AwaitingHuman | Phase::HumanControl => runner.run_intervention(intervener, rng, false)?,
            Phase::Terminated => unreachable!(),
        }
    }
    runner.finish(meta)
}

/// Stand-in for a human demonstrator: watches the geodesic distance and takes over
/// with the shortest-path expert once the agent has gone `patience` steps without
/// getting closer to the goal than ever before.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedOperator {
    pub patience: u32,
    /// Steps of manual control per takeover (capped by the budget).
    pub takeover_steps: u32,
}

impl Default for ScriptedOperator {
    fn default() -> Self {
        Self {
            patience: 12,
            takeover_steps: 10,
        }
    }
}

/// Records a demonstration episode in which the scripted operator interrupts the
/// autonomous agent. Human steps are tagged `HUMAN`.
pub fn record_scripted_demo(
    env: NavEnv,
    agent: &AgentPolicy,
    operator: &ScriptedOperator,
    budget: InterventionBudget,
    rng: &mut Rng,
    meta: TraceMeta,
) -> Result<EpisodeTrace, Error> {
    let mut runner = EpisodeRunner::new(env, agent, FeatureVariant::All, budget);
    let mut best = *runner.state().distance_history.last().expect("start distance");
    let mut stale = 0u32;
    let expert = Intervener::sim_expert();
    while runner.phase() != Phase::Terminated {
        if stale >= operator.patience {
            runner.interrupt()?;
            let grant = operator.takeover_steps.min(runner.budget_remaining()).max(1);
            let actions = provide_intervention(&expert, runner.env(), runner.state(), grant, rng)?;
            for a in actions {
                runner.intervene(a, Actor::Human, false)?;
                if runner.phase() != Phase::HumanControl {
                    break;
                }
            }
            if runner.phase() == Phase::HumanControl {
                runner.release()?;
            }
            stale = 0;
            best = best.min(*runner.state().distance_history.last().expect("non-empty"));
            continue;
        }
        runner.proceed(None)?;
        let d = *runner.state().distance_history.last().expect("non-empty");
        if d < best {
            best = d;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    runner.finish(meta)
}
