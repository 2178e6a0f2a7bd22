//! One live episode driven by a remote operator.
//!
//! The session owns its episode and talks to the transport through two channels:
//! inbound client messages and outbound server frames. Inbound messages are handled
//! strictly in order; the loop blocks on the inbox while a human holds control.

use std::path::PathBuf;
use std::time::Duration;

use helpnav_core::agent::AgentPolicy;
use helpnav_core::env::{Actor, NavEnv};
use helpnav_core::expert::{Intervener, InterventionBudget};
use helpnav_core::help::{DecisionMode, HelpDecision, HelpPolicy};
use helpnav_core::runner::{EpisodeRunner, GateMode, HelpGate, Phase, TraceMeta};
use helpnav_core::trace::{EpisodeTrace, TraceHeader, TRACE_FORMAT_VERSION};
use helpnav_core::Rng;
use thiserror::Error;
use tokio::sync::mpsc;
use tokio::time::timeout;

use crate::protocol::{ClientMsg, GridFrame, ResultFrame, ServerMsg, StateFrame, INTERNAL_ERROR};
use crate::trace_file::TraceWriter;
use crate::weights::{agent_id, help_policy_id};

pub const DEFAULT_RESPONSE_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionMode {
    /// The operator may interrupt at any time; the help policy is not consulted.
    Demonstration,
    /// The help policy decides when to ask; unsolicited interrupts are violations.
    Evaluation,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub mode: SessionMode,
    pub budget: InterventionBudget,
    /// How long to wait for the operator while a request or takeover is open.
    pub response_timeout: Duration,
    /// Pause before each agent step, giving the operator time to react.
    pub step_delay: Duration,
    pub gate_mode: GateMode,
    pub trace_dir: Option<PathBuf>,
    /// Fixed trace timestamp; the current time when `None`.
    pub timestamp: Option<String>,
}

impl SessionConfig {
    pub fn new(mode: SessionMode) -> Self {
        Self {
            mode,
            budget: InterventionBudget::DEFAULT,
            response_timeout: DEFAULT_RESPONSE_TIMEOUT,
            step_delay: Duration::ZERO,
            gate_mode: GateMode::Argmax,
            trace_dir: None,
            timestamp: None,
        }
    }
}

/// The frozen agent and, for evaluation sessions, the help policy.
#[derive(Debug, Clone)]
pub struct Policies {
    pub agent: AgentPolicy,
    pub help: Option<HelpPolicy>,
}

/// What the transport delivers to a session.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Message(ClientMsg),
    Malformed(String),
    Closed,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("client disconnected before the episode ended")]
    Disconnected,
    #[error(transparent)]
    Internal(#[from] anyhow::Error),
}

impl From<helpnav_core::Error> for SessionError {
    fn from(e: helpnav_core::Error) -> Self {
        SessionError::Internal(e.into())
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub trace: EpisodeTrace,
    pub path: Option<PathBuf>,
}

struct Session<'a> {
    runner: EpisodeRunner<'a>,
    gate: HelpGate<'a>,
    cfg: &'a SessionConfig,
    outbox: &'a mpsc::Sender<ServerMsg>,
    writer: Option<TraceWriter>,
    rng: Rng,
    ask_probability: Option<f64>,
    grid_sent: bool,
}

impl Session<'_> {
    async fn send(&self, msg: ServerMsg) -> Result<(), SessionError> {
        self.outbox.send(msg).await.map_err(|_| SessionError::Disconnected)
    }

    async fn send_state(&mut self) -> Result<(), SessionError> {
        self.sync_trace()?;
        let env = self.runner.env();
        let state = self.runner.state();
        let frame = StateFrame {
            step: state.steps,
            grid: (!self.grid_sent).then(|| GridFrame::from_map(env.map())),
            pose: state.pose,
            goal: env.goal(),
            phase: self.runner.phase(),
            budget_remaining: self.runner.budget_remaining(),
            distance_to_goal: *state.distance_history.last().expect("history is never empty"),
            ask_probability: self.ask_probability,
        };
        self.grid_sent = true;
        self.send(ServerMsg::State(frame)).await
    }

    fn sync_trace(&mut self) -> Result<(), SessionError> {
        if let Some(w) = self.writer.as_mut() {
            for s in &self.runner.steps()[w.steps_written()..] {
                w.append(s)?;
            }
        }
        Ok(())
    }

    async fn violation(&self, message: String) -> SessionError {
        let _ = self.send(ServerMsg::protocol_error(message.clone())).await;
        SessionError::Protocol(message)
    }

    /// Inbound message waiting while the agent drives, if any.
    async fn poll(&self, inbox: &mut mpsc::Receiver<Inbound>) -> Option<Inbound> {
        if self.cfg.step_delay.is_zero() {
            tokio::task::yield_now().await;
            match inbox.try_recv() {
                Ok(m) => Some(m),
                Err(mpsc::error::TryRecvError::Empty) => None,
                Err(mpsc::error::TryRecvError::Disconnected) => Some(Inbound::Closed),
            }
        } else {
            match timeout(self.cfg.step_delay, inbox.recv()).await {
                Ok(m) => Some(m.unwrap_or(Inbound::Closed)),
                Err(_) => None,
            }
        }
    }

    async fn agent_turn(&mut self, inbox: &mut mpsc::Receiver<Inbound>) -> Result<(), SessionError> {
        match self.poll(inbox).await {
            None => {}
            Some(Inbound::Message(ClientMsg::Interrupt)) if self.cfg.mode == SessionMode::Demonstration => {
                self.runner.interrupt()?;
                self.ask_probability = None;
                return self.send_state().await;
            }
            Some(Inbound::Message(m)) => {
                return Err(self.violation(format!("{m:?} is not allowed in phase AGENT_CONTROL")).await)
            }
            Some(Inbound::Malformed(e)) => return Err(self.violation(e).await),
            Some(Inbound::Closed) => return Err(SessionError::Disconnected),
        }
        let features = self.runner.decision_point()?.features.clone();
        let consulted = matches!(self.gate, HelpGate::Policy(_));
        let (decision, p) = match self.cfg.gate_mode {
            GateMode::Argmax => self.gate.decide(&features, DecisionMode::Argmax)?,
            GateMode::Sample => self.gate.decide(&features, DecisionMode::Sample(&mut self.rng))?,
        };
        self.ask_probability = consulted.then_some(p);
        match decision {
            HelpDecision::Proceed => self.runner.proceed(self.ask_probability)?,
            HelpDecision::Ask => {
                self.runner.ask(self.ask_probability)?;
                let step = self.runner.state().steps;
                let max_steps = self.runner.budget_remaining();
                self.send(ServerMsg::HelpRequest { step, max_steps }).await?;
            }
        }
        self.send_state().await
    }

    async fn human_turn(&mut self, inbox: &mut mpsc::Receiver<Inbound>) -> Result<(), SessionError> {
        let phase = self.runner.phase();
        let inbound = match timeout(self.cfg.response_timeout, inbox.recv()).await {
            Err(_) => {
                if phase == Phase::AwaitingHuman {
                    self.runner.run_intervention(&Intervener::sim_expert(), &mut self.rng, true)?;
                } else {
                    self.runner.release()?;
                }
                self.ask_probability = None;
                return self.send_state().await;
            }
            Ok(m) => m.unwrap_or(Inbound::Closed),
        };
        let msg = match inbound {
            Inbound::Message(m) => m,
            Inbound::Malformed(e) => return Err(self.violation(e).await),
            Inbound::Closed => return Err(SessionError::Disconnected),
        };
        self.ask_probability = None;
        match (phase, msg) {
            (_, ClientMsg::Action { action }) => self.runner.intervene(action, Actor::Human, false)?,
            (Phase::HumanControl, ClientMsg::Release) => self.runner.release()?,
            (Phase::AwaitingHuman, ClientMsg::Decline | ClientMsg::Release) => self.runner.decline()?,
            (phase, m) => {
                let name = serde_json::to_value(phase).expect("phase serializes");
                return Err(self.violation(format!("{m:?} is not allowed in phase {name}")).await);
            }
        }
        self.send_state().await
    }
}

fn header(env: &NavEnv, meta: &TraceMeta, budget: InterventionBudget) -> TraceHeader {
    TraceHeader {
        episode: env.spec().clone(),
        agent_id: meta.agent_id.clone(),
        help_policy_id: meta.help_policy_id.clone(),
        budget: budget.max_steps_per_request,
        intervener: meta.intervener,
        timestamp: meta.timestamp.clone(),
        format_version: TRACE_FORMAT_VERSION,
    }
}

/// Runs one episode to termination. Protocol violations send an error frame before
/// returning; the caller then closes the connection. When a trace directory is
/// configured every step reaches the file as it happens, so an aborted session
/// leaves a trace without a footer.
pub async fn run_session(
    env: NavEnv,
    policies: &Policies,
    cfg: &SessionConfig,
    seed: u64,
    inbox: &mut mpsc::Receiver<Inbound>,
    outbox: &mpsc::Sender<ServerMsg>,
) -> Result<SessionOutcome, SessionError> {
    let gate = match (cfg.mode, &policies.help) {
        (SessionMode::Evaluation, Some(p)) => HelpGate::Policy(p),
        _ => HelpGate::AlwaysProceed,
    };
    let help_id = match gate {
        HelpGate::Policy(p) => help_policy_id(p),
        _ => "none".to_string(),
    };
    if !policies.agent.frozen {
        let e = anyhow::anyhow!("agent must be frozen before a session");
        let _ = outbox
            .send(ServerMsg::Error {
                code: INTERNAL_ERROR.into(),
                message: e.to_string(),
            })
            .await;
        return Err(e.into());
    }
    let timestamp = cfg.timestamp.clone().unwrap_or_else(crate::files::now_timestamp);
    let meta = TraceMeta::new(&agent_id(&policies.agent), &help_id, &Intervener::live_human(), &timestamp);
    let writer = match &cfg.trace_dir {
        Some(dir) => Some(TraceWriter::create(dir, header(&env, &meta, cfg.budget))?),
        None => None,
    };
    let mut s = Session {
        runner: EpisodeRunner::new(env, &policies.agent, gate.variant(), cfg.budget),
        gate,
        cfg,
        outbox,
        writer,
        rng: helpnav_core::seeded_rng(seed),
        ask_probability: None,
        grid_sent: false,
    };
    let run = async {
        s.send_state().await?;
        loop {
            match s.runner.phase() {
                Phase::Terminated => return Ok(()),
                Phase::AgentControl => s.agent_turn(inbox).await?,
                Phase::AwaitingHuman | Phase::HumanControl => s.human_turn(inbox).await?,
            }
        }
    };
    let ended: Result<(), SessionError> = run.await;
    if let Err(e) = ended {
        if let SessionError::Internal(inner) = &e {
            let _ = s
                .send(ServerMsg::Error {
                    code: INTERNAL_ERROR.into(),
                    message: format!("{inner:#}"),
                })
                .await;
        }
        return Err(e);
    }
    s.sync_trace()?;
    let Session { runner, writer, .. } = s;
    let trace = runner.finish(meta)?;
    let footer = trace.footer.clone().expect("finished traces have a footer");
    let path = writer.map(|w| w.finish(&footer)).transpose()?;
    outbox
        .send(ServerMsg::Terminated {
            result: ResultFrame::from(&footer.result),
        })
        .await
        .map_err(|_| SessionError::Disconnected)?;
    Ok(SessionOutcome { trace, path })
}
