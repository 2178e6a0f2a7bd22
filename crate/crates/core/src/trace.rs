//! Episode traces: per-step records with a header and footer, replay through the
//! simulator, and the intervention-budget linter.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, Actor, EpisodeSpec, GridMap, NavEnv, Pose, Status};
use crate::expert::IntervenerKind;
use crate::metrics::EpisodeResult;

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("step index gap: expected {expected}, found {found}")]
    IndexGap { expected: u32, found: u32 },
    #[error("replay diverged: {0}")]
    ReplayDivergence(String),
    #[error("trace already has a footer")]
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub episode: EpisodeSpec,
    pub agent_id: String,
    pub help_policy_id: String,
    /// Intervention budget M; `u32::MAX` means unlimited.
    pub budget: u32,
    pub intervener: IntervenerKind,
    pub timestamp: String,
    pub format_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: u32,
    pub pose_before: Pose,
    pub action: Action,
    pub actor: Actor,
    /// First step of an intervention opened by an ASK decision, or an agent step
    /// executed after the operator declined a request.
    pub help_requested: bool,
    /// First step of an operator-initiated takeover.
    pub interrupt: bool,
    /// Geodesic distance to the goal after this step, in meters.
    pub distance_to_goal: f64,
    /// Help-policy output, recorded only on steps where the policy was consulted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ask_probability: Option<f64>,
    /// Expert step substituted for an operator who did not answer in time.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub status: Status,
    pub result: EpisodeResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub footer: Option<TraceFooter>,
}

impl EpisodeTrace {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header,
            steps: Vec::new(),
            footer: None,
        }
    }

    pub fn next_index(&self) -> u32 {
        self.steps.len() as u32
    }

    /// Validates that `record` continues the index sequence; does not modify the trace.
    pub fn check_next(&self, record: &StepRecord) -> Result<(), TraceError> {
        if self.footer.is_some() {
            return Err(TraceError::Closed);
        }
        let expected = self.next_index();
        if record.index != expected {
            return Err(TraceError::IndexGap {
                expected,
                found: record.index,
            });
        }
        Ok(())
    }

    pub fn append_step(&mut self, record: StepRecord) -> Result<(), TraceError> {
        self.check_next(&record)?;
        self.steps.push(record);
        Ok(())
    }

    pub fn close(&mut self, footer: TraceFooter) -> Result<(), TraceError> {
        if self.footer.is_some() {
            return Err(TraceError::Closed);
        }
        self.footer = Some(footer);
        Ok(())
    }

    /// Steps taken by a non-agent actor over all steps.
    pub fn contribution_from_steps(&self) -> Option<f64> {
        if self.steps.is_empty() {
            return None;
        }
        let human = self.steps.iter().filter(|s| !s.actor.is_agent()).count();
        Some(human as f64 / self.steps.len() as f64)
    }

    pub fn interrupt_count(&self) -> usize {
        self.steps.iter().filter(|s| s.interrupt).count()
    }
}

fn diverged(msg: String) -> TraceError {
    TraceError::ReplayDivergence(msg)
}

/// Re-executes every recorded action and checks that poses, distances and the footer
/// result are reproduced exactly.
pub fn replay(trace: &EpisodeTrace, map: &GridMap) -> Result<EpisodeResult, TraceError> {
    let env = NavEnv::new(map.clone(), trace.header.episode.clone())
        .map_err(|e| diverged(format!("episode does not load: {e}")))?;
    if trace.steps.is_empty() {
        return Err(diverged("trace has no steps and therefore no terminal".into()));
    }
    let mut state = env.initial_state();
    for (i, rec) in trace.steps.iter().enumerate() {
        if rec.index as usize != i {
            return Err(diverged(format!("step {i} carries index {}", rec.index)));
        }
        if rec.pose_before != state.pose {
            return Err(diverged(format!(
                "step {i}: recorded pose {:?} but simulator is at {:?}",
                rec.pose_before, state.pose
            )));
        }
        if rec.help_requested || rec.interrupt {
            state.begin_intervention();
        }
        if rec.actor.is_agent() {
            state.end_intervention();
        }
        state
            .step(&env, rec.action, rec.actor)
            .map_err(|e| diverged(format!("step {i}: {e}")))?;
        let d = *state.distance_history.last().expect("history is never empty");
        if d != rec.distance_to_goal {
            return Err(diverged(format!(
                "step {i}: recorded distance {} but simulator gives {d}",
                rec.distance_to_goal
            )));
        }
    }
    if !state.is_terminated() {
        return Err(diverged("trace ends before the episode terminated".into()));
    }
    let result = EpisodeResult::from_state(&env, &state).map_err(|e| diverged(format!("{e}")))?;
    let footer = trace
        .footer
        .as_ref()
        .ok_or_else(|| diverged("trace has no footer".into()))?;
    if footer.status != state.status {
        return Err(diverged(format!(
            "footer status {:?} but replay ends {:?}",
            footer.status, state.status
        )));
    }
    if footer.result != result {
        return Err(diverged(format!(
            "footer result {:?} differs from replayed {result:?}",
            footer.result
        )));
    }
    Ok(result)
}

/// A run of consecutive non-agent steps longer than the budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetViolation {
    pub first_step: u32,
    pub length: u32,
}

/// Finds interventions that ran past `budget` steps. A run of non-agent steps ends at
/// an agent step or where a new request or interrupt opens the next intervention.
pub fn lint_budget(trace: &EpisodeTrace, budget: u32) -> Vec<BudgetViolation> {
    let mut out = Vec::new();
    let mut run: Option<(u32, u32)> = None;
    let mut flush = |run: &mut Option<(u32, u32)>| {
        if let Some((first, len)) = run.take() {
            if len > budget {
                out.push(BudgetViolation { first_step: first, length: len });
            }
        }
    };
    for s in &trace.steps {
        if s.actor.is_agent() {
            flush(&mut run);
            continue;
        }
        if s.help_requested || s.interrupt {
            flush(&mut run);
        }
        match &mut run {
            Some((_, len)) => *len += 1,
            None => run = Some((s.index, 1)),
        }
    }
    flush(&mut run);
    out
}

/// Non-agent steps that carry a help-policy probability (the policy must not be
/// consulted while a human or the expert is in control).
pub fn lint_policy_silence(trace: &EpisodeTrace) -> Vec<u32> {
    trace
        .steps
        .iter()
        .filter(|s| !s.actor.is_agent() && s.ask_probability.is_some())
        .map(|s| s.index)
        .collect()
}
