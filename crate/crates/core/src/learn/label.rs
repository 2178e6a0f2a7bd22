//! Turning demonstration traces into supervised help-policy data.

use alloc::format;
use alloc::vec::Vec;

use super::bc::{Label, LabeledSample};
use super::LearnError;
use crate::agent::AgentPolicy;
use crate::env::{GridMap, NavEnv};
use crate::expert::InterventionBudget;
use crate::help::FeatureVariant;
use crate::runner::{EpisodeRunner, Phase};
use crate::trace::EpisodeTrace;
use crate::Error;

/// Replays a demonstration and labels it: ASK where the operator interrupted, PROCEED
/// on agent-controlled steps. Steps taken under human control are left out.
pub fn label_demonstration(
    trace: &EpisodeTrace,
    map: &GridMap,
    agent: &AgentPolicy,
    variant: FeatureVariant,
) -> Result<Vec<LabeledSample>, Error> {
    let malformed = |msg: alloc::string::String| Error::from(LearnError::MalformedTrace(msg));
    if map.id() != trace.header.episode.map_id {
        return Err(malformed(format!(
            "trace is for map {}, got {}",
            trace.header.episode.map_id,
            map.id()
        )));
    }
    let env = NavEnv::new(map.clone(), trace.header.episode.clone())?;
    // Recorded interventions may be released early but never exceed the header budget.
    let budget = InterventionBudget::new(trace.header.budget).map_err(|e| malformed(format!("{e}")))?;
    let mut runner = EpisodeRunner::new(env, agent, variant, budget);
    let mut out = Vec::new();
    for rec in &trace.steps {
        if runner.phase() == Phase::Terminated {
            return Err(malformed(format!("step {} after termination", rec.index)));
        }
        if runner.state().pose != rec.pose_before {
            return Err(malformed(format!("pose mismatch at step {}", rec.index)));
        }
        if rec.actor.is_agent() {
            if runner.phase() == Phase::HumanControl {
                runner.release()?;
            }
            let features = runner.decision_point()?.features.clone();
            out.push(LabeledSample {
                features,
                label: Label::Proceed,
            });
            // The recorded action wins over a re-derived one; they agree for a frozen agent.
            if runner.decision_point()?.agent_action != rec.action {
                return Err(malformed(format!("agent action differs at step {}", rec.index)));
            }
            if rec.help_requested {
                runner.ask(None)?;
                runner.decline()?;
            } else {
                runner.proceed(None)?;
            }
            continue;
        }
        if rec.interrupt || rec.help_requested {
            if runner.phase() == Phase::HumanControl {
                runner.release()?;
            }
            let features = runner.decision_point()?.features.clone();
            if rec.interrupt {
                out.push(LabeledSample {
                    features,
                    label: Label::Ask,
                });
                runner.interrupt()?;
            } else {
                runner.ask(None)?;
            }
        } else if runner.phase() != Phase::HumanControl {
            return Err(malformed(format!("step {} is not agent-controlled but no takeover started", rec.index)));
        }
        runner.intervene(rec.action, rec.actor, rec.fallback)?;
    }
    if runner.phase() != Phase::Terminated {
        return Err(malformed("trace ends before the episode terminates".into()));
    }
    Ok(out)
}
