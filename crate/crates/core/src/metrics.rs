//! Success, SPL and human-contribution metrics and their grouped aggregation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EpisodeState, NavEnv};
use crate::math::sorted_mean;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("shortest path length must be positive, got {0}")]
    NonPositiveShortestPath(f64),
    #[error("no steps were taken")]
    ZeroSteps,
    #[error("no results to aggregate")]
    EmptyResults,
}

/// Success weighted by path length: `success * l / max(p, l)`.
pub fn spl(success: bool, shortest: f64, actual: f64) -> Result<f64, MetricsError> {
    if !(shortest > 0.0) {
        return Err(MetricsError::NonPositiveShortestPath(shortest));
    }
    if !success {
        return Ok(0.0);
    }
    Ok(shortest / actual.max(shortest))
}

/// Fraction of executed steps taken by a non-agent actor.
pub fn human_contribution(human_actions: u32, agent_actions: u32) -> Result<f64, MetricsError> {
    let total = human_actions + agent_actions;
    if total == 0 {
        return Err(MetricsError::ZeroSteps);
    }
    Ok(f64::from(human_actions) / f64::from(total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub shortest_path_length: f64,
    pub actual_path_length: f64,
    pub human_actions: u32,
    pub agent_actions: u32,
    pub help_requests: u32,
    pub spl: f64,
    pub human_contribution: f64,
}

impl EpisodeResult {
    /// Result of a terminated episode.
    pub fn from_state(env: &NavEnv, state: &EpisodeState) -> Result<Self, MetricsError> {
        let success = env.is_success(state);
        let l = env.spec().shortest_path_length;
        let p = state.path_length(env.map().cell_size());
        Ok(Self {
            success,
            shortest_path_length: l,
            actual_path_length: p,
            human_actions: state.human_actions,
            agent_actions: state.agent_actions,
            help_requests: state.help_requests,
            spl: spl(success, l, p)?,
            human_contribution: human_contribution(state.human_actions, state.agent_actions)?,
        })
    }
}

/// One aggregated report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub n: usize,
    pub spl: f64,
    pub success: f64,
    pub human_contribution: f64,
}

/// Per-group arithmetic means, rows sorted by group name. Means are summed in
/// ascending value order so the output does not depend on input order.
pub fn aggregate(results: &[(String, EpisodeResult)]) -> Result<Vec<ReportRow>, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let mut groups: BTreeMap<&str, Vec<&EpisodeResult>> = BTreeMap::new();
    for (g, r) in results {
        groups.entry(g.as_str()).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(group, rs)| {
            let col = |f: fn(&EpisodeResult) -> f64| sorted_mean(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            ReportRow {
                group: group.into(),
                n: rs.len(),
                spl: col(|r| r.spl),
                success: col(|r| if r.success { 1.0 } else { 0.0 }),
                human_contribution: col(|r| r.human_contribution),
            }
        })
        .collect())
}
