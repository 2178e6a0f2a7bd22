//! Cumulative help reward and the episode total reward.

use serde::{Deserialize, Serialize};

use super::LearnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Constant divisor `1 + lambda_d` applied to every navigation-reward difference.
    pub lambda_d: f64,
    /// Weight of the human-action ratio penalty.
    pub lambda_h: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_d: 0.99,
            lambda_h: 0.5,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.lambda_d >= 0.0 && self.lambda_h >= 0.0 {
            Ok(())
        } else {
            Err(LearnError::InvalidConfig("reward weights must be non-negative"))
        }
    }
}

fn scale(help_requests: u32, intervention_len: u32) -> f64 {
    1.0 / (1.0 + f64::from(help_requests) * f64::from(intervention_len))
}

/// Help reward at step `t = r_nav.len() - 1`:
///
/// `1 / (1 + C_r * c_p) * sum_{i=1..t} (r_nav[i] - r_nav[i-1]) / (1 + lambda_d)`
///
/// where `r_nav[i]` is the negated geodesic distance to the goal after step `i`.
/// The `i = 0` term has no predecessor and contributes nothing.
pub fn help_reward(r_nav: &[f64], help_requests: u32, intervention_len: u32, cfg: &RewardConfig) -> f64 {
    let mut sum = 0.0;
    for w in r_nav.windows(2) {
        sum += (w[1] - w[0]) / (1.0 + cfg.lambda_d);
    }
    scale(help_requests, intervention_len) * sum
}

/// `r_help + r_spl - lambda_h * C_h / (C_h + C_a)`.
pub fn total_reward(
    r_help: f64,
    r_spl: f64,
    human_actions: u32,
    agent_actions: u32,
    cfg: &RewardConfig,
) -> Result<f64, LearnError> {
    let total = human_actions + agent_actions;
    if total == 0 {
        return Err(LearnError::ZeroSteps);
    }
    Ok(r_help + r_spl - cfg.lambda_h * f64::from(human_actions) / f64::from(total))
}

/// Incremental form of [`help_reward`] over a growing distance history. Produces
/// bit-identical values to the batch function.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HelpRewardAccumulator {
    sum: f64,
    consumed: usize,
}

impl HelpRewardAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds in any new entries of a geodesic-distance history (meters).
    pub fn update(&mut self, distances: &[f64], cfg: &RewardConfig) {
        let start = self.consumed.max(1);
        for i in start..distances.len() {
            let (prev, cur) = (-distances[i - 1], -distances[i]);
            self.sum += (cur - prev) / (1.0 + cfg.lambda_d);
        }
        self.consumed = self.consumed.max(distances.len());
    }

    pub fn value(&self, help_requests: u32, intervention_len: u32) -> f64 {
        scale(help_requests, intervention_len) * self.sum
    }
}
