use alloc::vec;
use alloc::vec::Vec;

use super::LearnError;

/// Generalized advantage estimation over one episode segment that ends in a terminal
/// state (the value after the last step is 0). Returns `(advantages, returns)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), LearnError> {
    if rewards.len() != values.len() {
        return Err(LearnError::LengthMismatch(rewards.len(), values.len()));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * gae_lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales advantages to zero mean and unit variance across a batch.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = crate::math::sqrt(var) + 1e-8;
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}
