//! Clipped-surrogate PPO over a discrete action space.
//!
//! The policy is a chain of networks ending in action logits; the value function is a
//! separate perceptron. Rollouts always consist of whole episodes, so every segment
//! ends in a terminal state.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::gae::{compute_gae, normalize_advantages};
use super::LearnError;
use crate::math;
use crate::nnet::{
    adam_step, chain_backward, chain_forward, clip_grad_norm, log_softmax, softmax, MlpGrads, MlpParams,
    NnetError, OptState,
};
use crate::{Error, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub total_timesteps: u64,
    pub rollout_length: usize,
    pub clip_epsilon: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    /// Hidden widths of the value network; input and the scalar output are implied.
    pub value_hidden: Vec<usize>,
    pub entropy_coeff: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            total_timesteps: 100_000,
            rollout_length: 1024,
            clip_epsilon: 0.2,
            gae_lambda: 0.95,
            gamma: 0.99,
            epochs_per_update: 4,
            minibatch_size: 256,
            value_hidden: vec![64, 64],
            entropy_coeff: 0.01,
            learning_rate: 1e-3,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let positive = self.rollout_length > 0
            && self.epochs_per_update > 0
            && self.minibatch_size > 0
            && self.gamma > 0.0
            && self.gae_lambda > 0.0
            && self.learning_rate > 0.0
            && self.max_grad_norm > 0.0
            && self.entropy_coeff >= 0.0
            && self.value_hidden.iter().all(|w| *w > 0);
        if !positive {
            return Err(LearnError::InvalidConfig("PPO hyperparameters must be positive"));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(LearnError::InvalidConfig("clip_epsilon must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub reward: f64,
    pub done: bool,
    /// Next observation; ignored when `done`.
    pub observation: Vec<f64>,
    /// Outcome of the episode, reported on the terminal step.
    pub success: Option<bool>,
}

/// An episodic environment with discrete actions.
pub trait PpoEnv {
    fn num_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut Rng) -> Result<Vec<f64>, Error>;
    fn step(&mut self, action: usize, rng: &mut Rng) -> Result<EnvStep, Error>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: usize,
    pub timesteps: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    /// Fraction of sampled actions per action index.
    pub action_fraction: Vec<f64>,
    pub loss_policy: f64,
    pub loss_value: f64,
    pub entropy: f64,
}

/// One sample of the surrogate objective.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample<'a> {
    pub observation: &'a [f64],
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
}

/// Mean over the batch of `-min(ratio * A, clip(ratio) * A) - entropy_coeff * H`,
/// with gradients for every network in the policy chain.
pub fn surrogate_loss(
    policy: &[MlpParams],
    batch: &[PolicySample<'_>],
    clip_epsilon: f64,
    entropy_coeff: f64,
) -> Result<(f64, f64, Vec<MlpGrads>), NnetError> {
    let mut grads: Vec<MlpGrads> = policy.iter().map(MlpGrads::zeros_like).collect();
    let mut loss = 0.0;
    let mut entropy_sum = 0.0;
    let n = batch.len().max(1) as f64;
    for s in batch {
        let (logits, caches) = chain_forward(policy, s.observation)?;
        let logp = log_softmax(&logits);
        let probs = softmax(&logits);
        let ratio = math::exp(logp[s.action] - s.old_log_prob);
        let unclipped = ratio * s.advantage;
        let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * s.advantage;
        let entropy: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        loss += -unclipped.min(clipped) - entropy_coeff * entropy;
        entropy_sum += entropy;

        let mut dlogits = vec![0.0; logits.len()];
        // The clipped branch is active (and flat) when it is the strict minimum.
        if unclipped <= clipped {
            let dlogp = -ratio * s.advantage;
            for (j, d) in dlogits.iter_mut().enumerate() {
                let onehot = if j == s.action { 1.0 } else { 0.0 };
                *d += dlogp * (onehot - probs[j]);
            }
        }
        for (j, d) in dlogits.iter_mut().enumerate() {
            // d(-c * H)/dz_j = c * p_j * (log p_j + H)
            *d += entropy_coeff * probs[j] * (logp[j] + entropy);
        }
        for (acc, g) in grads.iter_mut().zip(chain_backward(policy, &caches, &dlogits)?) {
            acc.add_assign(&g);
        }
    }
    for g in &mut grads {
        g.scale(1.0 / n);
    }
    Ok((loss / n, entropy_sum / n, grads))
}

/// Mean of `0.5 * (V(x) - target)^2` and its gradient.
pub fn value_loss(value: &MlpParams, batch: &[(&[f64], f64)]) -> Result<(f64, MlpGrads), NnetError> {
    let mut grads = MlpGrads::zeros_like(value);
    let mut loss = 0.0;
    let n = batch.len().max(1) as f64;
    for (x, target) in batch {
        let (out, cache) = value.forward(x)?;
        let err = out[0] - target;
        loss += 0.5 * err * err;
        grads.add_assign(&value.backward(&cache, &[err])?);
    }
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}

fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

struct Transition {
    observation: Vec<f64>,
    action: usize,
    log_prob: f64,
    value: f64,
    reward: f64,
    done: bool,
}

/// Trains `policy` in place. The value network is initialized from `seed` and discarded.
pub fn train(
    env: &mut dyn PpoEnv,
    policy: &mut [MlpParams],
    cfg: &PpoConfig,
    seed: u64,
) -> Result<Vec<UpdateStats>, Error> {
    cfg.validate()?;
    let input_width = policy.first().ok_or(NnetError::InvalidLayers)?.input_width();
    let num_actions = env.num_actions();
    if policy.last().map(MlpParams::output_width) != Some(num_actions) {
        return Err(NnetError::InvalidLayers.into());
    }
    let mut rng = crate::seeded_rng(seed);
    let mut sizes = vec![input_width];
    sizes.extend_from_slice(&cfg.value_hidden);
    sizes.push(1);
    let mut value = MlpParams::init(&sizes, &mut rng)?;
    let mut policy_opt: Vec<OptState> = policy.iter().map(|p| OptState::new(p, cfg.learning_rate)).collect();
    let mut value_opt = OptState::new(&value, cfg.learning_rate);

    let mut log = Vec::new();
    let mut timesteps: u64 = 0;
    while timesteps < cfg.total_timesteps {
        // Collect whole episodes until the rollout is full.
        let mut batch: Vec<Transition> = Vec::with_capacity(cfg.rollout_length + 512);
        let mut returns_seen = Vec::new();
        let mut successes = 0usize;
        let mut counts = vec![0usize; num_actions];
        let mut obs = env.reset(&mut rng)?;
        let mut ep_return = 0.0;
        loop {
            let logits = chain_forward(policy, &obs)?.0;
            let probs = softmax(&logits);
            let action = sample_categorical(&probs, &mut rng);
            let log_prob = log_softmax(&logits)[action];
            let v = value.predict(&obs)?[0];
            let step = env.step(action, &mut rng)?;
            counts[action] += 1;
            ep_return += step.reward;
            batch.push(Transition {
                observation: core::mem::take(&mut obs),
                action,
                log_prob,
                value: v,
                reward: step.reward,
                done: step.done,
            });
            if step.done {
                returns_seen.push(ep_return);
                ep_return = 0.0;
                if step.success == Some(true) {
                    successes += 1;
                }
                if batch.len() >= cfg.rollout_length {
                    break;
                }
                obs = env.reset(&mut rng)?;
            } else {
                obs = step.observation;
            }
        }
        timesteps += batch.len() as u64;

        let mut advantages = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        let mut start = 0;
        for end in 0..batch.len() {
            if batch[end].done {
                let seg = &batch[start..=end];
                let r: Vec<f64> = seg.iter().map(|t| t.reward).collect();
                let v: Vec<f64> = seg.iter().map(|t| t.value).collect();
                let (a, ret) = compute_gae(&r, &v, cfg.gamma, cfg.gae_lambda)?;
                advantages.extend(a);
                targets.extend(ret);
                start = end + 1;
            }
        }
        normalize_advantages(&mut advantages);

        let mut indices: Vec<usize> = (0..batch.len()).collect();
        let (mut lp_sum, mut lv_sum, mut ent_sum, mut n_mb) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..cfg.epochs_per_update {
            indices.shuffle(&mut rng);
            for chunk in indices.chunks(cfg.minibatch_size) {
                let samples: Vec<PolicySample<'_>> = chunk
                    .iter()
                    .map(|&i| PolicySample {
                        observation: &batch[i].observation,
                        action: batch[i].action,
                        old_log_prob: batch[i].log_prob,
                        advantage: advantages[i],
                    })
                    .collect();
                let (lp, ent, mut pgrads) =
                    surrogate_loss(policy, &samples, cfg.clip_epsilon, cfg.entropy_coeff)?;
                let vbatch: Vec<(&[f64], f64)> = chunk
                    .iter()
                    .map(|&i| (batch[i].observation.as_slice(), targets[i]))
                    .collect();
                let (lv, mut vgrads) = value_loss(&value, &vbatch)?;
                if !lp.is_finite() {
                    return Err(LearnError::DivergedTraining("policy loss").into());
                }
                if !lv.is_finite() {
                    return Err(LearnError::DivergedTraining("value loss").into());
                }
                {
                    let mut refs: Vec<&mut MlpGrads> = pgrads.iter_mut().collect();
                    clip_grad_norm(&mut refs, cfg.max_grad_norm);
                }
                clip_grad_norm(&mut [&mut vgrads], cfg.max_grad_norm);
                for ((p, g), o) in policy.iter_mut().zip(&pgrads).zip(policy_opt.iter_mut()) {
                    adam_step(p, g, o)?;
                }
                adam_step(&mut value, &vgrads, &mut value_opt)?;
                lp_sum += lp;
                lv_sum += lv;
                ent_sum += ent;
                n_mb += 1;
            }
        }

        let mean_return = if returns_seen.is_empty() {
            0.0
        } else {
            returns_seen.iter().sum::<f64>() / returns_seen.len() as f64
        };
        if !mean_return.is_finite() {
            return Err(LearnError::DivergedTraining("mean return").into());
        }
        let total = batch.len() as f64;
        log.push(UpdateStats {
            update: log.len(),
            timesteps,
            episodes: returns_seen.len(),
            mean_return,
            success_rate: successes as f64 / returns_seen.len().max(1) as f64,
            action_fraction: counts.iter().map(|c| *c as f64 / total).collect(),
            loss_policy: lp_sum / n_mb.max(1) as f64,
            loss_value: lv_sum / n_mb.max(1) as f64,
            entropy: ent_sum / n_mb.max(1) as f64,
        });
    }
    Ok(log)
}
