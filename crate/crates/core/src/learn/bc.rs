//! Behavioral cloning of the help policy from labeled demonstration steps.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::help::{HelpDecision, HelpFeatures, HelpPolicy};
use crate::nnet::{adam_step, softmax_cross_entropy, MlpGrads, OptState};
use crate::Error;

pub type Label = HelpDecision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: HelpFeatures,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

/// Loss weight of the ASK class relative to PROCEED.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClassWeight {
    /// PROCEED count divided by ASK count.
    Balanced,
    Fixed(f64),
}

/// Minimizes class-weighted cross-entropy. Returns the mean weighted loss of each epoch.
pub fn bc_train(
    dataset: &[LabeledSample],
    policy: &mut HelpPolicy,
    cfg: &BcConfig,
    weight: ClassWeight,
) -> Result<Vec<f64>, Error> {
    if dataset.is_empty() {
        return Err(LearnError::EmptyDataset.into());
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(LearnError::InvalidConfig("batch_size and learning_rate must be positive").into());
    }
    let asks = dataset.iter().filter(|s| s.label == Label::Ask).count();
    let ask_weight = match weight {
        ClassWeight::Balanced if asks == 0 => return Err(LearnError::NoPositiveLabels.into()),
        ClassWeight::Balanced => (dataset.len() - asks) as f64 / asks as f64,
        ClassWeight::Fixed(w) if w.is_finite() && w > 0.0 => w,
        ClassWeight::Fixed(_) => return Err(LearnError::InvalidConfig("class weight must be positive").into()),
    };
    for s in dataset {
        if s.features.variant != policy.variant || s.features.values.len() != policy.input_width() {
            return Err(crate::help::HelpError::VariantShapeMismatch {
                variant: policy.variant,
                expected: policy.input_width(),
                found: s.features.values.len(),
            }
            .into());
        }
    }

    let mut rng = crate::seeded_rng(cfg.seed);
    let mut opt = OptState::new(&policy.net, cfg.learning_rate);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_weight) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = MlpGrads::zeros_like(&policy.net);
            let (mut batch_loss, mut batch_weight) = (0.0, 0.0);
            for &i in chunk {
                let s = &dataset[i];
                let w = if s.label == Label::Ask { ask_weight } else { 1.0 };
                let (logits, cache) = policy.net.forward(&s.features.values)?;
                let (loss, mut g) = softmax_cross_entropy(&logits, s.label.index())?;
                g.iter_mut().for_each(|v| *v *= w);
                grads.add_assign(&policy.net.backward(&cache, &g)?);
                batch_loss += w * loss;
                batch_weight += w;
            }
            if !batch_loss.is_finite() {
                return Err(LearnError::DivergedTraining("behavioral cloning loss").into());
            }
            grads.scale(1.0 / batch_weight);
            adam_step(&mut policy.net, &grads, &mut opt)?;
            epoch_loss += batch_loss;
            epoch_weight += batch_weight;
        }
        log.push(epoch_loss / epoch_weight);
    }
    Ok(log)
}
