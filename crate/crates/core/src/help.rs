//! The help policy: a small perceptron that decides, at every agent-controlled step,
//! whether to let the agent act or to request an intervention.

use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnet::{softmax, MlpParams, NnetError};

pub const HIDDEN_WIDTH: usize = 64;
pub const DEFAULT_ASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HelpError {
    #[error("feature vector does not match variant {variant:?}: expected {expected}, found {found}")]
    VariantShapeMismatch {
        variant: FeatureVariant,
        expected: usize,
        found: usize,
    },
    #[error("non-finite help feature input")]
    NonFinite,
    #[error(transparent)]
    Nnet(#[from] NnetError),
}

/// Which inputs the help policy sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureVariant {
    /// Agent encoder features only.
    Encoder,
    /// Point-goal change, relative heading and path length since the last request.
    PointPath,
    /// Encoder features, point-goal change, path length and time since the last request.
    All,
}

impl FeatureVariant {
    pub const ALL_VARIANTS: [FeatureVariant; 3] =
        [FeatureVariant::Encoder, FeatureVariant::PointPath, FeatureVariant::All];

    pub fn width(self, encoder_width: usize) -> usize {
        match self {
            FeatureVariant::Encoder => encoder_width,
            FeatureVariant::PointPath => 3,
            FeatureVariant::All => encoder_width + 4,
        }
    }

    pub fn uses_encoder(self) -> bool {
        self != FeatureVariant::PointPath
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureVariant::Encoder => "ENCODER",
            FeatureVariant::PointPath => "POINT_PATH",
            FeatureVariant::All => "ALL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "ENCODER" => Some(FeatureVariant::Encoder),
            "POINT_PATH" | "POINTPATH" => Some(FeatureVariant::PointPath),
            "ALL" => Some(FeatureVariant::All),
            _ => None,
        }
    }
}

/// An assembled help-policy input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelpFeatures {
    pub variant: FeatureVariant,
    pub values: Vec<f64>,
}

/// Point-goal reading at one instant: distance in meters and relative heading in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGoal {
    pub distance: f64,
    pub heading: f64,
}

/// Builds the feature vector for `variant`, laid out as encoder features, then
/// `[distance_prev - distance_now, heading_now]`, then path length and time since the
/// last help request (both normalized by `max_steps` and clamped to `[0, 1]`).
/// On the first step of an episode there is no previous distance and the change is 0.
pub fn assemble_features(
    variant: FeatureVariant,
    encoder_features: &[f64],
    pointgoal_now: PointGoal,
    pointgoal_prev: Option<PointGoal>,
    steps_since_help: u32,
    path_len_since_help: u32,
    max_steps: u32,
) -> Result<HelpFeatures, HelpError> {
    if variant.uses_encoder() && encoder_features.is_empty() {
        return Err(HelpError::VariantShapeMismatch {
            variant,
            expected: variant.width(crate::agent::ENCODER_WIDTH),
            found: 0,
        });
    }
    let max_steps = f64::from(max_steps.max(1));
    let diff = pointgoal_prev.map_or(0.0, |p| p.distance - pointgoal_now.distance);
    let path = (f64::from(path_len_since_help) / max_steps).clamp(0.0, 1.0);
    let time = (f64::from(steps_since_help) / max_steps).clamp(0.0, 1.0);
    let goal = [diff, pointgoal_now.heading, path];
    let mut values = Vec::with_capacity(variant.width(encoder_features.len()));
    match variant {
        FeatureVariant::Encoder => values.extend_from_slice(encoder_features),
        FeatureVariant::PointPath => values.extend_from_slice(&goal),
        FeatureVariant::All => {
            values.extend_from_slice(encoder_features);
            values.extend_from_slice(&goal);
            values.push(time);
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(HelpError::NonFinite);
    }
    Ok(HelpFeatures { variant, values })
}

/// Per-episode bookkeeping behind the point-goal and since-last-help features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HelpTracker {
    previous: Option<PointGoal>,
    steps_since_help: u32,
    moves_since_help: u32,
}

impl HelpTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn features(
        &self,
        variant: FeatureVariant,
        encoder_features: &[f64],
        now: PointGoal,
        max_steps: u32,
    ) -> Result<HelpFeatures, HelpError> {
        assemble_features(
            variant,
            encoder_features,
            now,
            self.previous,
            self.steps_since_help,
            self.moves_since_help,
            max_steps,
        )
    }

    /// A help request (or operator interrupt) starts now.
    pub fn reset_help(&mut self) {
        self.steps_since_help = 0;
        self.moves_since_help = 0;
    }

    /// Records an executed step; `before` is the point goal observed before it.
    pub fn record_step(&mut self, before: PointGoal, moved: bool) {
        self.previous = Some(before);
        self.steps_since_help += 1;
        if moved {
            self.moves_since_help += 1;
        }
    }

    pub fn steps_since_help(&self) -> u32 {
        self.steps_since_help
    }

    pub fn moves_since_help(&self) -> u32 {
        self.moves_since_help
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HelpDecision {
    Proceed,
    Ask,
}

impl HelpDecision {
    pub fn index(self) -> usize {
        match self {
            HelpDecision::Proceed => 0,
            HelpDecision::Ask => 1,
        }
    }
}

/// How a decision is drawn from the ask probability.
pub enum DecisionMode<'r> {
    /// Draw from the policy distribution (training).
    Sample(&'r mut crate::Rng),
    /// Ask iff the probability reaches the policy threshold (evaluation).
    Argmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelpPolicy {
    /// Layer sizes `[input, 64, 64, 2]`; output logits are (PROCEED, ASK).
    pub net: MlpParams,
    pub variant: FeatureVariant,
    pub ask_threshold: f64,
}

impl HelpPolicy {
    pub fn new(variant: FeatureVariant, encoder_width: usize, rng: &mut crate::Rng) -> Result<Self, NnetError> {
        let net = MlpParams::init(
            &[variant.width(encoder_width), HIDDEN_WIDTH, HIDDEN_WIDTH, 2],
            rng,
        )?;
        Ok(Self {
            net,
            variant,
            ask_threshold: DEFAULT_ASK_THRESHOLD,
        })
    }

    pub fn input_width(&self) -> usize {
        self.net.input_width()
    }

    /// Softmax probability of the ASK logit.
    pub fn ask_probability(&self, features: &HelpFeatures) -> Result<f64, HelpError> {
        self.check(features)?;
        let logits = self.net.predict(&features.values)?;
        Ok(softmax(&logits)[1])
    }

    pub fn decide(
        &self,
        features: &HelpFeatures,
        mode: DecisionMode<'_>,
    ) -> Result<(HelpDecision, f64), HelpError> {
        let p = self.ask_probability(features)?;
        let ask = match mode {
            DecisionMode::Sample(rng) => rng.random::<f64>() < p,
            DecisionMode::Argmax => p >= self.ask_threshold,
        };
        Ok((if ask { HelpDecision::Ask } else { HelpDecision::Proceed }, p))
    }

    fn check(&self, features: &HelpFeatures) -> Result<(), HelpError> {
        if features.variant != self.variant || features.values.len() != self.input_width() {
            return Err(HelpError::VariantShapeMismatch {
                variant: self.variant,
                expected: self.input_width(),
                found: features.values.len(),
            });
        }
        Ok(())
    }
}
