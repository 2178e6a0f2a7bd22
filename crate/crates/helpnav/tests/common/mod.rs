#![allow(dead_code)]

use helpnav::core::agent::AgentPolicy;
use helpnav::core::env::{Cell, Heading, NavEnv, Pose, SensorConfig};
use helpnav::core::help::{FeatureVariant, HelpPolicy, DEFAULT_ASK_THRESHOLD};
use helpnav::core::nnet::{Activation, MlpParams};
use helpnav::core::suite::{fixture, make_episode};
use helpnav::session::Policies;

pub fn frozen_agent() -> AgentPolicy {
    let mut a = AgentPolicy::scripted(&SensorConfig::default(), 64, 1).unwrap();
    a.frozen = true;
    a
}

/// Open 8x8 room, corner to corner.
pub fn open_env() -> NavEnv {
    let map = fixture("open_room").unwrap();
    let spec = make_episode(&map, Pose::new(0, 0, Heading::E), Cell::new(7, 7), 500, 3).unwrap();
    NavEnv::new(map, spec).unwrap()
}

/// A help policy whose ASK probability is about 1 - 5e-5 on any input.
pub fn always_ask_policy() -> HelpPolicy {
    let sizes = vec![68, 64, 64, 2];
    let weights = sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
    let mut biases: Vec<Vec<f64>> = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
    biases[2] = vec![0.0, 10.0];
    HelpPolicy {
        net: MlpParams::from_parts(sizes, weights, biases, Activation::Tanh).unwrap(),
        variant: FeatureVariant::All,
        ask_threshold: DEFAULT_ASK_THRESHOLD,
    }
}

pub fn policies(help: Option<HelpPolicy>) -> Policies {
    Policies {
        agent: frozen_agent(),
        help,
    }
}
