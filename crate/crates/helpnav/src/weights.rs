//! JSON weight files for networks, navigation agents and help policies.
//!
//! Floats are written with shortest round-trip formatting and parsed exactly, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::path::Path;

use anyhow::{bail, Context, Result};
use helpnav_core::agent::{AgentKind, AgentPolicy};
use helpnav_core::help::{FeatureVariant, HelpPolicy};
use helpnav_core::nnet::{Activation, MlpParams};
use serde::{Deserialize, Serialize};

use crate::files::{read_json, write_json};

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

/// A network: per-layer weight matrices (one row per output unit) and bias vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnetFile {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
    pub format_version: u32,
}

impl NnetFile {
    pub fn from_params(p: &MlpParams) -> Self {
        let weights = p
            .weights()
            .iter()
            .zip(p.layer_sizes().windows(2))
            .map(|(w, io)| w.chunks(io[0]).map(<[f64]>::to_vec).collect())
            .collect();
        Self {
            layer_sizes: p.layer_sizes().to_vec(),
            weights,
            biases: p.biases().to_vec(),
            activation: p.activation(),
            format_version: WEIGHTS_FORMAT_VERSION,
        }
    }

    pub fn to_params(&self) -> Result<MlpParams> {
        check_version(self.format_version)?;
        if self.weights.len() + 1 != self.layer_sizes.len() {
            bail!(
                "{} weight matrices for {} layer sizes",
                self.weights.len(),
                self.layer_sizes.len()
            );
        }
        let mut flat = Vec::with_capacity(self.weights.len());
        for (l, (rows, io)) in self.weights.iter().zip(self.layer_sizes.windows(2)).enumerate() {
            if rows.len() != io[1] || rows.iter().any(|r| r.len() != io[0]) {
                bail!("layer {l} weights must be {}x{}", io[1], io[0]);
            }
            flat.push(rows.concat());
        }
        Ok(MlpParams::from_parts(
            self.layer_sizes.clone(),
            flat,
            self.biases.clone(),
            self.activation,
        )?)
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != WEIGHTS_FORMAT_VERSION {
        bail!("unsupported weight format_version {v} (expected {WEIGHTS_FORMAT_VERSION})");
    }
    Ok(())
}

/// Agent file: the encoder in network format plus the agent kind, the frozen flag and,
/// for learned agents, the action head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFile {
    pub kind: AgentKind,
    pub frozen: bool,
    #[serde(flatten)]
    pub encoder: NnetFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<NnetFile>,
}

impl AgentFile {
    pub fn from_agent(agent: &AgentPolicy) -> Self {
        Self {
            kind: agent.kind,
            frozen: agent.frozen,
            encoder: NnetFile::from_params(&agent.encoder),
            head: agent.head.as_ref().map(NnetFile::from_params),
        }
    }

    pub fn to_agent(&self) -> Result<AgentPolicy> {
        let encoder = self.encoder.to_params().context("agent encoder")?;
        let head = self.head.as_ref().map(|h| h.to_params().context("agent head")).transpose()?;
        match (self.kind, &head) {
            (AgentKind::Scripted, Some(_)) => bail!("scripted agents have no action head"),
            (AgentKind::Learned, None) => bail!("learned agents need an action head"),
            (AgentKind::Learned, Some(h)) if h.input_width() != encoder.output_width() => {
                bail!("action head input {} does not match encoder output {}", h.input_width(), encoder.output_width())
            }
            _ => {}
        }
        Ok(AgentPolicy {
            kind: self.kind,
            encoder,
            head,
            frozen: self.frozen,
        })
    }
}

/// Help-policy file: the network plus its feature variant and decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelpFile {
    pub variant: FeatureVariant,
    pub ask_threshold: f64,
    #[serde(flatten)]
    pub net: NnetFile,
}

impl HelpFile {
    pub fn from_policy(p: &HelpPolicy) -> Self {
        Self {
            variant: p.variant,
            ask_threshold: p.ask_threshold,
            net: NnetFile::from_params(&p.net),
        }
    }

    pub fn to_policy(&self) -> Result<HelpPolicy> {
        if !(0.0..=1.0).contains(&self.ask_threshold) {
            bail!("ask_threshold {} outside [0, 1]", self.ask_threshold);
        }
        let net = self.net.to_params()?;
        if net.output_width() != 2 {
            bail!("help networks have 2 outputs, found {}", net.output_width());
        }
        Ok(HelpPolicy {
            net,
            variant: self.variant,
            ask_threshold: self.ask_threshold,
        })
    }
}

pub fn save_agent(path: &Path, agent: &AgentPolicy) -> Result<()> {
    write_json(path, &AgentFile::from_agent(agent))
}

pub fn load_agent(path: &Path) -> Result<AgentPolicy> {
    read_json::<AgentFile>(path)?
        .to_agent()
        .with_context(|| format!("loading agent {}", path.display()))
}

pub fn save_help_policy(path: &Path, policy: &HelpPolicy) -> Result<()> {
    write_json(path, &HelpFile::from_policy(policy))
}

pub fn load_help_policy(path: &Path) -> Result<HelpPolicy> {
    read_json::<HelpFile>(path)?
        .to_policy()
        .with_context(|| format!("loading help policy {}", path.display()))
}

/// Stable identifier for trace headers, derived from the weights themselves.
pub fn agent_id(agent: &AgentPolicy) -> String {
    let kind = match agent.kind {
        AgentKind::Scripted => "scripted",
        AgentKind::Learned => "learned",
    };
    format!("{kind}-{:016x}", agent.fingerprint())
}

pub fn help_policy_id(policy: &HelpPolicy) -> String {
    format!("{}-{:016x}", policy.variant.as_str(), policy.net.fingerprint())
}
