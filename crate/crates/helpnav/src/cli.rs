//! Command-line definitions and dispatch.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use helpnav_core::expert::Intervener;
use helpnav_core::help::FeatureVariant;
use helpnav_core::runner::GateMode;

use crate::commands;

#[derive(Debug, Parser)]
#[command(name = "helpnav", version, about = "Grid navigation with a learned ask-for-help gate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write fixture maps and random training/validation suites.
    GenMaps(GenMapsArgs),
    /// Build the scripted agent or pre-train a learned one, then freeze it.
    PretrainAgent(PretrainArgs),
    /// Record demonstration traces from a live operator (or the scripted operator).
    RecordDemos(RecordDemosArgs),
    /// Train a help policy by behavioral cloning on demonstration traces.
    TrainBc(TrainBcArgs),
    /// Train a help policy with PPO against a simulated intervener.
    TrainPpo(TrainPpoArgs),
    /// Evaluate over an episode file and write a report.
    Eval(EvalArgs),
    /// Re-execute a trace and check its footer.
    Replay(ReplayArgs),
    /// Check traces for interventions longer than the budget.
    Lint(LintArgs),
    /// Serve live evaluation sessions to the operator console.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentKindArg {
    Scripted,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IntervenerArg {
    Sim,
    Noisy,
}

impl IntervenerArg {
    pub fn build(self, noise_rate: f64) -> Result<Intervener> {
        Ok(match self {
            IntervenerArg::Sim => Intervener::sim_expert(),
            IntervenerArg::Noisy => Intervener::noisy_expert(noise_rate)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Argmax,
    Sample,
}

impl From<ModeArg> for GateMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Argmax => GateMode::Argmax,
            ModeArg::Sample => GateMode::Sample,
        }
    }
}

/// Which gate decides between PROCEED and ASK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyArg {
    None,
    Always,
    File(PathBuf),
}

fn parse_policy(s: &str) -> Result<PolicyArg, String> {
    Ok(match s {
        "" => return Err("policy must not be empty".into()),
        "none" => PolicyArg::None,
        "always" => PolicyArg::Always,
        path => PolicyArg::File(path.into()),
    })
}

fn parse_variant(s: &str) -> Result<FeatureVariant, String> {
    FeatureVariant::parse(s).ok_or_else(|| format!("unknown variant {s:?} (expected encoder, point-path or all)"))
}

#[derive(Debug, Clone, Args)]
pub struct GenMapsArgs {
    /// Output directory; maps go to `<out>/maps`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    #[arg(long, default_value_t = 100)]
    pub val: usize,
    /// Seed of the training suite.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the validation suite (default: seed + 1).
    #[arg(long)]
    pub val_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct PretrainArgs {
    #[arg(long, value_enum, default_value_t = AgentKindArg::Scripted)]
    pub kind: AgentKindArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Maps to train on (learned agents only).
    #[arg(long)]
    pub maps: Option<PathBuf>,
    #[arg(long, default_value_t = 50_000)]
    pub timesteps: u64,
    /// Per-update training log (JSONL).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RecordDemosArgs {
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long)]
    pub agent: PathBuf,
    /// Directory receiving one trace per demonstration.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 25)]
    pub budget: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Use the scripted operator instead of serving live sessions.
    #[arg(long)]
    pub scripted: bool,
    /// Scripted operator: steps without progress before it takes over.
    #[arg(long, default_value_t = 12)]
    pub patience: u32,
    /// Scripted operator: steps of manual control per takeover.
    #[arg(long, default_value_t = 10)]
    pub takeover_steps: u32,
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub bind: String,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 150)]
    pub step_delay_ms: u64,
    /// Fixed trace timestamp (default: now).
    #[arg(long)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainBcArgs {
    /// Directory of demonstration traces.
    #[arg(long)]
    pub demos: PathBuf,
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub agent: PathBuf,
    #[arg(long, value_parser = parse_variant, default_value = "all")]
    pub variant: FeatureVariant,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    /// Shuffling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight initialization seed (default: seed).
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// `balanced`, or a fixed weight for ASK samples.
    #[arg(long, default_value = "balanced")]
    pub class_weight: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss log (JSONL).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainPpoArgs {
    /// Training config (JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long)]
    pub agent: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-update training log (JSONL).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<FeatureVariant>,
    #[arg(long)]
    pub timesteps: Option<u64>,
    #[arg(long)]
    pub budget: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub intervener: Option<IntervenerArg>,
    #[arg(long)]
    pub noise_rate: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub maps: PathBuf,
    /// Episode file (JSONL).
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long)]
    pub agent: PathBuf,
    /// `none` (autonomous), `always`, or a help-policy weight file.
    #[arg(long, visible_alias = "help-policy", value_parser = parse_policy, default_value = "none")]
    pub policy: PolicyArg,
    #[arg(long, value_enum, default_value_t = IntervenerArg::Sim)]
    pub intervener: IntervenerArg,
    #[arg(long, default_value_t = Intervener::DEFAULT_NOISE_RATE)]
    pub noise_rate: f64,
    #[arg(long, default_value_t = 25)]
    pub budget: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::Argmax)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report group name (default: derived from the policy).
    #[arg(long)]
    pub group: Option<String>,
    /// CSV report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory receiving one trace per episode.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Fixed trace timestamp (default: now).
    #[arg(long)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub maps: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LintArgs {
    /// Directory of traces.
    #[arg(long)]
    pub traces: PathBuf,
    /// Budget to enforce (default: the budget in each trace header).
    #[arg(long)]
    pub budget: Option<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub bind: String,
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long)]
    pub agent: PathBuf,
    /// `none` or a help-policy weight file.
    #[arg(long, visible_alias = "help-policy", value_parser = parse_policy, default_value = "none")]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 25)]
    pub budget: u32,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 0)]
    pub step_delay_ms: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Argmax)]
    pub mode: ModeArg,
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Exit after this many sessions.
    #[arg(long)]
    pub max_sessions: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub timestamp: Option<String>,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenMaps(a) => {
            let out = commands::gen_maps(&a)?;
            println!(
                "wrote {} maps: {} training, {} validation and {} fixture episodes",
                out.maps, out.train, out.val, out.fixtures
            );
        }
        Command::PretrainAgent(a) => {
            let agent = commands::pretrain_agent(&a)?;
            println!("wrote {} ({})", a.out.display(), crate::weights::agent_id(&agent));
        }
        Command::RecordDemos(a) => {
            let paths = commands::record_demos(&a)?;
            for p in &paths {
                println!("{}", p.display());
            }
        }
        Command::TrainBc(a) => {
            let out = commands::train_bc(&a)?;
            println!(
                "{} samples ({} ASK) from {} traces; final loss {:.6}",
                out.samples,
                out.asks,
                out.traces,
                out.losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::TrainPpo(a) => {
            let out = commands::train_ppo(&a)?;
            if let Some(last) = out.log.last() {
                println!(
                    "{} updates; last mean return {:.4}, ask rate {:.4}",
                    out.log.len(),
                    last.mean_return,
                    last.ask_rate
                );
            }
        }
        Command::Eval(a) => {
            let out = commands::eval(&a)?;
            print!("{}", crate::report::format_table(&out.rows));
        }
        Command::Replay(a) => {
            let out = commands::replay(&a)?;
            println!("{}", serde_json::to_string_pretty(&out.result)?);
            println!("sha256 {}", out.hash);
        }
        Command::Lint(a) => {
            let out = commands::lint(&a)?;
            println!("{} traces, no violations", out.traces);
        }
        Command::Serve(a) => commands::serve(&a)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn help_policy_alias() {
        let cli = Cli::try_parse_from([
            "helpnav", "eval", "--maps", "m", "--episodes", "e", "--agent", "a", "--help-policy", "ppo.w",
            "--intervener", "sim", "--budget", "25",
        ])
        .unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        assert_eq!(a.policy, PolicyArg::File("ppo.w".into()));
        assert_eq!(a.budget, 25);
        let cli = Cli::try_parse_from(["helpnav", "eval", "--maps", "m", "--episodes", "e", "--agent", "a"]).unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        assert_eq!(a.policy, PolicyArg::None);
    }

    #[test]
    fn variant_names() {
        for (s, v) in [
            ("all", FeatureVariant::All),
            ("ENCODER", FeatureVariant::Encoder),
            ("point-path", FeatureVariant::PointPath),
        ] {
            assert_eq!(parse_variant(s), Ok(v));
        }
        assert!(parse_variant("both").is_err());
    }
}
