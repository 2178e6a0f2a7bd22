//! Command implementations. Each takes its parsed arguments and returns structured
//! output; printing is left to [`crate::cli::run`].

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use helpnav_core::agent::{pretrain_agent as pretrain, AgentPolicy, PretrainConfig, ENCODER_WIDTH};
use helpnav_core::env::{sample_episode, GridMap, NavEnv, SensorConfig, DEFAULT_MAX_STEPS};
use helpnav_core::expert::{Intervener, InterventionBudget};
use helpnav_core::help::{FeatureVariant, HelpDecision, HelpPolicy};
use helpnav_core::learn::{
    bc_train, label_demonstration, ppo_train, BcConfig, ClassWeight, PpoConfig, RewardConfig, SuiteSource,
    TrainingLogEntry,
};
use helpnav_core::metrics::{aggregate, EpisodeResult, ReportRow};
use helpnav_core::runner::{record_scripted_demo, run_episode, HelpGate, ScriptedOperator, TraceMeta};
use helpnav_core::suite::{self, generate_suite, SuiteConfig};
use helpnav_core::trace::{lint_budget, lint_policy_silence, replay as replay_trace, BudgetViolation, EpisodeTrace};
use serde::{Deserialize, Serialize};

use crate::cli::{
    AgentKindArg, EvalArgs, GenMapsArgs, IntervenerArg, LintArgs, PolicyArg, PretrainArgs, RecordDemosArgs,
    ReplayArgs, ServeArgs, TrainBcArgs, TrainPpoArgs,
};
use crate::files::{load_envs, now_timestamp, read_json, read_map_dir, write_json, write_jsonl, write_map};
use crate::report::write_csv;
use crate::server::{self, ServerConfig, SessionReport};
use crate::session::{Policies, SessionConfig, SessionMode};
use crate::trace_file::{read_trace_dir, trace_hash, write_trace};
use crate::weights::{agent_id, help_policy_id, load_agent, load_help_policy, save_agent, save_help_policy};

/// Minimum start-to-goal distance of the sampled fixture episodes, in meters.
const FIXTURE_MIN_GEODESIC: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GenMapsOutput {
    pub maps: usize,
    pub train: usize,
    pub val: usize,
    pub fixtures: usize,
}

/// Writes `<out>/maps/*.map`, `<out>/train.jsonl`, `<out>/val.jsonl` and
/// `<out>/fixtures.jsonl` (every concave-trap start plus one sampled episode per
/// convex fixture).
pub fn gen_maps(a: &GenMapsArgs) -> Result<GenMapsOutput> {
    let map_dir = a.out.join("maps");
    let train = generate_suite(&SuiteConfig::training(a.train), a.seed)?;
    let val = generate_suite(&SuiteConfig::validation(a.val), a.val_seed.unwrap_or(a.seed.wrapping_add(1)))?;
    let mut fixtures = Vec::new();
    let trap = suite::fixture("concave_trap").expect("built-in fixture");
    for (i, start) in suite::CONCAVE_TRAP_STARTS.iter().enumerate() {
        fixtures.push(suite::make_episode(&trap, *start, suite::CONCAVE_TRAP_GOAL, DEFAULT_MAX_STEPS, i as u64)?);
    }
    for (i, map) in suite::convex_fixtures().iter().enumerate() {
        fixtures.push(sample_episode(map, a.seed.wrapping_add(i as u64), FIXTURE_MIN_GEODESIC, DEFAULT_MAX_STEPS)?);
    }
    let mut maps: Vec<GridMap> = suite::FIXTURE_IDS.iter().filter_map(|id| suite::fixture(id)).collect();
    maps.extend(train.maps.iter().cloned());
    maps.extend(val.maps.iter().cloned());
    for m in &maps {
        write_map(&map_dir, m)?;
    }
    write_jsonl(&a.out.join("train.jsonl"), &train.episodes)?;
    write_jsonl(&a.out.join("val.jsonl"), &val.episodes)?;
    write_jsonl(&a.out.join("fixtures.jsonl"), &fixtures)?;
    Ok(GenMapsOutput {
        maps: maps.len(),
        train: train.episodes.len(),
        val: val.episodes.len(),
        fixtures: fixtures.len(),
    })
}

pub fn pretrain_agent(a: &PretrainArgs) -> Result<AgentPolicy> {
    let sensor = SensorConfig::default();
    let agent = match a.kind {
        AgentKindArg::Scripted => AgentPolicy::scripted(&sensor, ENCODER_WIDTH, a.seed)?,
        AgentKindArg::Learned => {
            let dir = a.maps.as_ref().ok_or_else(|| anyhow!("--maps is required for learned agents"))?;
            let maps: Vec<GridMap> = read_map_dir(dir)?.into_values().collect();
            let cfg = PpoConfig {
                total_timesteps: a.timesteps,
                ..PpoConfig::default()
            };
            let (agent, log) = pretrain(&maps, &sensor, &cfg, &PretrainConfig::default(), a.seed)?;
            if let Some(p) = &a.log {
                write_jsonl(p, &log)?;
            }
            agent
        }
    };
    save_agent(&a.out, &agent)?;
    Ok(agent)
}

fn budget(m: u32) -> Result<InterventionBudget> {
    Ok(InterventionBudget::new(m)?)
}

fn load_frozen_agent(path: &Path) -> Result<AgentPolicy> {
    let agent = load_agent(path)?;
    if !agent.frozen {
        bail!("agent {} is not frozen", path.display());
    }
    Ok(agent)
}

/// Records demonstrations into `out`: scripted ones directly, live ones by serving
/// `count` demonstration sessions.
pub fn record_demos(a: &RecordDemosArgs) -> Result<Vec<PathBuf>> {
    let agent = load_frozen_agent(&a.agent)?;
    let envs = load_envs(&a.maps, &a.episodes)?;
    let budget = budget(a.budget)?;
    if a.count == 0 {
        bail!("--count must be positive");
    }
    if a.scripted {
        if a.count > envs.len() {
            bail!("{} demonstrations requested but only {} episodes", a.count, envs.len());
        }
        let operator = ScriptedOperator {
            patience: a.patience,
            takeover_steps: a.takeover_steps,
        };
        let mut rng = helpnav_core::seeded_rng(a.seed);
        let timestamp = a.timestamp.clone().unwrap_or_else(now_timestamp);
        let id = agent_id(&agent);
        let mut paths = Vec::new();
        for env in envs.into_iter().take(a.count) {
            let meta = TraceMeta::new(&id, "none", &Intervener::sim_expert(), &timestamp);
            let trace = record_scripted_demo(env, &agent, &operator, budget, &mut rng, meta)?;
            paths.push(write_trace(&a.out, &trace)?);
        }
        return Ok(paths);
    }
    let mut session = SessionConfig::new(SessionMode::Demonstration);
    session.budget = budget;
    session.response_timeout = Duration::from_secs(a.timeout_secs);
    session.step_delay = Duration::from_millis(a.step_delay_ms);
    session.trace_dir = Some(a.out.clone());
    session.timestamp = a.timestamp.clone();
    let cfg = ServerConfig {
        session,
        max_sessions: Some(a.count),
        seed: a.seed,
    };
    let policies = Policies { agent, help: None };
    let reports = runtime()?.block_on(serve_sessions(&a.bind, envs, policies, cfg))?;
    let mut paths = Vec::new();
    for r in reports {
        match r.outcome {
            Ok(o) => paths.extend(o.path),
            Err(e) => eprintln!("session {} on {} recorded nothing usable: {e}", r.index, r.map_id),
        }
    }
    if paths.len() < a.count {
        bail!("only {} of {} demonstrations completed", paths.len(), a.count);
    }
    Ok(paths)
}

#[derive(Debug, Clone)]
pub struct TrainBcOutput {
    pub policy: HelpPolicy,
    pub losses: Vec<f64>,
    pub traces: usize,
    pub samples: usize,
    pub asks: usize,
}

#[derive(Serialize)]
struct EpochLoss {
    epoch: usize,
    loss: f64,
}

fn parse_class_weight(s: &str) -> Result<ClassWeight> {
    if s == "balanced" {
        return Ok(ClassWeight::Balanced);
    }
    let w: f64 = s
        .parse()
        .map_err(|_| anyhow!("class weight must be `balanced` or a number, got {s:?}"))?;
    if !(w > 0.0 && w.is_finite()) {
        bail!("class weight must be positive");
    }
    Ok(ClassWeight::Fixed(w))
}

pub fn train_bc(a: &TrainBcArgs) -> Result<TrainBcOutput> {
    let agent = load_frozen_agent(&a.agent)?;
    let maps = read_map_dir(&a.maps)?;
    let traces = read_trace_dir(&a.demos)?;
    if traces.is_empty() {
        bail!("no traces in {}", a.demos.display());
    }
    let mut dataset = Vec::new();
    for (path, trace) in &traces {
        let map = maps
            .get(&trace.header.episode.map_id)
            .ok_or_else(|| anyhow!("{}: unknown map {:?}", path.display(), trace.header.episode.map_id))?;
        let samples =
            label_demonstration(trace, map, &agent, a.variant).with_context(|| format!("labeling {}", path.display()))?;
        dataset.extend(samples);
    }
    let mut policy = HelpPolicy::new(
        a.variant,
        agent.encoder_width(),
        &mut helpnav_core::seeded_rng(a.init_seed.unwrap_or(a.seed)),
    )?;
    let cfg = BcConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
    };
    let losses = bc_train(&dataset, &mut policy, &cfg, parse_class_weight(&a.class_weight)?)?;
    save_help_policy(&a.out, &policy)?;
    if let Some(p) = &a.log {
        let log: Vec<EpochLoss> = losses.iter().enumerate().map(|(epoch, &loss)| EpochLoss { epoch, loss }).collect();
        write_jsonl(p, &log)?;
    }
    Ok(TrainBcOutput {
        policy,
        traces: traces.len(),
        samples: dataset.len(),
        asks: dataset.iter().filter(|s| s.label == HelpDecision::Ask).count(),
        losses,
    })
}

/// Contents of a help-policy training config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    /// Intervention budget M.
    pub budget: u32,
    pub variant: FeatureVariant,
    pub intervener: Intervener,
    /// Seed of rollouts and minibatch order.
    pub seed: u64,
    /// Seed of the initial policy weights.
    pub init_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            budget: InterventionBudget::DEFAULT.max_steps_per_request,
            variant: FeatureVariant::All,
            intervener: Intervener::sim_expert(),
            seed: 0,
            init_seed: 0,
        }
    }
}

impl TrainingConfig {
    /// The config file (or defaults) with command-line overrides applied.
    pub fn resolve(a: &TrainPpoArgs) -> Result<Self> {
        let mut cfg: TrainingConfig = match &a.config {
            Some(p) => read_json(p)?,
            None => TrainingConfig::default(),
        };
        if let Some(v) = a.variant {
            cfg.variant = v;
        }
        if let Some(t) = a.timesteps {
            cfg.ppo.total_timesteps = t;
        }
        if let Some(m) = a.budget {
            cfg.budget = m;
        }
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        if let Some(s) = a.init_seed {
            cfg.init_seed = s;
        }
        if let Some(kind) = a.intervener {
            let rate = a.noise_rate.unwrap_or(Intervener::DEFAULT_NOISE_RATE);
            cfg.intervener = kind.build(rate)?;
        } else if let Some(rate) = a.noise_rate {
            cfg.intervener = IntervenerArg::Noisy.build(rate)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct TrainPpoOutput {
    pub policy: HelpPolicy,
    pub log: Vec<TrainingLogEntry>,
    pub config: TrainingConfig,
}

pub fn train_ppo(a: &TrainPpoArgs) -> Result<TrainPpoOutput> {
    let cfg = TrainingConfig::resolve(a)?;
    let agent = load_frozen_agent(&a.agent)?;
    let envs = load_envs(&a.maps, &a.episodes)?;
    let mut source = SuiteSource::new(envs)?;
    let mut policy = HelpPolicy::new(
        cfg.variant,
        agent.encoder_width(),
        &mut helpnav_core::seeded_rng(cfg.init_seed),
    )?;
    let log = ppo_train(
        &mut source,
        &agent,
        &mut policy,
        &cfg.intervener,
        budget(cfg.budget)?,
        &cfg.reward,
        &cfg.ppo,
        cfg.seed,
    )?;
    save_help_policy(&a.out, &policy)?;
    if let Some(p) = &a.log {
        write_jsonl(p, &log)?;
    }
    Ok(TrainPpoOutput {
        policy,
        log,
        config: cfg,
    })
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub rows: Vec<ReportRow>,
    pub traces: Vec<EpisodeTrace>,
    pub trace_paths: Vec<PathBuf>,
}

fn load_gate_policy(policy: &PolicyArg, agent: &AgentPolicy) -> Result<Option<HelpPolicy>> {
    let PolicyArg::File(path) = policy else {
        return Ok(None);
    };
    let p = load_help_policy(path)?;
    let expected = p.variant.width(agent.encoder_width());
    if p.input_width() != expected {
        bail!(
            "help policy {} takes {} inputs but the {} variant of this agent produces {expected}",
            path.display(),
            p.input_width(),
            p.variant.as_str()
        );
    }
    Ok(Some(p))
}

fn default_group(policy: &PolicyArg) -> String {
    match policy {
        PolicyArg::None => "baseline".into(),
        PolicyArg::Always => "always-ask".into(),
        PolicyArg::File(p) => p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "policy".into()),
    }
}

/// Runs every episode in order with one generator seeded by `--seed`. Traces are
/// written as they complete; the report is written only after all episodes finish.
pub fn eval(a: &EvalArgs) -> Result<EvalOutput> {
    let agent = load_frozen_agent(&a.agent)?;
    let help = load_gate_policy(&a.policy, &agent)?;
    let gate = match (&a.policy, &help) {
        (PolicyArg::Always, _) => HelpGate::AlwaysAsk,
        (_, Some(p)) => HelpGate::Policy(p),
        _ => HelpGate::AlwaysProceed,
    };
    let help_id = help.as_ref().map(help_policy_id).unwrap_or_else(|| default_group(&a.policy));
    let intervener = a.intervener.build(a.noise_rate)?;
    let budget = budget(a.budget)?;
    let envs = load_envs(&a.maps, &a.episodes)?;
    let group = a.group.clone().unwrap_or_else(|| default_group(&a.policy));
    let timestamp = a.timestamp.clone().unwrap_or_else(now_timestamp);
    let id = agent_id(&agent);
    let mut rng = helpnav_core::seeded_rng(a.seed);
    let mut results: Vec<(String, EpisodeResult)> = Vec::with_capacity(envs.len());
    let mut traces = Vec::with_capacity(envs.len());
    let mut trace_paths = Vec::new();
    for env in envs {
        let meta = TraceMeta::new(&id, &help_id, &intervener, &timestamp);
        let trace = run_episode(env, &agent, gate, &intervener, budget, a.mode.into(), &mut rng, meta)?;
        if let Some(dir) = &a.traces {
            trace_paths.push(write_trace(dir, &trace)?);
        }
        let footer = trace.footer.as_ref().expect("finished traces have a footer");
        results.push((group.clone(), footer.result.clone()));
        traces.push(trace);
    }
    let rows = aggregate(&results)?;
    if let Some(p) = &a.report {
        write_csv(p, &rows)?;
    }
    Ok(EvalOutput {
        rows,
        traces,
        trace_paths,
    })
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub result: EpisodeResult,
    pub hash: String,
}

pub fn replay(a: &ReplayArgs) -> Result<ReplayOutput> {
    let trace = crate::trace_file::read_trace(&a.trace)?;
    let maps = read_map_dir(&a.maps)?;
    let map = maps
        .get(&trace.header.episode.map_id)
        .ok_or_else(|| anyhow!("unknown map {:?}", trace.header.episode.map_id))?;
    let result = replay_trace(&trace, map).with_context(|| format!("replaying {}", a.trace.display()))?;
    Ok(ReplayOutput {
        result,
        hash: trace_hash(&trace)?,
    })
}

#[derive(Debug, Clone, Default)]
pub struct LintOutput {
    pub traces: usize,
    pub budget_violations: Vec<(PathBuf, BudgetViolation)>,
    /// Non-agent steps that carry a help-policy probability.
    pub policy_consulted: Vec<(PathBuf, u32)>,
}

impl LintOutput {
    pub fn is_clean(&self) -> bool {
        self.budget_violations.is_empty() && self.policy_consulted.is_empty()
    }
}

pub fn lint_traces<'a>(traces: impl IntoIterator<Item = (&'a Path, &'a EpisodeTrace)>, budget: Option<u32>) -> LintOutput {
    let mut out = LintOutput::default();
    for (path, trace) in traces {
        out.traces += 1;
        let m = budget.unwrap_or(trace.header.budget);
        for v in lint_budget(trace, m) {
            out.budget_violations.push((path.to_path_buf(), v));
        }
        for i in lint_policy_silence(trace) {
            out.policy_consulted.push((path.to_path_buf(), i));
        }
    }
    out
}

/// Lints every trace in a directory; any finding is an error.
pub fn lint(a: &LintArgs) -> Result<LintOutput> {
    let traces = read_trace_dir(&a.traces)?;
    let out = lint_traces(traces.iter().map(|(p, t)| (p.as_path(), t)), a.budget);
    for (p, v) in &out.budget_violations {
        eprintln!("{}: {} non-agent steps from step {}", p.display(), v.length, v.first_step);
    }
    for (p, i) in &out.policy_consulted {
        eprintln!("{}: help policy consulted at non-agent step {i}", p.display());
    }
    if !out.is_clean() {
        bail!(
            "{} budget violations and {} policy findings in {} traces",
            out.budget_violations.len(),
            out.policy_consulted.len(),
            out.traces
        );
    }
    Ok(out)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting the async runtime")
}

/// Binds `address` and serves sessions until `cfg.max_sessions` have finished.
pub async fn serve_sessions(
    address: &str,
    envs: Vec<NavEnv>,
    policies: Policies,
    cfg: ServerConfig,
) -> Result<Vec<SessionReport>> {
    let listener = server::bind(address).await?;
    eprintln!("listening on ws://{}", listener.local_addr()?);
    server::serve(listener, envs, Arc::new(policies), Arc::new(cfg)).await
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let agent = load_frozen_agent(&a.agent)?;
    if a.policy == PolicyArg::Always {
        bail!("`always` is not a live policy; pass `none` or a help-policy file");
    }
    let help = load_gate_policy(&a.policy, &agent)?;
    let envs = load_envs(&a.maps, &a.episodes)?;
    let mut session = SessionConfig::new(SessionMode::Evaluation);
    session.budget = budget(a.budget)?;
    session.response_timeout = Duration::from_secs(a.timeout_secs);
    session.step_delay = Duration::from_millis(a.step_delay_ms);
    session.gate_mode = a.mode.into();
    session.trace_dir = a.traces.clone();
    session.timestamp = a.timestamp.clone();
    let cfg = ServerConfig {
        session,
        max_sessions: a.max_sessions,
        seed: a.seed,
    };
    runtime()?.block_on(serve_sessions(&a.bind, envs, Policies { agent, help }, cfg))?;
    Ok(())
}

/// Reads `path` as a training config, for callers that only need validation.
pub fn check_training_config(path: &Path) -> Result<TrainingConfig> {
    let cfg: TrainingConfig = read_json(path)?;
    cfg.reward.validate()?;
    cfg.ppo.validate()?;
    budget(cfg.budget)?;
    Ok(cfg)
}

/// Writes the default training config, as a starting point for edits.
pub fn write_default_training_config(path: &Path) -> Result<()> {
    write_json(path, &TrainingConfig::default())
}
