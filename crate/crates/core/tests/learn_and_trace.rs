use helpnav_core::agent::AgentPolicy;
use helpnav_core::env::*;
use helpnav_core::expert::*;
use helpnav_core::help::*;
use helpnav_core::learn::*;
use helpnav_core::metrics::*;
use helpnav_core::nnet::MlpParams;
use helpnav_core::runner::*;
use helpnav_core::suite::*;
use helpnav_core::trace::*;
use proptest::prelude::*;
use rand::Rng;

fn frozen_scripted() -> AgentPolicy {
    let mut a = AgentPolicy::scripted(&SensorConfig::default(), 64, 1).unwrap();
    a.frozen = true;
    a
}

fn meta() -> TraceMeta {
    TraceMeta::new("scripted", "none", &Intervener::sim_expert(), "t0")
}

fn big_room() -> GridMap {
    let row = ".".repeat(30);
    let text: Vec<&str> = (0..30).map(|_| row.as_str()).collect();
    GridMap::parse("big_room", &text.join("\n")).unwrap()
}

#[test]
fn telescoping_over_random_histories() {
    let cfg = RewardConfig::default();
    let mut rng = helpnav_core::seeded_rng(1);
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let r: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..10.0)).collect();
        let got = help_reward(&r, 0, rng.random_range(0..30), &cfg);
        let want = (r[n - 1] - r[0]) / (1.0 + cfg.lambda_d);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

proptest! {
    #[test]
    fn help_reward_shrinks_with_longer_interventions(
        steps in prop::collection::vec(0.0f64..0.5, 1..40),
        cr in 0u32..5, cp in 0u32..20, extra in 1u32..10,
    ) {
        // A history that only makes progress.
        let mut r = vec![-30.0];
        for s in steps {
            let last = *r.last().unwrap();
            r.push(last + s);
        }
        let cfg = RewardConfig::default();
        let a = help_reward(&r, cr, cp, &cfg);
        let b = help_reward(&r, cr + 1, cp + extra, &cfg);
        prop_assert!(b <= a);
    }

    #[test]
    fn penalty_is_bounded(ch in 0u32..1000, ca in 0u32..1000) {
        prop_assume!(ch + ca > 0);
        let cfg = RewardConfig::default();
        let penalty = -total_reward(0.0, 0.0, ch, ca, &cfg).unwrap();
        prop_assert!((0.0..=cfg.lambda_h).contains(&penalty));
    }

    #[test]
    fn aggregate_is_permutation_invariant(values in prop::collection::vec((any::<bool>(), 0.0f64..1.0, 0.0f64..1.0, 0u8..3), 1..30), seed in any::<u64>()) {
        let results: Vec<(String, EpisodeResult)> = values
            .iter()
            .map(|(s, spl, hc, g)| (format!("g{g}"), result(*s, if *s { *spl } else { 0.0 }, *hc)))
            .collect();
        let mut shuffled = results.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut helpnav_core::seeded_rng(seed));
        prop_assert_eq!(aggregate(&results).unwrap(), aggregate(&shuffled).unwrap());
    }

    #[test]
    fn spl_never_exceeds_success(l in 0.1f64..20.0, p in 0.0f64..40.0, success in any::<bool>()) {
        let v = spl(success, l, p).unwrap();
        let cap = if success { 1.0 } else { 0.0 };
        prop_assert!(v <= cap);
        prop_assert_eq!(v == f64::from(u8::from(success)), !success || p <= l);
    }
}

fn result(success: bool, spl: f64, hc: f64) -> EpisodeResult {
    EpisodeResult {
        success,
        shortest_path_length: 1.0,
        actual_path_length: 1.0,
        human_actions: 0,
        agent_actions: 1,
        help_requests: 0,
        spl,
        human_contribution: hc,
    }
}

#[test]
fn aggregate_fixture_of_ten() {
    let rows = [
        ("train", true, 0.9, 0.1),
        ("train", true, 0.8, 0.0),
        ("train", false, 0.0, 0.5),
        ("train", true, 0.7, 0.2),
        ("train", true, 1.0, 0.0),
        ("train", false, 0.0, 0.3),
        ("val", true, 0.6, 0.25),
        ("val", true, 0.5, 0.75),
        ("val", false, 0.0, 0.0),
        ("val", true, 0.9, 0.5),
    ];
    let input: Vec<(String, EpisodeResult)> = rows.iter().map(|(g, s, spl, hc)| (g.to_string(), result(*s, *spl, *hc))).collect();
    let out = aggregate(&input).unwrap();
    // Hand sums: train spl 3.4/6, success 4/6, contribution 1.1/6;
    //            val spl 2.0/4, success 3/4, contribution 1.5/4.
    assert_eq!(out.len(), 2);
    assert_eq!((out[0].group.as_str(), out[0].n), ("train", 6));
    assert!((out[0].spl - 3.4 / 6.0).abs() < 1e-12);
    assert!((out[0].success - 4.0 / 6.0).abs() < 1e-12);
    assert!((out[0].human_contribution - 1.1 / 6.0).abs() < 1e-12);
    assert_eq!((out[1].group.as_str(), out[1].n), ("val", 4));
    assert!((out[1].spl - 0.5).abs() < 1e-12);
    assert!((out[1].success - 0.75).abs() < 1e-12);
    assert!((out[1].human_contribution - 0.375).abs() < 1e-12);
}

/// Two operator takeovers: the interrupt step and ten more manual steps each.
fn two_interrupt_trace(agent: &AgentPolicy) -> (EpisodeTrace, GridMap) {
    let map = big_room();
    let spec = make_episode(&map, Pose::new(2, 2, Heading::E), Cell::new(27, 27), DEFAULT_MAX_STEPS, 0).unwrap();
    let mut runner = EpisodeRunner::new(NavEnv::new(map.clone(), spec).unwrap(), agent, FeatureVariant::All, InterventionBudget::default());
    for _ in 0..4 {
        runner.proceed(None).unwrap();
    }
    for _ in 0..2 {
        runner.interrupt().unwrap();
        for i in 0..11 {
            let a = if i % 3 == 0 { Action::TurnLeft } else { Action::Forward };
            runner.intervene(a, Actor::Human, false).unwrap();
        }
        runner.release().unwrap();
        for _ in 0..3 {
            runner.proceed(None).unwrap();
        }
    }
    while runner.phase() != Phase::Terminated {
        runner.proceed(None).unwrap();
    }
    (runner.finish(meta()).unwrap(), map)
}

#[test]
fn labeling_two_interrupt_fixture() {
    let agent = frozen_scripted();
    let (trace, map) = two_interrupt_trace(&agent);
    assert_eq!(trace.interrupt_count(), 2);
    let data = label_demonstration(&trace, &map, &agent, FeatureVariant::All).unwrap();
    assert_eq!(data.len(), trace.steps.len() - 20);
    assert_eq!(data.iter().filter(|s| s.label == Label::Ask).count(), 2);
    assert!(data.iter().all(|s| s.features.values.len() == 68));
    replay(&trace, &map).unwrap();
}

#[test]
fn labeling_autonomous_and_single_interrupt() {
    let agent = frozen_scripted();
    let map = fixture("open_room").unwrap();
    let spec = make_episode(&map, Pose::new(0, 0, Heading::E), Cell::new(7, 7), DEFAULT_MAX_STEPS, 0).unwrap();
    let env = NavEnv::new(map.clone(), spec).unwrap();
    let trace = run_episode(env.clone(), &agent, HelpGate::AlwaysProceed, &Intervener::sim_expert(), InterventionBudget::default(), GateMode::Argmax, &mut helpnav_core::seeded_rng(0), meta()).unwrap();
    let data = label_demonstration(&trace, &map, &agent, FeatureVariant::PointPath).unwrap();
    assert_eq!(data.len(), trace.steps.len());
    assert!(data.iter().all(|s| s.label == Label::Proceed));

    let mut runner = EpisodeRunner::new(env, &agent, FeatureVariant::All, InterventionBudget::default());
    runner.proceed(None).unwrap();
    runner.proceed(None).unwrap();
    runner.interrupt().unwrap();
    runner.intervene(Action::Forward, Actor::Human, false).unwrap();
    runner.release().unwrap();
    while runner.phase() != Phase::Terminated {
        runner.proceed(None).unwrap();
    }
    let trace = runner.finish(meta()).unwrap();
    let data = label_demonstration(&trace, &map, &agent, FeatureVariant::Encoder).unwrap();
    let asks: Vec<usize> = data.iter().enumerate().filter(|(_, s)| s.label == Label::Ask).map(|(i, _)| i).collect();
    assert_eq!(asks, vec![2]);
}

#[test]
fn labeling_rejects_tampered_trace() {
    let agent = frozen_scripted();
    let (mut trace, map) = two_interrupt_trace(&agent);
    trace.steps[1].pose_before.x += 1;
    assert!(matches!(
        label_demonstration(&trace, &map, &agent, FeatureVariant::All),
        Err(helpnav_core::Error::Learn(LearnError::MalformedTrace(_)))
    ));
}

#[test]
fn bc_learns_separable_set() {
    let mut rng = helpnav_core::seeded_rng(8);
    let data: Vec<LabeledSample> = (0..2048)
        .map(|_| {
            let diff = rng.random_range(-0.1..0.1);
            let values = vec![diff, rng.random_range(-3.14..3.14), rng.random_range(0.0..0.3)];
            LabeledSample {
                features: HelpFeatures { variant: FeatureVariant::PointPath, values },
                label: if diff < 0.0 { Label::Ask } else { Label::Proceed },
            }
        })
        .collect();
    let mut policy = HelpPolicy::new(FeatureVariant::PointPath, 64, &mut helpnav_core::seeded_rng(2)).unwrap();
    let log = bc_train(&data, &mut policy, &BcConfig::default(), ClassWeight::Balanced).unwrap();
    assert_eq!(log.len(), 3);
    let correct = data
        .iter()
        .filter(|s| policy.decide(&s.features, DecisionMode::Argmax).unwrap().0 == s.label)
        .count();
    let accuracy = correct as f64 / data.len() as f64;
    assert!(accuracy >= 0.95, "accuracy {accuracy}, losses {log:?}");
}

#[test]
fn help_policy_basics() {
    let zero = HelpPolicy {
        net: MlpParams::zeros(&[3, 64, 64, 2]).unwrap(),
        variant: FeatureVariant::PointPath,
        ask_threshold: 0.5,
    };
    let f = HelpFeatures { variant: FeatureVariant::PointPath, values: vec![0.1, -0.2, 0.3] };
    assert_eq!(zero.ask_probability(&f).unwrap(), 0.5);
    let wrong = HelpFeatures { variant: FeatureVariant::All, values: vec![0.0; 68] };
    assert!(matches!(zero.ask_probability(&wrong), Err(HelpError::VariantShapeMismatch { .. })));

    let mut rng = helpnav_core::seeded_rng(11);
    for variant in FeatureVariant::ALL_VARIANTS {
        let p = HelpPolicy::new(variant, 64, &mut rng).unwrap();
        let mut asks = 0;
        let n = 400;
        for i in 0..n {
            let enc: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let now = PointGoal { distance: rng.random_range(0.0..2.0), heading: rng.random_range(-3.0..3.0) };
            let prev = PointGoal { distance: now.distance + rng.random_range(-0.1..0.1), heading: 0.0 };
            let f = assemble_features(variant, &enc, now, Some(prev), rng.random_range(0..500), rng.random_range(0..500), 500).unwrap();
            let (d1, p1) = p.decide(&f, DecisionMode::Argmax).unwrap();
            let (d2, _) = p.decide(&f, DecisionMode::Argmax).unwrap();
            assert_eq!(d1, d2);
            let mut g = f.clone();
            let k = i % g.values.len();
            g.values[k] += 1e-9;
            assert!((p.ask_probability(&g).unwrap() - p1).abs() <= 1e-6);
            if d1 == HelpDecision::Ask {
                asks += 1;
            }
        }
        let rate = asks as f64 / n as f64;
        let mut sampled = 0;
        for _ in 0..n {
            let enc: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let now = PointGoal { distance: 1.0, heading: rng.random_range(-3.0..3.0) };
            let f = assemble_features(variant, &enc, now, None, 10, 5, 500).unwrap();
            if p.decide(&f, DecisionMode::Sample(&mut rng)).unwrap().0 == HelpDecision::Ask {
                sampled += 1;
            }
        }
        let sampled_rate = sampled as f64 / n as f64;
        assert!(sampled_rate > 0.2 && sampled_rate < 0.8, "{variant:?}: sampled ask rate {sampled_rate} (argmax {rate})");
    }
}

fn small_ppo(total: u64) -> PpoConfig {
    PpoConfig { total_timesteps: total, rollout_length: 256, minibatch_size: 64, ..PpoConfig::default() }
}

#[test]
fn ppo_train_contract() {
    let agent = frozen_scripted();
    let suite = generate_suite(&SuiteConfig::training(6), 3).unwrap();
    let mut source = SuiteSource::new(suite.envs().unwrap()).unwrap();
    let init = HelpPolicy::new(FeatureVariant::All, 64, &mut helpnav_core::seeded_rng(1)).unwrap();
    let budget = InterventionBudget::default();
    let reward = RewardConfig::default();
    let iv = Intervener::sim_expert();

    let mut p0 = init.clone();
    assert!(ppo_train(&mut source, &agent, &mut p0, &iv, budget, &reward, &small_ppo(0), 4).unwrap().is_empty());
    assert_eq!(p0, init);

    let fp = agent.fingerprint();
    let mut a = init.clone();
    let log_a = ppo_train(&mut source, &agent, &mut a, &iv, budget, &reward, &small_ppo(1500), 4).unwrap();
    let mut b = init.clone();
    let log_b = ppo_train(&mut source, &agent, &mut b, &iv, budget, &reward, &small_ppo(1500), 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    assert_ne!(a, init);
    assert_eq!(agent.fingerprint(), fp);
    assert!(log_a.iter().all(|e| e.ask_rate >= 0.0 && e.ask_rate <= 1.0 && e.mean_return.is_finite()));

    let mut thawed = agent.clone();
    thawed.frozen = false;
    let mut c = init.clone();
    assert!(matches!(
        ppo_train(&mut source, &thawed, &mut c, &iv, budget, &reward, &small_ppo(100), 4),
        Err(helpnav_core::Error::Learn(LearnError::AgentNotFrozen))
    ));
}

#[test]
fn trace_append_replay_and_tamper() {
    let agent = frozen_scripted();
    let map = fixture("concave_trap").unwrap();
    let spec = make_episode(&map, CONCAVE_TRAP_STARTS[0], CONCAVE_TRAP_GOAL, DEFAULT_MAX_STEPS, 0).unwrap();
    let trace = run_episode(NavEnv::new(map.clone(), spec.clone()).unwrap(), &agent, HelpGate::AlwaysProceed, &Intervener::sim_expert(), InterventionBudget::default(), GateMode::Argmax, &mut helpnav_core::seeded_rng(0), meta()).unwrap();
    assert_eq!(trace.steps.len(), 500);

    // Re-append record by record, as a writer would.
    let mut copy = EpisodeTrace::new(trace.header.clone());
    for s in &trace.steps {
        copy.append_step(s.clone()).unwrap();
    }
    copy.close(trace.footer.clone().unwrap()).unwrap();
    let replayed = replay(&copy, &map).unwrap();
    assert_eq!(&replayed, &trace.footer.as_ref().unwrap().result);

    let env = NavEnv::new(map.clone(), spec).unwrap();
    let mut s = env.initial_state();
    for r in &trace.steps {
        s.step(&env, r.action, r.actor).unwrap();
    }
    let last = trace.steps.last().unwrap();
    let mut expect = env.initial_state();
    expect.pose = last.pose_before;
    expect.step(&env, last.action, Actor::Agent).unwrap();
    assert_eq!(s.pose, expect.pose);

    let mut gap = EpisodeTrace::new(trace.header.clone());
    gap.append_step(trace.steps[0].clone()).unwrap();
    assert_eq!(gap.append_step(trace.steps[2].clone()), Err(TraceError::IndexGap { expected: 1, found: 2 }));

    let mut tampered = trace.clone();
    tampered.steps[10].action = match tampered.steps[10].action {
        Action::Forward => Action::TurnLeft,
        _ => Action::Forward,
    };
    assert!(matches!(replay(&tampered, &map), Err(TraceError::ReplayDivergence(_))));

    let empty = EpisodeTrace::new(trace.header.clone());
    assert!(matches!(replay(&empty, &map), Err(TraceError::ReplayDivergence(_))));
}

#[test]
fn help_episodes_respect_budget_and_silence() {
    let agent = frozen_scripted();
    let suite = generate_suite(&SuiteConfig::validation(20), 8).unwrap();
    let policy = HelpPolicy::new(FeatureVariant::All, 64, &mut helpnav_core::seeded_rng(5)).unwrap();
    let mut rng = helpnav_core::seeded_rng(1);
    for m in [1, 5, 25] {
        for env in suite.envs().unwrap() {
            let map = env.map().clone();
            for iv in [Intervener::sim_expert(), Intervener::noisy_expert(0.2).unwrap()] {
                let trace = run_episode(env.clone(), &agent, HelpGate::Policy(&policy), &iv, InterventionBudget::new(m).unwrap(), GateMode::Sample, &mut rng, meta()).unwrap();
                assert!(lint_budget(&trace, m).is_empty());
                assert!(lint_policy_silence(&trace).is_empty());
                let r = replay(&trace, &map).unwrap();
                assert_eq!(Some(r.human_contribution), trace.contribution_from_steps());
            }
        }
    }
}
