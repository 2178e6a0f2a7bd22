mod common;

use std::time::Duration;

use common::*;
use helpnav::core::env::{Action, Actor, Status};
use helpnav::core::expert::InterventionBudget;
use helpnav::core::runner::Phase;
use helpnav::core::trace::replay;
use helpnav::protocol::{ClientMsg, ServerMsg, PROTOCOL_ERROR};
use helpnav::session::{run_session, Inbound, Policies, SessionConfig, SessionError, SessionMode, SessionOutcome};
use helpnav::trace_file::{read_trace, read_trace_dir};
use tokio::sync::mpsc;

fn msg(m: ClientMsg) -> Inbound {
    Inbound::Message(m)
}

fn act(a: Action) -> Inbound {
    msg(ClientMsg::Action { action: a })
}

/// Runs a session with every inbound message queued up front. The inbox stays open
/// afterwards, so an empty queue means a silent operator.
async fn run_queued(
    cfg: &SessionConfig,
    pol: &Policies,
    queued: Vec<Inbound>,
) -> (Result<SessionOutcome, SessionError>, Vec<ServerMsg>) {
    let (tx, mut rx) = mpsc::channel(64);
    for m in queued {
        tx.send(m).await.unwrap();
    }
    let (otx, mut orx) = mpsc::channel(4096);
    let r = run_session(open_env(), pol, cfg, 7, &mut rx, &otx).await;
    drop(otx);
    drop(tx);
    let mut frames = Vec::new();
    while let Some(f) = orx.recv().await {
        frames.push(f);
    }
    (r, frames)
}

fn assert_protocol_error(r: Result<SessionOutcome, SessionError>, frames: &[ServerMsg]) {
    assert!(matches!(r, Err(SessionError::Protocol(_))), "{r:?}");
    match frames.last() {
        Some(ServerMsg::Error { code, .. }) => assert_eq!(code, PROTOCOL_ERROR),
        other => panic!("last frame {other:?}"),
    }
}

#[tokio::test]
async fn demonstration_takeover_records_human_steps() {
    let cfg = SessionConfig::new(SessionMode::Demonstration);
    let queued = vec![
        msg(ClientMsg::Interrupt),
        act(Action::Forward),
        act(Action::Forward),
        act(Action::TurnRight),
        msg(ClientMsg::Release),
    ];
    let (r, frames) = run_queued(&cfg, &policies(None), queued).await;
    let trace = r.unwrap().trace;
    let human: Vec<_> = trace.steps.iter().take_while(|s| s.actor == Actor::Human).collect();
    assert_eq!(human.len(), 3);
    assert!(human[0].interrupt);
    assert!(!human[1].interrupt && !human[2].interrupt);
    assert!(trace.steps[3..].iter().all(|s| s.actor == Actor::Agent));
    assert!(trace.steps.iter().all(|s| s.ask_probability.is_none()));
    let footer = trace.footer.unwrap();
    assert_eq!(footer.status, Status::Stopped);
    assert!(footer.result.success);
    assert_eq!(footer.result.human_actions, 3);
    assert!(footer.result.human_contribution > 0.0);
    assert!(matches!(frames.last(), Some(ServerMsg::Terminated { result }) if result.success));
    assert!(!frames.iter().any(|f| matches!(f, ServerMsg::HelpRequest { .. })));
}

#[tokio::test]
async fn state_frames_carry_grid_once_and_track_phase() {
    let cfg = SessionConfig::new(SessionMode::Demonstration);
    let queued = vec![msg(ClientMsg::Interrupt), act(Action::Forward), msg(ClientMsg::Release)];
    let (r, frames) = run_queued(&cfg, &policies(None), queued).await;
    r.unwrap();
    let states: Vec<_> = frames
        .iter()
        .filter_map(|f| match f {
            ServerMsg::State(s) => Some(s),
            _ => None,
        })
        .collect();
    let grid = states[0].grid.as_ref().unwrap();
    assert_eq!((grid.width, grid.height, grid.blocked.len()), (8, 8, 64));
    assert!(states[1..].iter().all(|s| s.grid.is_none()));
    assert_eq!(states[0].phase, Phase::AgentControl);
    assert_eq!(states[1].phase, Phase::HumanControl);
    assert_eq!(states[1].budget_remaining, 25);
    assert_eq!(states[2].budget_remaining, 24);
    assert_eq!(states[3].phase, Phase::AgentControl);
    assert_eq!(states.last().unwrap().phase, Phase::Terminated);
    for w in states.windows(2) {
        assert!(w[1].step >= w[0].step);
    }
}

#[tokio::test]
async fn demonstration_without_interrupts_is_all_agent() {
    let cfg = SessionConfig::new(SessionMode::Demonstration);
    let (r, _) = run_queued(&cfg, &policies(None), vec![]).await;
    let trace = r.unwrap().trace;
    let result = trace.footer.unwrap().result;
    assert!(result.success);
    assert_eq!(result.human_contribution, 0.0);
    assert!(trace.steps.iter().all(|s| s.actor == Actor::Agent && !s.interrupt));
}

#[tokio::test(start_paused = true)]
async fn unanswered_requests_fall_back_to_the_expert() {
    let mut cfg = SessionConfig::new(SessionMode::Evaluation);
    cfg.response_timeout = Duration::from_secs(5);
    let (r, frames) = run_queued(&cfg, &policies(Some(always_ask_policy())), vec![]).await;
    let trace = r.unwrap().trace;
    assert!(!trace.steps.is_empty());
    assert!(trace.steps.iter().all(|s| s.actor == Actor::Expert && s.fallback));
    assert!(trace.steps[0].help_requested);
    assert!(trace.steps.iter().all(|s| s.ask_probability.is_none()));
    let result = trace.footer.unwrap().result;
    assert!(result.success);
    assert_eq!(result.human_contribution, 1.0);
    let requests: Vec<_> = frames
        .iter()
        .filter_map(|f| match f {
            ServerMsg::HelpRequest { step, max_steps } => Some((*step, *max_steps)),
            _ => None,
        })
        .collect();
    assert_eq!(requests[0], (0, 25));
    let asked = frames.iter().find_map(|f| match f {
        ServerMsg::State(s) if s.phase == Phase::AwaitingHuman => s.ask_probability,
        _ => None,
    });
    assert!(asked.unwrap() > 0.99);
}

#[tokio::test(start_paused = true)]
async fn silent_operator_takeover_times_out_into_release() {
    let mut cfg = SessionConfig::new(SessionMode::Demonstration);
    cfg.response_timeout = Duration::from_secs(5);
    let (r, _) = run_queued(&cfg, &policies(None), vec![msg(ClientMsg::Interrupt)]).await;
    let trace = r.unwrap().trace;
    assert!(trace.steps.iter().all(|s| s.actor == Actor::Agent));
    assert!(trace.footer.unwrap().result.success);
}

#[tokio::test]
async fn declined_requests_let_the_agent_step() {
    let cfg = SessionConfig::new(SessionMode::Evaluation);
    let pol = policies(Some(always_ask_policy()));
    let (tx, mut rx) = mpsc::channel(64);
    let (otx, mut orx) = mpsc::channel(64);
    let client = async move {
        let mut requests = 0;
        while let Some(f) = orx.recv().await {
            match f {
                ServerMsg::HelpRequest { .. } => {
                    requests += 1;
                    tx.send(msg(ClientMsg::Decline)).await.unwrap();
                }
                ServerMsg::Terminated { .. } | ServerMsg::Error { .. } => break,
                ServerMsg::State(_) => {}
            }
        }
        requests
    };
    let session = async {
        let r = run_session(open_env(), &pol, &cfg, 7, &mut rx, &otx).await;
        drop(otx);
        r
    };
    let (r, requests) = tokio::join!(session, client);
    let trace = r.unwrap().trace;
    assert_eq!(requests, trace.steps.len());
    assert!(trace.steps.iter().all(|s| s.actor == Actor::Agent && s.help_requested));
    assert!(trace.steps.iter().all(|s| s.ask_probability.is_some()));
    let result = trace.footer.unwrap().result;
    assert_eq!(result.human_contribution, 0.0);
    assert_eq!(result.help_requests as usize, requests);
}

#[tokio::test]
async fn answered_request_runs_human_steps_until_budget() {
    let mut cfg = SessionConfig::new(SessionMode::Evaluation);
    cfg.budget = InterventionBudget::new(2).unwrap();
    let pol = policies(Some(always_ask_policy()));
    let (tx, mut rx) = mpsc::channel(64);
    let (otx, mut orx) = mpsc::channel(64);
    let client = async move {
        let mut answered = false;
        while let Some(f) = orx.recv().await {
            match f {
                ServerMsg::HelpRequest { max_steps, .. } if !answered => {
                    assert_eq!(max_steps, 2);
                    answered = true;
                    tx.send(act(Action::TurnRight)).await.unwrap();
                    tx.send(act(Action::Forward)).await.unwrap();
                }
                ServerMsg::HelpRequest { .. } => tx.send(msg(ClientMsg::Decline)).await.unwrap(),
                ServerMsg::Terminated { .. } | ServerMsg::Error { .. } => break,
                ServerMsg::State(_) => {}
            }
        }
    };
    let session = async {
        let r = run_session(open_env(), &pol, &cfg, 7, &mut rx, &otx).await;
        drop(otx);
        r
    };
    let (r, ()) = tokio::join!(session, client);
    let trace = r.unwrap().trace;
    assert_eq!(trace.steps[0].actor, Actor::Human);
    assert!(trace.steps[0].help_requested);
    assert_eq!(trace.steps[0].action, Action::TurnRight);
    assert_eq!(trace.steps[1].actor, Actor::Human);
    assert!(!trace.steps[1].help_requested);
    assert!(trace.steps[2..].iter().all(|s| s.actor == Actor::Agent));
}

#[tokio::test]
async fn protocol_violations_end_the_session_with_an_error_frame() {
    let demo = SessionConfig::new(SessionMode::Demonstration);
    let eval = SessionConfig::new(SessionMode::Evaluation);
    let mut short = SessionConfig::new(SessionMode::Demonstration);
    short.budget = InterventionBudget::new(2).unwrap();
    let cases: Vec<(&str, &SessionConfig, Vec<Inbound>)> = vec![
        ("action while the agent drives", &demo, vec![act(Action::Forward)]),
        ("release while the agent drives", &demo, vec![msg(ClientMsg::Release)]),
        ("interrupt during evaluation", &eval, vec![msg(ClientMsg::Interrupt)]),
        ("malformed input", &demo, vec![Inbound::Malformed("not json".into())]),
        ("decline during a takeover", &demo, vec![msg(ClientMsg::Interrupt), msg(ClientMsg::Decline)]),
        ("interrupt during a takeover", &demo, vec![msg(ClientMsg::Interrupt), msg(ClientMsg::Interrupt)]),
        (
            "action after the budget ran out",
            &short,
            vec![
                msg(ClientMsg::Interrupt),
                act(Action::Forward),
                act(Action::Forward),
                act(Action::Forward),
            ],
        ),
    ];
    for (name, cfg, queued) in cases {
        let (r, frames) = run_queued(cfg, &policies(None), queued).await;
        println!("{name}");
        assert_protocol_error(r, &frames);
    }
}

#[tokio::test]
async fn unfrozen_agent_is_an_internal_error() {
    let mut pol = policies(None);
    pol.agent.frozen = false;
    let (r, frames) = run_queued(&SessionConfig::new(SessionMode::Demonstration), &pol, vec![]).await;
    assert!(matches!(r, Err(SessionError::Internal(_))));
    assert!(matches!(&frames[..], [ServerMsg::Error { code, .. }] if code == "INTERNAL"));
}

#[tokio::test]
async fn trace_file_matches_the_session_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SessionConfig::new(SessionMode::Demonstration);
    cfg.trace_dir = Some(dir.path().to_path_buf());
    cfg.timestamp = Some("1700000000000".into());
    let queued = vec![
        msg(ClientMsg::Interrupt),
        act(Action::TurnRight),
        act(Action::Forward),
        msg(ClientMsg::Release),
    ];
    let (r, _) = run_queued(&cfg, &policies(None), queued).await;
    let outcome = r.unwrap();
    let path = outcome.path.unwrap();
    assert_eq!(path.file_name().unwrap(), "open_room_3_1700000000000.jsonl");
    let on_disk = read_trace(&path).unwrap();
    assert_eq!(on_disk, outcome.trace);
    assert_eq!(on_disk.header.intervener, helpnav::core::expert::IntervenerKind::LiveHuman);
    let replayed = replay(&on_disk, open_env().map()).unwrap();
    assert_eq!(replayed, on_disk.footer.unwrap().result);
}

#[tokio::test]
async fn disconnect_leaves_a_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SessionConfig::new(SessionMode::Demonstration);
    cfg.trace_dir = Some(dir.path().to_path_buf());
    let queued = vec![
        msg(ClientMsg::Interrupt),
        act(Action::TurnRight),
        act(Action::Forward),
        Inbound::Closed,
    ];
    let (r, _) = run_queued(&cfg, &policies(None), queued).await;
    assert!(matches!(r, Err(SessionError::Disconnected)), "{r:?}");
    let traces = read_trace_dir(dir.path()).unwrap();
    assert_eq!(traces.len(), 1);
    let trace = &traces[0].1;
    assert_eq!(trace.steps.len(), 2);
    assert!(trace.footer.is_none());
}
