mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{grid_spec, reference_run, robot_choice, ORACLE_SEED, TIMEOUT};
use pbrl_core::algorithms::run_algorithm;
use pbrl_core::mdp::{make_gridworld, Step, Trajectory};
use pbrl_core::preference::{HumanError, HumanOracle, Oracle, PreferenceModel, Winner};
use pbrl_service::service::PreferenceService;
use pbrl_service::{read_label_log, LogReplay, QueryState, RunState, Session, SessionOracle, ServiceError, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bare_session(svc: &PreferenceService) -> Arc<Session> {
    let mdp = Arc::new(make_gridworld(3, 3, 1.0 / 3.0, 0).unwrap());
    svc.open_session(None, mdp, None, None, vec![]).unwrap()
}

fn path(actions: &[usize]) -> Trajectory {
    Trajectory { start_layer: 0, steps: actions.iter().map(|&a| Step { state: 0, action: a }).collect() }
}

fn wait_for_pending(s: &Session, n: u64) {
    let start = Instant::now();
    while s.status().pending < n {
        assert!(start.elapsed() < TIMEOUT, "no query appeared");
        std::thread::sleep(Duration::from_millis(1));
    }
}

#[test]
fn an_answer_unblocks_the_comparison() {
    let svc = PreferenceService::new();
    let s = bare_session(&svc);
    assert!(s.next().is_none());
    let oracle = SessionOracle(s.clone());
    let asker = std::thread::spawn(move || oracle.ask(&path(&[0, 0, 1, 1]), &path(&[1, 1, 0, 0])));
    wait_for_pending(&s, 1);
    let q = s.next().unwrap();
    assert_eq!(q.state, QueryState::Pending);
    assert_eq!(q.left.grid.as_ref().unwrap().path.len(), 5);
    let done = svc.answer(&q.query_id, Side::Left).unwrap();
    assert_eq!(done.state, QueryState::Answered { winner: Side::Left });
    assert_eq!(asker.join().unwrap(), Ok(Winner::First));
    assert_eq!(s.status().answered, 1);
    assert!(s.next().is_none());
}

#[test]
fn queries_are_served_first_in_first_out() {
    let svc = PreferenceService::new();
    let s = bare_session(&svc);
    let first = {
        let o = SessionOracle(s.clone());
        std::thread::spawn(move || o.ask(&path(&[0, 0, 1, 1]), &path(&[1, 1, 0, 0])))
    };
    wait_for_pending(&s, 1);
    let second = {
        let o = SessionOracle(s.clone());
        std::thread::spawn(move || o.ask(&path(&[0, 1, 0, 1]), &path(&[1, 0, 1, 0])))
    };
    wait_for_pending(&s, 2);
    let q0 = s.next().unwrap();
    assert_eq!(q0.seq, 0);
    svc.answer(&q0.query_id, Side::Right).unwrap();
    let q1 = s.next().unwrap();
    assert_eq!(q1.seq, 1);
    svc.answer(&q1.query_id, Side::Left).unwrap();
    assert_eq!(first.join().unwrap(), Ok(Winner::Second));
    assert_eq!(second.join().unwrap(), Ok(Winner::First));
}

#[test]
fn bad_answers_leave_the_log_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let svc = PreferenceService::new();
    let mdp = Arc::new(make_gridworld(3, 3, 1.0 / 3.0, 0).unwrap());
    let s = svc.open_session(None, mdp, None, Some(log.clone()), vec![]).unwrap();
    assert_eq!(svc.answer("nope", Side::Left), Err(ServiceError::UnknownQuery("nope".into())));
    let o = SessionOracle(s.clone());
    let asker = std::thread::spawn(move || o.ask(&path(&[0, 0, 1, 1]), &path(&[1, 1, 0, 0])));
    wait_for_pending(&s, 1);
    let id = s.next().unwrap().query_id;
    svc.answer(&id, Side::Right).unwrap();
    asker.join().unwrap().unwrap();
    assert_eq!(svc.answer(&id, Side::Left), Err(ServiceError::AlreadyAnswered(id.clone())));
    let records = read_label_log(&log).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!((records[0].query_id.as_str(), records[0].winner), (id.as_str(), Side::Right));
}

#[test]
fn closing_fails_the_waiting_comparison() {
    let svc = PreferenceService::new();
    let s = bare_session(&svc);
    let o = SessionOracle(s.clone());
    let asker = std::thread::spawn(move || o.ask(&path(&[0, 0, 1, 1]), &path(&[1, 1, 0, 0])));
    wait_for_pending(&s, 1);
    svc.close_all();
    assert_eq!(asker.join().unwrap(), Err(HumanError::SessionClosed { answered: 0 }));
    assert_eq!(s.status().pending, 0);
    assert!(s.status().closed);
}

/// Answers every query of `s` like the deterministic model, returning how
/// many were answered; stops after `limit`.
fn drive(svc: &PreferenceService, s: &Session, rng: &mut ChaCha8Rng, limit: usize) -> usize {
    let mut answered = 0;
    let start = Instant::now();
    while answered < limit && s.status().run == RunState::Running {
        assert!(start.elapsed() < TIMEOUT);
        match s.next() {
            Some(q) => {
                svc.answer(&q.query_id, robot_choice(s.mdp(), &q, rng)).unwrap();
                answered += 1;
            }
            None => std::thread::sleep(Duration::from_micros(200)),
        }
    }
    answered
}

#[test]
fn labeled_runs_match_the_simulated_oracle_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let spec = grid_spec(Some(log.clone()));
    let (mdp, reference) = reference_run(&spec);

    let svc = PreferenceService::new();
    let s = svc.start(spec.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED);
    let answered = drive(&svc, &s, &mut rng, usize::MAX);
    let RunState::Finished { policy_hash, comparisons, .. } = s.wait_finished(TIMEOUT) else { panic!("run failed") };
    assert_eq!(policy_hash, reference.policy.digest());
    assert_eq!(comparisons, reference.counters.comparisons);
    assert_eq!(answered as u64, comparisons);
    assert_eq!(s.status().policy_progress, Some(1.0));

    let records = read_label_log(&log).unwrap();
    assert_eq!(records.len() as u64, comparisons);
    let replay = Arc::new(LogReplay::from_log(&log, s.id()).unwrap());
    let mut oracle = Oracle::new(PreferenceModel::Human(replay), &mdp, 0).unwrap();
    let out = run_algorithm(&mdp, &mut oracle, &spec.algo).unwrap();
    assert_eq!(out.policy.digest(), policy_hash);
}

#[test]
fn interrupted_runs_resume_from_their_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let spec = grid_spec(Some(log.clone()));
    let (_, reference) = reference_run(&spec);
    assert!(reference.counters.comparisons > 10);

    let svc = PreferenceService::new();
    let first = svc.start(spec.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED);
    assert_eq!(drive(&svc, &first, &mut rng, 10), 10);
    wait_for_pending(&first, 1);
    first.close();
    assert!(matches!(first.wait_finished(TIMEOUT), RunState::Failed { .. }));

    let mut resumed = spec.clone();
    resumed.resume_from = Some(log.clone());
    resumed.resume_session = Some(first.id().into());
    resumed.log = Some(dir.path().join("rest.jsonl"));
    let second = svc.start(resumed).unwrap();
    drive(&svc, &second, &mut rng, usize::MAX);
    let RunState::Finished { policy_hash, .. } = second.wait_finished(TIMEOUT) else { panic!("resume failed") };
    assert_eq!(policy_hash, reference.policy.digest());
    assert_eq!(second.status().replayed, 10);
    assert_eq!(second.status().answered, reference.counters.comparisons - 10);
}

#[test]
fn exhausted_replays_report_a_closed_session() {
    let replay = LogReplay::new(vec![Winner::First]);
    assert_eq!(replay.ask(&path(&[0]), &path(&[1])), Ok(Winner::First));
    assert_eq!(replay.ask(&path(&[0]), &path(&[1])), Err(HumanError::SessionClosed { answered: 1 }));
}

#[test]
fn invalid_specs_are_rejected() {
    let svc = PreferenceService::new();
    let mut spec = grid_spec(None);
    spec.algo.delta = 2.0;
    assert!(matches!(svc.start(spec), Err(ServiceError::BadSpec(_))));
    let mut spec = grid_spec(None);
    spec.resume_from = Some("missing.jsonl".into());
    assert!(svc.start(spec).is_err());
    assert!(svc.sessions().is_empty());
}
