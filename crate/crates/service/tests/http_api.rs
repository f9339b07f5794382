mod common;

use std::time::{Duration, Instant};

use common::{grid_spec, reference_run, robot_choice, ORACLE_SEED, TIMEOUT};
use pbrl_service::http::{serve, AnswerAck, SessionList};
use pbrl_service::service::PreferenceService;
use pbrl_service::{PendingQuery, RunState, SessionStatus, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

async fn start_server(svc: PreferenceService) -> (String, tokio::sync::oneshot::Sender<()>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(serve(svc, listener, None, async {
        let _ = rx.await;
    }));
    (base, tx)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn robot_labeler_reproduces_the_simulated_run() {
    let spec = grid_spec(None);
    let (mdp, reference) = reference_run(&spec);
    assert!(reference.counters.comparisons <= 200);

    let svc = PreferenceService::new();
    let (base, stop) = start_server(svc.clone()).await;
    let client = reqwest::Client::new();
    let session = svc.start(spec).unwrap();

    let list: SessionList = client.get(format!("{base}/sessions")).send().await.unwrap().json().await.unwrap();
    assert_eq!(list.sessions.len(), 1);
    let id = list.sessions[0].session_id.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED);
    let start = Instant::now();
    let mut answered = 0u64;
    loop {
        assert!(start.elapsed() < TIMEOUT, "labeling timed out");
        let status: SessionStatus =
            client.get(format!("{base}/sessions/{id}/status")).send().await.unwrap().json().await.unwrap();
        assert!(status.pending <= 1);
        if status.run != RunState::Running {
            break;
        }
        let resp = client.get(format!("{base}/sessions/{id}/next")).send().await.unwrap();
        if resp.status() == reqwest::StatusCode::NO_CONTENT {
            tokio::time::sleep(Duration::from_millis(1)).await;
            continue;
        }
        let q: PendingQuery = resp.json().await.unwrap();
        assert_eq!(q.left.kind, "grid");
        let side = robot_choice(&mdp, &q, &mut rng);
        let word = if side == Side::Left { "left" } else { "right" };
        let ack = client
            .post(format!("{base}/queries/{}/answer", q.query_id))
            .json(&json!({ "winner": word }))
            .send()
            .await
            .unwrap();
        assert_eq!(ack.status(), 200);
        let ack: AnswerAck = ack.json().await.unwrap();
        assert_eq!(ack.winner, side);
        answered += 1;

        let again = client
            .post(format!("{base}/queries/{}/answer", q.query_id))
            .json(&json!({ "winner": word }))
            .send()
            .await
            .unwrap();
        assert_eq!(again.status(), 409);
    }
    let RunState::Finished { policy_hash, comparisons, .. } = session.status().run else { panic!("run failed") };
    assert_eq!(policy_hash, reference.policy.digest());
    assert_eq!(comparisons, answered);
    let _ = stop.send(());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn errors_are_machine_readable() {
    let svc = PreferenceService::new();
    let (base, stop) = start_server(svc.clone()).await;
    let client = reqwest::Client::new();

    let resp = client.get(format!("{base}/sessions/zzz/next")).send().await.unwrap();
    assert_eq!(resp.status(), 404);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error"]["kind"], "unknown_session");

    let resp = client.post(format!("{base}/queries/q0/answer")).json(&json!({"winner": "left"})).send().await.unwrap();
    assert_eq!(resp.status(), 404);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error"]["kind"], "unknown_query");

    let resp = client.post(format!("{base}/queries/q0/answer")).json(&json!({"winner": "up"})).send().await.unwrap();
    assert_eq!(resp.status(), 400);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error"]["kind"], "bad_request");

    let mdp = std::sync::Arc::new(pbrl_core::mdp::make_counterexample());
    let s = svc.open_session(Some("idle".into()), mdp, Some(5), None, vec![]).unwrap();
    let resp = client.get(format!("{base}/sessions/{}/next", s.id())).send().await.unwrap();
    assert_eq!(resp.status(), 204);
    let status: Value =
        client.get(format!("{base}/sessions/{}/status", s.id())).send().await.unwrap().json().await.unwrap();
    assert_eq!(status["answered"], 0);
    assert_eq!(status["pending"], 0);
    assert_eq!(status["policy_progress"], 0.0);
    assert_eq!(status["run"]["state"], "running");
    let _ = stop.send(());
}
