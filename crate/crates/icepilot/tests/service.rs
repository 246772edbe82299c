mod common;

use std::sync::Arc;

use common::{http, Client, Server};
use icepilot::protocol::{GuidanceBody, MessageType, StateUpdateBody};
use icepilot::service::ServiceState;
use icepilot::Config;
use icepilot_core::estimator::OracleEstimator;
use icepilot_core::fan::FanParams;
use icepilot_core::guidance::SessionStatus;
use icepilot_core::phantom::template_scene;
use serde_json::{json, Value};

fn state() -> Arc<ServiceState> {
    let cfg = Config {
        fan: FanParams {
            width: 48,
            height: 48,
            ..FanParams::default()
        },
        ..Config::default()
    };
    ServiceState::new(cfg, template_scene(), Arc::new(OracleEstimator::exact()))
}

fn update(v: &Value) -> StateUpdateBody {
    serde_json::from_value(v.clone()).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_and_scene() {
    let server = Server::start(state()).await;
    let (status, body) = http(server.addr, "GET", "/healthz", "").await;
    assert_eq!(status, 200);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["estimator"], "oracle");
    assert_eq!(body["version"], env!("CARGO_PKG_VERSION"));
    assert!(body["git"].is_string());
    let (status, scene) = http(server.addr, "GET", "/scene", "").await;
    assert_eq!(status, 200);
    assert_eq!(
        scene["meshes"].as_array().unwrap().len(),
        template_scene().meshes.len()
    );
    let (status, _) = http(server.addr, "GET", "/ws/0123", "").await;
    assert_eq!(status, 404);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn zero_delta_returns_identical_slice() {
    let server = Server::start(state()).await;
    let (mut c, _) = Client::open(server.addr, "").await;
    let hello = c.command(MessageType::Hello, Value::Null).await;
    let before = update(&hello[0].body);
    let after = c
        .command(
            MessageType::ApplyDelta,
            json!({ "delta": [0.0, 0.0, 0.0, 0.0] }),
        )
        .await;
    assert_eq!(after[0].kind, MessageType::StateUpdate);
    let after = update(&after[0].body);
    assert_eq!(after.joints, before.joints);
    assert_eq!(after.slice, before.slice);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_do_not_share_state() {
    let server = Server::start(state()).await;
    let (mut a, _) = Client::open(server.addr, "").await;
    let (mut b, _) = Client::open(server.addr, r#"{"start": [0.1, 0.0, 0.2, 55.0]}"#).await;
    assert_ne!(a.token, b.token);

    let ga = a
        .command(MessageType::SetGoal, json!({ "goal": "LAA" }))
        .await;
    let gb = b
        .command(MessageType::SetGoal, json!({ "goal": "RV" }))
        .await;
    assert_eq!(ga[0].seq, Some(1));
    assert_eq!(gb[0].seq, Some(1));
    let ga: GuidanceBody = serde_json::from_value(ga[0].body.clone()).unwrap();
    let _: GuidanceBody = serde_json::from_value(gb[0].body.clone()).unwrap();

    let moved = a
        .command(MessageType::ApplyDelta, json!({ "delta": ga.delta }))
        .await;
    assert_eq!(moved[0].seq, Some(2));
    assert_eq!(moved[0].token, a.token);
    let sa = update(&moved[0].body);

    let hb = b.command(MessageType::Hello, Value::Null).await;
    assert_eq!(hb[0].seq, Some(2));
    let sb = update(&hb[0].body);
    assert_eq!(sb.joints.to_array(), [0.1, 0.0, 0.2, 55.0]);
    assert_eq!(sb.goal.map(|g| g.name()), Some("RV"));
    assert_eq!(sa.goal.map(|g| g.name()), Some("LAA"));
    assert_ne!(sa.slice, sb.slice);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_messages_get_errors() {
    let server = Server::start(state()).await;
    let (mut c, _) = Client::open(server.addr, "").await;

    let r = c.command(MessageType::SetGoal, json!({ "goal": 42 })).await;
    assert_eq!(r[0].kind, MessageType::Error);
    assert_eq!(r[0].body["code"], "bad_request");
    let r = c
        .command(MessageType::SetGoal, json!({ "goal": "nowhere" }))
        .await;
    assert_eq!(r[0].kind, MessageType::Error);

    c.send_raw("{not json".into()).await;
    let e = c.recv().await;
    assert_eq!(e.kind, MessageType::Error);

    c.send_raw(json!({"type": "hello", "token": "someone-else", "corr": "x"}).to_string())
        .await;
    let e = c.recv().await;
    assert_eq!(e.body["code"], "bad_token");
    assert_eq!(e.corr.as_deref(), Some("x"));

    let r = c.command(MessageType::RequestGuidance, Value::Null).await;
    assert_eq!(r[0].body["code"], "invalid_status");

    // the session is still usable
    let r = c
        .command(MessageType::SetGoal, json!({ "goal": "LPV" }))
        .await;
    assert_eq!(r[0].kind, MessageType::Guidance);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn guidance_over_the_wire_reaches_a_goal_and_ends() {
    let st = state();
    let server = Server::start(st.clone()).await;
    let (mut c, created) = Client::open(server.addr, r#"{"mode": "interactive"}"#).await;
    assert_eq!(created["session_id"].as_str().unwrap().len(), 16);
    let r = c
        .command(MessageType::SetGoal, json!({ "goal": "ESO" }))
        .await;
    let mut g: GuidanceBody = serde_json::from_value(r[0].body.clone()).unwrap();
    let mut reached = false;
    for _ in 0..20 {
        let r = c
            .command(MessageType::ApplyDelta, json!({ "delta": g.delta }))
            .await;
        let s = update(&r[0].body);
        if s.status == SessionStatus::Reached {
            reached = true;
            break;
        }
        g = serde_json::from_value(r[1].body.clone()).unwrap();
    }
    assert!(reached);
    let r = c.command(MessageType::SessionEnd, Value::Null).await;
    assert_eq!(r[0].kind, MessageType::SessionEnd);
    assert_eq!(st.session_count(), 0);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn limit_violation_suggests_delta() {
    let server = Server::start(state()).await;
    let (mut c, _) = Client::open(server.addr, r#"{"start": [0.0, 0.0, 0.0, 118.0]}"#).await;
    let r = c
        .command(
            MessageType::ApplyDelta,
            json!({ "delta": [0.0, 0.0, 0.0, 4.0] }),
        )
        .await;
    assert_eq!(r[0].kind, MessageType::Error);
    assert_eq!(r[0].body["code"], "joint_limit");
    let suggested = r[0].body["suggested_delta"].as_array().unwrap();
    assert!((suggested[3].as_f64().unwrap() - 2.0).abs() < 1e-9);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reconnect_resumes_the_session() {
    let server = Server::start(state()).await;
    let (mut c, _) = Client::open(server.addr, "").await;
    c.command(MessageType::SetGoal, json!({ "goal": "RV" }))
        .await;
    let moved = c
        .command(
            MessageType::ApplyDelta,
            json!({ "delta": [0.05, 0.0, 0.0, 1.0] }),
        )
        .await;
    let moved = update(&moved[0].body);
    let token = c.token.clone();
    drop(c);

    let mut again = Client::connect(server.addr, &token).await;
    let hello = again.command(MessageType::Hello, Value::Null).await;
    let resumed = update(&hello[0].body);
    assert_eq!(resumed.joints, moved.joints);
    assert_eq!(resumed.step_index, moved.step_index);
    assert_eq!(resumed.goal, moved.goal);
    assert!(hello[0].seq > Some(1));
    server.stop().await;
}
