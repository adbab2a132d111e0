use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vqdr::corpus::write_wav_pcm16;
use vqdr::synth::tone;
use vqdr::testbench::{
    aggregate, build_test_plan, parse_responses, save_plan, Choice, ConditionTriplet, Design, Lang, Pairing, Question,
    Stimulus, TestPlan,
};
use vqdr_service::{router, ServiceError, Store};

const TAGS: [&str; 3] = ["baseline", "proposed", "original_L2"];

fn stimuli(dir: &Path, n: usize) -> Vec<Stimulus> {
    let cond = ConditionTriplet { q: Lang::L2, s: Lang::L1, p: Lang::L2 };
    let mut out = Vec::new();
    for u in 0..n {
        for (k, tag) in TAGS.iter().enumerate() {
            let rel = PathBuf::from(format!("{tag}_{u}.wav"));
            let audio = tone(200.0 + 50.0 * k as f64, 0.05, 0.3, 16000).unwrap();
            write_wav_pcm16(dir.join(&rel), &audio).unwrap();
            out.push(Stimulus {
                stim_id: format!("{tag}_{u}"),
                path: rel,
                condition: cond,
                utt_id: format!("u{u:02}"),
                system_tag: tag.to_string(),
            });
        }
    }
    out
}

fn setup(design: Design) -> (tempfile::TempDir, TestPlan) {
    let dir = tempfile::tempdir().unwrap();
    let pairing = match design {
        Design::Ab => Pairing::ab("baseline", "proposed"),
        Design::Abx => Pairing::abx("baseline", "proposed", "original_L2", Question::VoiceSimilarity),
    };
    let plan = build_test_plan("exp1", stimuli(dir.path(), 20), design, vec![pairing], 16, 42).unwrap();
    save_plan(&plan, dir.path().join("exp1.plan")).unwrap();
    (dir, plan)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn app(dir: &Path) -> axum::Router {
    router(Arc::new(Store::open(dir, None).unwrap()), None)
}

#[tokio::test]
async fn full_session_round_trip() {
    let (dir, plan) = setup(Design::Abx);
    let app = app(dir.path());
    let (s, health) = call(&app, "GET", "/health", None).await;
    assert_eq!((s, health.as_slice()), (StatusCode::OK, b"ok".as_slice()));

    let (s, session) = call_json(&app, "POST", "/plans/exp1/sessions", Some(json!({"listener_id": "L01"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(session["cursor"], 0);
    let sid = session["session_id"].as_str().unwrap().to_string();

    let mut sent = Vec::new();
    for n in 0..16 {
        let (s, trial) = call_json(&app, "GET", &format!("/sessions/{sid}/trials/{n}"), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(trial["trial_index"], n);
        assert_eq!(trial["total"], 16);
        assert!(trial["question_text"].as_str().unwrap().contains("ignore noise or distortions"));
        let text = trial.to_string();
        for forbidden in TAGS.iter().copied().chain(["Q2S1P2", "system_tag", "condition", "u0", "u1"]) {
            assert!(!text.contains(forbidden), "payload leaks {forbidden}: {text}");
        }
        let token = trial["slot_a"].as_str().unwrap();
        let (s, wav) = call(&app, "GET", &format!("/stimuli/{token}"), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(&wav[..4], b"RIFF");
        let x = trial["reference_x"].as_str().unwrap();
        assert_eq!(call(&app, "GET", &format!("/stimuli/{x}"), None).await.0, StatusCode::OK);

        let choice = if n % 4 == 0 { "A" } else { "B" };
        let confidence = 1 + n % 7;
        let (s, ack) = call_json(
            &app,
            "POST",
            &format!("/sessions/{sid}/trials/{n}/response"),
            Some(json!({"choice": choice, "confidence": confidence})),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{ack}");
        assert_eq!(ack["cursor"], n + 1);
        sent.push((choice, confidence));
    }
    let (s, done) = call_json(&app, "GET", &format!("/sessions/{sid}/trials/16"), None).await;
    assert_eq!((s, done["error"].as_str()), (StatusCode::GONE, Some("PlanComplete")));

    let log = std::fs::read_to_string(dir.path().join("exp1.responses.jsonl")).unwrap();
    let responses = parse_responses(&log).unwrap();
    assert_eq!(responses.len(), 16);
    for (r, (choice, conf)) in responses.iter().zip(&sent) {
        assert_eq!(r.choice, if *choice == "A" { Choice::A } else { Choice::B });
        assert_eq!(r.confidence as usize, *conf);
    }

    let (s, csv) = call(&app, "GET", "/plans/exp1/results.csv", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(String::from_utf8(csv).unwrap(), aggregate(&responses, &plan).unwrap().to_csv());
    let (_, dump) = call(&app, "GET", "/plans/exp1/responses.jsonl", None).await;
    assert_eq!(parse_responses(&String::from_utf8(dump).unwrap()).unwrap(), responses);
}

#[tokio::test]
async fn ordering_and_validation_errors() {
    let (dir, _) = setup(Design::Ab);
    let app = app(dir.path());
    let (s, e) = call_json(&app, "POST", "/plans/nope/sessions", Some(json!({"listener_id": "x"}))).await;
    assert_eq!((s, e["error"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownPlan")));
    let (s, _) = call_json(&app, "GET", "/sessions/nope/trials/0", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, a) = call_json(&app, "POST", "/plans/exp1/sessions", Some(json!({"listener_id": "same"}))).await;
    let (_, b) = call_json(&app, "POST", "/plans/exp1/sessions", Some(json!({"listener_id": "same"}))).await;
    assert_ne!(a["session_id"], b["session_id"]);
    let sid = a["session_id"].as_str().unwrap();

    let (s, e) = call_json(&app, "GET", &format!("/sessions/{sid}/trials/5"), None).await;
    assert_eq!((s, e["error"].as_str()), (StatusCode::CONFLICT, Some("OutOfOrder")));
    let (s, e) = call_json(&app, "GET", &format!("/sessions/{sid}/trials/99"), None).await;
    assert_eq!((s, e["error"].as_str()), (StatusCode::GONE, Some("PlanComplete")));

    let uri = format!("/sessions/{sid}/trials/0/response");
    let (s, e) = call_json(&app, "POST", &uri, Some(json!({"choice": "A", "confidence": 0}))).await;
    assert_eq!((s, e["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("BadConfidence")));
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"choice": "C", "confidence": 3}))).await;
    assert!(s.is_client_error());

    let (s, ack) = call_json(&app, "POST", &uri, Some(json!({"choice": "A", "confidence": 6}))).await;
    assert_eq!((s, ack["cursor"].as_u64(), ack["duplicate"].as_bool()), (StatusCode::OK, Some(1), Some(false)));
    let (s, ack) = call_json(&app, "POST", &uri, Some(json!({"choice": "A", "confidence": 6}))).await;
    assert_eq!((s, ack["duplicate"].as_bool()), (StatusCode::OK, Some(true)));
    let (s, e) = call_json(&app, "POST", &uri, Some(json!({"choice": "B", "confidence": 6}))).await;
    assert_eq!((s, e["error"].as_str()), (StatusCode::CONFLICT, Some("DuplicateResponse")));
    let (s, e) = call_json(&app, "POST", &format!("/sessions/{sid}/trials/3/response"), Some(json!({"choice": "B", "confidence": 2}))).await;
    assert_eq!((s, e["error"].as_str()), (StatusCode::CONFLICT, Some("OutOfOrder")));

    let log = std::fs::read_to_string(dir.path().join("exp1.responses.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert_eq!(call(&app, "GET", "/stimuli/deadbeef", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn empty_results_have_zero_rows() {
    let (dir, _) = setup(Design::Ab);
    let app = app(dir.path());
    let (s, csv) = call(&app, "GET", "/plans/exp1/results.csv", None).await;
    assert_eq!(s, StatusCode::OK);
    let csv = String::from_utf8(csv).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "plan_id,pairing,system,n,chosen,choice_pct,mean_confidence,mean_vss");
    assert_eq!(rows.len(), 3);
    assert!(rows[1..].iter().all(|r| r.split(',').nth(3) == Some("0")));
    assert_eq!(call(&app, "GET", "/plans/none/results.csv", None).await.0, StatusCode::NOT_FOUND);
}

#[test]
fn restart_recovers_sessions_and_cursor() {
    let (dir, plan) = setup(Design::Ab);
    let sid = {
        let store = Store::open(dir.path(), None).unwrap();
        let s = store.create_session("exp1", "L7").unwrap();
        for n in 0..5 {
            store.get_trial(&s.session_id, n).unwrap();
            store.submit_response(&s.session_id, n, Choice::B, 4).unwrap();
        }
        s.session_id
    };
    // a crash mid-append leaves a torn last line
    let log_path = dir.path().join("exp1.responses.jsonl");
    let mut log = std::fs::read_to_string(&log_path).unwrap();
    log.push_str("{\"session_id\":\"");
    std::fs::write(&log_path, log).unwrap();

    let store = Store::open(dir.path(), None).unwrap();
    let s = store.session(&sid).unwrap();
    assert_eq!((s.cursor, s.listener_id.as_str()), (5, "L7"));
    assert!(matches!(store.get_trial(&sid, 4), Err(ServiceError::OutOfOrder { expected: 5, got: 4 })));
    store.get_trial(&sid, 5).unwrap();
    store.submit_response(&sid, 5, Choice::A, 7).unwrap();
    let responses = parse_responses(&std::fs::read_to_string(&log_path).unwrap()).unwrap();
    assert_eq!(responses.len(), 6);
    assert_eq!(aggregate(&responses, &plan).unwrap().pairings[0].n, 6);
}

#[test]
fn concurrent_sessions_serialize_per_plan() {
    let (dir, _) = setup(Design::Ab);
    let store = Arc::new(Store::open(dir.path(), None).unwrap());
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let store = store.clone();
            std::thread::spawn(move || {
                let s = store.create_session("exp1", &format!("L{i}")).unwrap();
                for n in 0..16 {
                    store.submit_response(&s.session_id, n, if (n + i) % 2 == 0 { Choice::A } else { Choice::B }, 3).unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let log = std::fs::read_to_string(dir.path().join("exp1.responses.jsonl")).unwrap();
    assert_eq!(parse_responses(&log).unwrap().len(), 128);
    assert_eq!(store.responses_jsonl("exp1").unwrap(), log);
}

#[tokio::test]
async fn static_assets_are_served() {
    let (dir, _) = setup(Design::Ab);
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = router(Arc::new(Store::open(dir.path(), None).unwrap()), Some(web.path().to_path_buf()));
    let (s, body) = call(&app, "GET", "/index.html", None).await;
    assert_eq!((s, body.as_slice()), (StatusCode::OK, b"<html>ui</html>".as_slice()));
    assert_eq!(call(&app, "GET", "/health", None).await.0, StatusCode::OK);
}
