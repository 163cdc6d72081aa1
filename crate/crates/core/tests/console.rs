use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use soundscape_core::console::{AnnotationPolicy, Console, TokenTable};
use soundscape_core::sim::{Resolved, Scenario};
use soundscape_core::time::Timestamp;

const TOKENS: &str = "# test ward\ntok-a nurse_a\ntok-b nurse_b\n";
const TICK_MS: i64 = 10_000;

fn scenario(consent: &[&str]) -> Resolved {
    let text = format!(
        "name = \"console_test\"\nstart = \"2026-01-14T08:00:00\"\nduration = \"24h\"\nseed = 3\nacceleration = 60.0\nconsent = {consent:?}\n"
    );
    Scenario::parse(&text).unwrap().resolve(None).unwrap()
}

fn start(dir: &Path, consent: &[&str]) -> Console {
    Console::start(scenario(consent), dir, TokenTable::parse(TOKENS).unwrap(), AnnotationPolicy::default()).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()));
    (status, v)
}

fn now(c: &Console) -> Timestamp {
    c.state.runtime.current().now.unwrap()
}

async fn wait_until(c: &Console, t: Timestamp) {
    for _ in 0..2000 {
        if now(c) >= t {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("simulation did not reach {t}");
}

fn ts(v: &Value) -> Timestamp {
    v.as_str().unwrap().parse().unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn auth_is_required_and_author_must_match_token() {
    let dir = tempfile::tempdir().unwrap();
    let c = start(dir.path(), &[]);
    let app = c.router();
    assert_eq!(call(&app, "GET", "/v1/zones", None, None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&app, "GET", "/v1/zones", Some("nope"), None).await.0, StatusCode::UNAUTHORIZED);
    let (s, v) = call(&app, "POST", "/v1/zones/patio/mute", Some("tok-a"), Some(json!({"author": "nurse_b"}))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(v["error"], "author_mismatch");
    let (s, v) = call(&app, "GET", "/v1/zones", Some("tok-a"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["zones"].as_array().unwrap().len(), 18);
    assert_eq!(call(&app, "GET", "/v1/zones/attic/levels?window=10", Some("tok-a"), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/v1/zones/patio/levels?window=0", Some("tok-a"), None).await.0, StatusCode::BAD_REQUEST);
    let (s, v) = call(&app, "GET", "/v1/zones/patio/levels?window=30", Some("tok-a"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["samples"].as_array().unwrap().len() <= 30);
}

#[tokio::test(flavor = "multi_thread")]
async fn mute_is_a_fade_stop_within_one_tick() {
    let dir = tempfile::tempdir().unwrap();
    let c = start(dir.path(), &[]);
    let app = c.router();
    let (s, v) = call(&app, "POST", "/v1/zones/north_room/mute", Some("tok-a"), None).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let at = ts(&v["override"]["timestamp"]);
    wait_until(&c, at + TICK_MS + 1000).await;
    let snap = c.state.runtime.current();
    assert!(snap.zone("north_room").unwrap().muted);
    let stops: Vec<Timestamp> = snap
        .recent_dispatch
        .iter()
        .filter(|l| l.contains(";p04;STOP;"))
        .map(|l| l.split(';').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(stops.iter().any(|&t| t >= at && t <= at + TICK_MS), "no STOP for p04 within a tick of {at}: {stops:?}");
}

#[tokio::test(flavor = "multi_thread")]
async fn every_accepted_mutation_is_one_logged_override() {
    let dir = tempfile::tempdir().unwrap();
    let c = start(dir.path(), &[]);
    let app = c.router();
    let accepted = [
        ("/v1/zones/patio/trim", Some(json!({"db": -3.0}))),
        ("/v1/zones/north_room/mute", None),
        ("/v1/zones/north_room/unmute", None),
        ("/v1/rooms/room_2/consent", Some(json!({"granted": true}))),
        ("/v1/sequences/south_living_a/trigger", Some(json!({"template": "inverted_j"}))),
        ("/v1/sequences/south_living_a/stop", None),
    ];
    for (uri, body) in accepted.iter().cloned() {
        let (s, v) = call(&app, "POST", uri, Some("tok-b"), body).await;
        assert_eq!(s, StatusCode::ACCEPTED, "{uri}: {v}");
    }
    // Rejected requests leave no trace.
    assert_eq!(call(&app, "POST", "/v1/zones/attic/mute", Some("tok-b"), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/v1/rooms/patio/consent", Some("tok-b"), Some(json!({"granted": true}))).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "POST", "/v1/zones/patio/trim", Some("tok-b"), Some(json!({"db": 40.0}))).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    wait_until(&c, now(&c) + 2 * TICK_MS).await;
    let trace = std::fs::read_to_string(dir.path().join("trace.log")).unwrap();
    let logged: Vec<&str> = trace.lines().filter(|l| l.starts_with("N;") && l.split(';').nth(3) == Some("override")).collect();
    assert_eq!(logged.len(), accepted.len(), "{logged:#?}");
    assert!(logged.iter().all(|l| l.contains("author=nurse_b")));
    let persisted = std::fs::read_to_string(dir.path().join("overrides.jsonl")).unwrap();
    assert_eq!(persisted.lines().count(), accepted.len());
}

#[tokio::test(flavor = "multi_thread")]
async fn consent_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let c = start(dir.path(), &["room_4"]);
        let app = c.router();
        assert_eq!(call(&app, "POST", "/v1/rooms/room_5/consent", Some("tok-a"), Some(json!({"granted": true}))).await.0, StatusCode::ACCEPTED);
        assert_eq!(call(&app, "POST", "/v1/rooms/room_4/consent", Some("tok-a"), Some(json!({"granted": false}))).await.0, StatusCode::ACCEPTED);
        assert_eq!(call(&app, "POST", "/v1/rooms/room_5/consent", Some("tok-a"), Some(json!({"granted": false}))).await.0, StatusCode::ACCEPTED);
        assert_eq!(call(&app, "POST", "/v1/rooms/room_5/consent", Some("tok-a"), Some(json!({"granted": true}))).await.0, StatusCode::ACCEPTED);
        c.task.abort();
    }
    let c = start(dir.path(), &["room_4"]);
    let app = c.router();
    let (_, state) = call(&app, "GET", "/v1/state", Some("tok-b"), None).await;
    let consent = |room: &str| state["zones"].as_array().unwrap().iter().find(|z| z["zone_id"] == room).unwrap()["consent"].clone();
    assert_eq!(consent("room_5"), json!(true));
    assert_eq!(consent("room_4"), json!(false));
    assert_eq!(consent("room_1"), json!(false));
    // The snapshot on startup compacts the log to one record per room.
    let log = std::fs::read_to_string(dir.path().join("consent.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn annotations_reject_names_and_export_in_time_order() {
    let dir = tempfile::tempdir().unwrap();
    let c = start(dir.path(), &[]);
    let app = c.router();
    let (s, v) = call(&app, "POST", "/v1/annotations", Some("tok-a"), Some(json!({"room": "patio", "resident_code": "R007", "text": "Madame Girard hummed along"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "forbidden_name");
    let (s, v) = call(&app, "POST", "/v1/annotations", Some("tok-a"), Some(json!({"room": "patio", "resident_code": "Jeanne", "tag": "calm"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "bad_resident_code");

    // Submitted out of order; the export sorts by time.
    let base = Timestamp::from_ymd_hms(2026, 1, 14, 9, 0, 0);
    for i in 0..1000i64 {
        let t = base + ((i * 7919) % 1000) * 1000;
        let body = json!({"timestamp": t.to_string(), "room": "patio", "resident_code": format!("R{:03}", i % 1000), "tag": "calm", "text": format!("note {i}")});
        let (s, v) = call(&app, "POST", "/v1/annotations", Some("tok-a"), Some(body)).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
    }
    let (s, v) = call(&app, "GET", "/v1/annotations/export", Some("tok-b"), None).await;
    assert_eq!(s, StatusCode::OK);
    let lines: Vec<Value> = v.as_str().unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1000);
    let times: Vec<Timestamp> = lines.iter().map(|a| ts(&a["timestamp"])).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
    assert!(lines.iter().all(|a| a["author"] == "nurse_a"));

    let (_, v) = call(&app, "GET", "/v1/annotations?room=patio&from=2026-01-14T09:00:00&to=2026-01-14T09:00:10", Some("tok-b"), None).await;
    assert_eq!(v["annotations"].as_array().unwrap().len(), 10);
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_levels_match_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let c = start(dir.path(), &[]);
    wait_until(&c, now(&c) + 60_000).await;
    let app = c.router();
    let req = Request::builder().uri("/v1/stream").header("authorization", "Bearer tok-a").body(Body::empty()).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let mut body = resp.into_body();
    let frame = body.frame().await.unwrap().unwrap().into_data().unwrap();
    let text = String::from_utf8(frame.to_vec()).unwrap();
    assert!(text.starts_with("event: levels\n"), "{text}");
    let data: Value = serde_json::from_str(text.lines().find_map(|l| l.strip_prefix("data: ")).unwrap()).unwrap();
    let at = ts(&data["now"]);

    let trace = std::fs::read_to_string(dir.path().join("trace.log")).unwrap();
    for z in data["zones"].as_array().unwrap() {
        let zone = z["zone"].as_str().unwrap();
        let last = trace
            .lines()
            .filter_map(|l| l.strip_prefix("V;"))
            .map(|l| l.split(';').collect::<Vec<_>>())
            .rfind(|f| f[1] == zone && f[0].parse::<Timestamp>().unwrap() <= at)
            .map(|f| f[2].parse::<f64>().unwrap())
            .unwrap_or(30.0);
        assert_eq!(z["level_dba"].as_f64().unwrap(), last, "{zone} at {at}");
    }
}
