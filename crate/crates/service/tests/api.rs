use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anonproxy_core::model::make_placeholder;
use anonproxy_core::proxy::{DetachedExecutor, DeviceExecutor, SimulatedDevice};
use anonproxy_core::NerAdapter;
use anonproxy_eval::runner::linear_device;
use anonproxy_eval::Scenario;
use anonproxy_service::{router, AppState, DeviceFactory};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use parking_lot::Mutex;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture(name: &str) -> Scenario {
    let path = format!("{}/../../fixtures/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    Scenario::load(Path::new(&path)).unwrap()
}

fn scenario_state(s: &Scenario) -> AppState {
    let script = s.device.clone().unwrap_or_else(|| linear_device(&s.screens));
    let factory: DeviceFactory =
        Arc::new(move || Box::new(SimulatedDevice::new(script.clone()).unwrap()) as Box<dyn DeviceExecutor>);
    AppState::new(Arc::new(s.detector.adapter()) as Arc<dyn NerAdapter>, factory)
}

fn detached() -> Router {
    let factory: DeviceFactory = Arc::new(|| Box::new(DetachedExecutor) as Box<dyn DeviceExecutor>);
    router(Arc::new(AppState::new(Arc::new(anonproxy_core::detect::NullAdapter), factory)))
}

struct Reply {
    status: StatusCode,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|_| panic!("not json: {}", String::from_utf8_lossy(&self.bytes)))
    }
    fn body(&self) -> Value {
        assert_eq!(self.status.as_u16() / 100, 2, "{}", String::from_utf8_lossy(&self.bytes));
        let v = self.json();
        assert_eq!(v["status"], "ok");
        v["body"].clone()
    }
    fn code(&self) -> String {
        let v = self.json();
        assert_eq!(v["status"], "error", "{v}");
        v["error_code"].as_str().unwrap().to_string()
    }
}

async fn call(app: &Router, method: Method, path: &str, body: Option<Value>) -> Reply {
    let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
    let res = app
        .clone()
        .oneshot(Request::builder().method(method).uri(path).header("content-type", "application/json").body(body).unwrap())
        .await
        .unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, bytes }
}

async fn post(app: &Router, path: &str, body: Value) -> Reply {
    call(app, Method::POST, path, Some(body)).await
}

async fn session(app: &Router, config: Value) -> String {
    let r = post(app, "/v1/sessions", config).await;
    assert_eq!(r.status, StatusCode::CREATED);
    r.body()["session_id"].as_str().unwrap().to_string()
}

fn expand(s: &Scenario, text: &str) -> String {
    let mut out = text.to_string();
    for (i, p) in s.planted.iter().enumerate() {
        out = out.replace(&format!("{{{{e{i}}}}}"), &make_placeholder(&p.value, &p.etype).to_string());
    }
    out
}

/// Drives a scenario over HTTP and returns every response in order.
async fn drive(s: &Scenario, config: Value) -> (String, Vec<Reply>) {
    let app = router(Arc::new(scenario_state(s)));
    let id = session(&app, config).await;
    let base = format!("/v1/sessions/{id}");
    let mut replies = vec![post(&app, &format!("{base}/instruction"), json!({ "instruction": s.instruction })).await];
    replies.push(post(&app, &format!("{base}/virtual-ui"), json!({ "from_device": true })).await);
    for cmd in &s.script {
        let r = post(&app, &format!("{base}/action"), json!({ "command": expand(s, cmd) })).await;
        let token = r.body().get("capture_token").and_then(Value::as_str).map(str::to_string);
        replies.push(r);
        match token {
            Some(t) => replies.push(post(&app, &format!("{base}/virtual-ui"), json!({ "capture_token": t })).await),
            None => break,
        }
    }
    replies.push(call(&app, Method::GET, &format!("{base}/stats"), None).await);
    (id, replies)
}

#[tokio::test]
async fn session_lifecycle() {
    let app = detached();
    let id = session(&app, json!({})).await;
    let r = call(&app, Method::GET, &format!("/v1/sessions/{id}/stats"), None).await;
    assert_eq!(r.body()["placeholders_created"], 0);
    let r = call(&app, Method::DELETE, &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = call(&app, Method::DELETE, &format!("/v1/sessions/{id}"), None).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::NOT_FOUND, "unknown-session"));

    let r = call(&app, Method::POST, "/v1/sessions", None).await;
    assert_eq!(r.status, StatusCode::CREATED);
    for bad in [json!({ "labels": [] }), json!({ "fuzzy_threshold": 2.0 }), json!([1])] {
        let r = post(&app, "/v1/sessions", bad.clone()).await;
        assert_eq!((r.status, r.code().as_str()), (StatusCode::BAD_REQUEST, "invalid-config"), "{bad}");
    }
}

#[tokio::test]
async fn unknown_session_everywhere() {
    let app = detached();
    for (m, p) in [
        (Method::POST, "instruction"),
        (Method::POST, "virtual-ui"),
        (Method::POST, "action"),
        (Method::POST, "compute"),
        (Method::GET, "stats"),
    ] {
        let r = call(&app, m, &format!("/v1/sessions/nope/{p}"), Some(json!({}))).await;
        assert_eq!((r.status, r.code().as_str()), (StatusCode::NOT_FOUND, "unknown-session"), "{p}");
    }
}

#[tokio::test]
async fn contacts_task_over_http_keeps_raw_values_on_the_trusted_side() {
    let s = fixture("contacts_form");
    let (_, replies) = drive(&s, json!({})).await;
    let masked = replies[0].body()["masked_instruction"].as_str().unwrap().to_string();
    assert_eq!(
        masked,
        "Add a contacts whose name is LAST_NAME#4v71x, set the working phone number to be PHONE_NUMBER#1lryd and mobile phone number to be PHONE_NUMBER#2f28e"
    );
    let finish = replies.iter().rev().find(|r| r.json()["body"].get("user_visible_answer").is_some()).unwrap();
    assert_eq!(finish.body()["user_visible_answer"], "Saved contact Xu");
    for r in &replies {
        let mut v = r.json();
        if let Some(b) = v["body"].as_object_mut() {
            b.remove("user_visible_answer");
        }
        let text = v.to_string();
        for p in &s.planted {
            assert!(!text.contains(&p.value), "{} in {text}", p.value);
        }
    }
    let stats = replies.last().unwrap().body();
    assert_eq!(stats["placeholders_created"], 3);
}

#[tokio::test]
async fn replay_is_deterministic_modulo_session_id() {
    for name in ["contacts_form", "message_consistent"] {
        let s = fixture(name);
        let run = || async {
            let (id, replies) = drive(&s, json!({})).await;
            replies.iter().map(|r| String::from_utf8_lossy(&r.bytes).replace(&id, "<id>")).collect::<Vec<_>>()
        };
        assert_eq!(run().await, run().await, "{name}");
    }
}

#[tokio::test]
async fn leak_is_a_bare_500() {
    let s = fixture("planted_leak");
    let app = router(Arc::new(scenario_state(&s)));
    let mut cfg = s.config.clone().unwrap();
    cfg.final_scan = true;
    let id = session(&app, serde_json::to_value(&cfg).unwrap()).await;
    post(&app, &format!("/v1/sessions/{id}/instruction"), json!({ "instruction": s.instruction })).await.body();
    let r = post(&app, &format!("/v1/sessions/{id}/virtual-ui"), json!({ "from_device": true })).await;
    assert_eq!(r.status, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(r.bytes.is_empty());
    // nothing was committed for the rejected screen
    let stats = call(&app, Method::GET, &format!("/v1/sessions/{id}/stats"), None).await.body();
    assert_eq!(stats["virtual_uis"], 0);
}

#[tokio::test]
async fn action_rejections() {
    let s = fixture("message_consistent");
    let app = router(Arc::new(scenario_state(&s)));
    let id = session(&app, json!({})).await;
    let apath = format!("/v1/sessions/{id}/action");
    let action = |c: &str| post(&app, &apath, json!({ "command": c }));
    let r = action("tap(0)").await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::CONFLICT, "empty-element-list"));
    post(&app, &format!("/v1/sessions/{id}/instruction"), json!({ "instruction": s.instruction })).await.body();
    post(&app, &format!("/v1/sessions/{id}/virtual-ui"), json!({ "from_device": true })).await.body();
    for (cmd, status, code) in [
        ("tap(", 400, "parse-error"),
        ("jump(1)", 400, "unknown-command"),
        ("tap(1, 2)", 400, "arity-error"),
        ("tap(99)", 409, "index-out-of-range"),
        ("type(\"FIRST_NAME#zzzzz\")", 422, "unknown-placeholder"),
    ] {
        let r = action(cmd).await;
        assert_eq!((r.status.as_u16(), r.code().as_str()), (status, code), "{cmd}");
    }
    let r = post(&app, &format!("/v1/sessions/{id}/action"), json!({ "cmd": "tap(0)" })).await;
    assert_eq!(r.code(), "malformed-request");
    let r = action("tap(0)").await.body();
    assert_eq!(r["outcome"], "ok");
    assert!(r["capture_token"].is_string());
}

#[tokio::test]
async fn detached_device_fails_upstream() {
    let app = detached();
    let id = session(&app, json!({})).await;
    let xml = r#"<hierarchy><node text="Send" class="android.widget.Button" clickable="true" bounds="[0,0][100,100]" /></hierarchy>"#;
    post(&app, &format!("/v1/sessions/{id}/virtual-ui"), json!({ "xml": xml })).await.body();
    let r = post(&app, &format!("/v1/sessions/{id}/action"), json!({ "command": "tap(0)" })).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::BAD_GATEWAY, "executor-failure"));
    let r = post(&app, &format!("/v1/sessions/{id}/virtual-ui"), json!({ "from_device": true })).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::BAD_GATEWAY, "executor-failure"));
}

#[tokio::test]
async fn virtual_ui_sources() {
    let s = fixture("message_consistent");
    let app = router(Arc::new(scenario_state(&s)));
    let id = session(&app, json!({})).await;
    let path = format!("/v1/sessions/{id}/virtual-ui");
    for bad in [json!({}), json!({ "xml": "<hierarchy/>", "from_device": true }), json!({ "xml": 3 })] {
        let r = post(&app, &path, bad.clone()).await;
        assert_eq!((r.status, r.code().as_str()), (StatusCode::BAD_REQUEST, "malformed-request"), "{bad}");
    }
    let r = post(&app, &path, json!({ "xml": "<hierarchy><node" })).await;
    assert_eq!((r.status.as_u16(), r.code().as_str()), (422, "xml-parse-error"));
    let r = post(&app, &path, json!({ "xml": "<hierarchy><node text=\"a\" clickable=\"true\" bounds=\"[0,0]\" /></hierarchy>" })).await;
    assert_eq!((r.status.as_u16(), r.code().as_str()), (422, "bounds-parse-error"));
    let r = post(&app, &path, json!({ "capture_token": "cap-999999" })).await;
    assert_eq!((r.status.as_u16(), r.code().as_str()), (422, "unknown-capture-token"));

    post(&app, &path, json!({ "from_device": true })).await.body();
    let token = post(&app, &format!("/v1/sessions/{id}/action"), json!({ "command": "tap(0)" })).await.body()["capture_token"]
        .as_str()
        .unwrap()
        .to_string();
    post(&app, &path, json!({ "capture_token": token })).await.body();
    let r = post(&app, &path, json!({ "capture_token": token })).await;
    assert_eq!(r.code(), "unknown-capture-token");
}

fn png(w: u32, h: u32) -> Vec<u8> {
    let img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

#[tokio::test]
async fn screenshot_is_masked() {
    let app = detached();
    let id = session(&app, json!({ "screen": { "width": 200, "height": 100 } })).await;
    let path = format!("/v1/sessions/{id}/virtual-ui");
    let xml = r#"<hierarchy><node text="call 13912345670" class="android.widget.TextView" bounds="[0,0][200,50]" /></hierarchy>"#;
    let b64 = base64::engine::general_purpose::STANDARD.encode(png(200, 100));
    let ocr = json!([{ "text": "13912345670", "bbox": [40, 10, 160, 40] }]);
    let body = post(&app, &path, json!({ "xml": xml, "ocr_tokens": ocr, "screenshot_png_base64": b64 })).await.body();
    assert_eq!(body["mask_plan"].as_array().unwrap().len(), 1);
    assert!(!body.to_string().contains("13912345670"));
    let masked = base64::engine::general_purpose::STANDARD.decode(body["masked_png_base64"].as_str().unwrap()).unwrap();
    let img = image::load_from_memory(&masked).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (200, 100));
    assert_ne!(img.get_pixel(41, 11), &image::Rgb([255, 255, 255]));
    assert_eq!(img.get_pixel(5, 80), &image::Rgb([255, 255, 255]));

    let r = post(&app, &path, json!({ "xml": xml, "screenshot_png_base64": "not base64!" })).await;
    assert_eq!(r.code(), "malformed-request");
    let junk = base64::engine::general_purpose::STANDARD.encode(b"not a png");
    let r = post(&app, &path, json!({ "xml": xml, "screenshot_png_base64": junk })).await;
    assert_eq!((r.status.as_u16(), r.code().as_str()), (422, "image-error"));
}

#[tokio::test]
async fn oversized_xml_is_rejected() {
    let app = detached();
    let id = session(&app, json!({})).await;
    let xml = format!("<hierarchy>{}</hierarchy>", " ".repeat(anonproxy_service::MAX_XML_BYTES));
    let r = post(&app, &format!("/v1/sessions/{id}/virtual-ui"), json!({ "xml": xml })).await;
    assert_eq!((r.status.as_u16(), r.code().as_str()), (413, "payload-too-large"));
}

#[tokio::test]
async fn compute_round_trip() {
    let app = detached();
    let id = session(&app, json!({})).await;
    let m = post(&app, &format!("/v1/sessions/{id}/instruction"), json!({ "instruction": "Pay $1200.50 unless it exceeds $950.00" }))
        .await
        .body()["masked_instruction"]
        .as_str()
        .unwrap()
        .to_string();
    let tokens: Vec<String> = anonproxy_core::model::scan_placeholders(&m).iter().map(|p| p.text.to_string()).collect();
    assert_eq!(tokens.len(), 2);
    let path = format!("/v1/sessions/{id}/compute");
    let req = |instruction: &str| json!({ "tokens": tokens, "instruction": instruction, "reason": "task" });
    let r = post(&app, &path, req("Is the first amount larger than the second?")).await.body();
    assert_eq!(r, json!({ "allowed": true, "kind": r["kind"], "result": "greater_than" }));
    let r = post(&app, &path, req("What are the raw values?")).await.body();
    assert_eq!(r["allowed"], false);
    assert_eq!(r["failed_criterion"], "MINIMIZATION");
    let r = post(&app, &path, json!({ "tokens": [], "instruction": "x" })).await;
    assert_eq!((r.status.as_u16(), r.code().as_str()), (400, "malformed-request"));
    let r = post(&app, &path, json!({ "tokens": ["AMOUNT#zzzzz"], "instruction": "Is it larger?" })).await;
    assert_eq!(r.status.as_u16() / 100, 2);
    let mut last = None;
    for _ in 0..40 {
        let r = post(&app, &path, req("Is the first amount larger than the second?")).await;
        if r.status != StatusCode::OK {
            last = Some(r);
            break;
        }
    }
    let r = last.expect("budget never ran out");
    assert_eq!((r.status.as_u16(), r.code().as_str()), (429, "budget-exhausted"));
}

#[tokio::test]
async fn openapi_lists_every_route() {
    let r = call(&detached(), Method::GET, "/v1/openapi.json", None).await;
    let doc = r.json();
    let paths = doc["paths"].as_object().unwrap();
    for p in [
        "/v1/sessions",
        "/v1/sessions/{id}",
        "/v1/sessions/{id}/stats",
        "/v1/sessions/{id}/instruction",
        "/v1/sessions/{id}/virtual-ui",
        "/v1/sessions/{id}/action",
        "/v1/sessions/{id}/compute",
        "/v1/openapi.json",
    ] {
        assert!(paths.contains_key(p), "{p}");
    }
}

#[derive(Clone, Default)]
struct Sink(Arc<Mutex<Vec<u8>>>);

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[tokio::test]
async fn request_log_has_no_bodies() {
    let s = fixture("contacts_form");
    let sink = Sink::default();
    let app = router(Arc::new(scenario_state(&s).with_log(Box::new(sink.clone()))));
    let id = session(&app, json!({})).await;
    post(&app, &format!("/v1/sessions/{id}/instruction"), json!({ "instruction": s.instruction })).await.body();
    post(&app, &format!("/v1/sessions/{id}/action"), json!({ "command": "tap(0)" })).await;
    let text = String::from_utf8(sink.0.lock().clone()).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1]["route"], "/v1/sessions/{id}/instruction");
    assert_eq!(lines[1]["session"], id.as_str());
    assert_eq!(lines[2]["status"], 409);
    assert_eq!(lines[2]["error_code"], "empty-element-list");
    for p in &s.planted {
        assert!(!text.contains(&p.value));
    }
}

#[tokio::test]
async fn serves_on_loopback() {
    let (tx, rx) = tokio::sync::oneshot::channel();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let factory: DeviceFactory = Arc::new(|| Box::new(DetachedExecutor) as Box<dyn DeviceExecutor>);
    let state = Arc::new(AppState::new(Arc::new(anonproxy_core::detect::NullAdapter), factory));
    let server = tokio::spawn(anonproxy_service::serve(
        "127.0.0.1:0".parse().unwrap(),
        state,
        move |addr| tx.send(addr).unwrap(),
        async move {
            let _ = stop_rx.await;
        },
    ));
    let addr = rx.await.unwrap();
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    stream.write_all(b"GET /v1/openapi.json HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut buf = String::new();
    stream.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 200"));
    stop_tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}
