use std::io::Write;

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::extract::{MatchedPath, Request, State};
use axum::middleware::Next;
use axum::response::Response;
use serde_json::json;

use crate::error::LoggedCode;
use crate::LogSink;

/// One JSON line per request. Bodies are never logged.
pub(crate) async fn request_log(State(sink): State<LogSink>, req: Request, next: Next) -> Response {
    let start = Instant::now();
    let method = req.method().to_string();
    let route = req.extensions().get::<MatchedPath>().map_or_else(|| req.uri().path().to_string(), |m| m.as_str().to_string());
    let session = session_id(req.uri().path());
    let res = next.run(req).await;
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
    let line = json!({
        "ts": ts,
        "method": method,
        "route": route,
        "session": session,
        "status": res.status().as_u16(),
        "error_code": res.extensions().get::<LoggedCode>().map(|c| c.0),
        "latency_ms": start.elapsed().as_secs_f64() * 1000.0,
    });
    let mut w = sink.lock();
    let _ = writeln!(w, "{line}");
    let _ = w.flush();
    res
}

fn session_id(path: &str) -> Option<String> {
    let rest = path.strip_prefix("/v1/sessions/")?;
    let id = rest.split('/').next()?;
    (!id.is_empty()).then(|| id.to_string())
}
