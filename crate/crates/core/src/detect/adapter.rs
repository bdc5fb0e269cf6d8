//! Boundary to the external label-guided NER model.
//!
//! Wire format is one JSON object per line in each direction:
//! request `{"text": "...", "labels": [...], "threshold": 0.5}`,
//! response `{"spans": [{"start": 5, "end": 10, "label": "FIRST_NAME", "score": 0.91}]}`.
//! Offsets are character (not byte) offsets, end exclusive.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::EntityType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerRequest {
    pub text: String,
    pub labels: Vec<EntityType>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NerResponse {
    pub spans: Vec<NerSpan>,
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("NER adapter unavailable: {0}")]
    Unavailable(String),
    #[error("NER adapter protocol violation: {0}")]
    Protocol(String),
}

pub trait NerAdapter: Send + Sync {
    fn recognize(&self, request: &NerRequest) -> Result<NerResponse, AdapterError>;
}

impl<T: NerAdapter + ?Sized> NerAdapter for &T {
    fn recognize(&self, request: &NerRequest) -> Result<NerResponse, AdapterError> {
        (**self).recognize(request)
    }
}

impl<T: NerAdapter + ?Sized> NerAdapter for Box<T> {
    fn recognize(&self, request: &NerRequest) -> Result<NerResponse, AdapterError> {
        (**self).recognize(request)
    }
}

impl<T: NerAdapter + ?Sized> NerAdapter for std::sync::Arc<T> {
    fn recognize(&self, request: &NerRequest) -> Result<NerResponse, AdapterError> {
        (**self).recognize(request)
    }
}

/// Adapter that never finds anything (regex-only operation).
#[derive(Debug, Clone, Copy, Default)]
pub struct NullAdapter;

impl NerAdapter for NullAdapter {
    fn recognize(&self, _request: &NerRequest) -> Result<NerResponse, AdapterError> {
        Ok(NerResponse::default())
    }
}

/// Adapter that always fails, for exercising fail-closed paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnavailableAdapter;

impl NerAdapter for UnavailableAdapter {
    fn recognize(&self, _request: &NerRequest) -> Result<NerResponse, AdapterError> {
        Err(AdapterError::Unavailable("adapter detached".into()))
    }
}

/// Replays canned responses keyed by exact request text; unknown text yields
/// no spans.
#[derive(Debug, Clone, Default)]
pub struct FixtureAdapter {
    responses: HashMap<String, NerResponse>,
}

impl FixtureAdapter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, text: impl Into<String>, spans: Vec<NerSpan>) -> Self {
        self.responses.insert(text.into(), NerResponse { spans });
        self
    }

    pub fn insert(&mut self, text: impl Into<String>, spans: Vec<NerSpan>) {
        self.responses.insert(text.into(), NerResponse { spans });
    }
}

impl NerAdapter for FixtureAdapter {
    fn recognize(&self, request: &NerRequest) -> Result<NerResponse, AdapterError> {
        Ok(self.responses.get(&request.text).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub value: String,
    pub label: EntityType,
    #[serde(default = "default_score")]
    pub score: f64,
}

fn default_score() -> f64 {
    0.99
}

/// Ground-truth style adapter: reports every case-insensitive occurrence of a
/// known value that is not glued to other alphanumerics. Longer values win
/// overlaps.
#[derive(Debug, Clone, Default)]
pub struct GazetteerAdapter {
    entries: Vec<GazetteerEntry>,
}

impl GazetteerAdapter {
    pub fn new(mut entries: Vec<GazetteerEntry>) -> Self {
        entries.retain(|e| !e.value.trim().is_empty());
        entries.sort_by(|a, b| {
            b.value
                .chars()
                .count()
                .cmp(&a.value.chars().count())
                .then_with(|| a.value.cmp(&b.value))
                .then_with(|| a.label.cmp(&b.label))
        });
        entries.dedup_by(|a, b| a.value.to_lowercase() == b.value.to_lowercase());
        Self { entries }
    }

    pub fn from_json_file(path: &Path) -> Result<Self, AdapterError> {
        let bytes = std::fs::read(path)
            .map_err(|e| AdapterError::Unavailable(format!("{}: {e}", path.display())))?;
        let entries: Vec<GazetteerEntry> = serde_json::from_slice(&bytes)
            .map_err(|e| AdapterError::Protocol(e.to_string()))?;
        Ok(Self::new(entries))
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }
}

impl NerAdapter for GazetteerAdapter {
    fn recognize(&self, request: &NerRequest) -> Result<NerResponse, AdapterError> {
        let hay: Vec<char> = request.text.chars().flat_map(char::to_lowercase).collect();
        // to_lowercase may change the char count; fall back to no matches then
        if hay.len() != request.text.chars().count() {
            return Ok(NerResponse::default());
        }
        let mut taken = vec![false; hay.len()];
        let mut spans = Vec::new();
        for e in &self.entries {
            if !request.labels.contains(&e.label) || e.score < request.threshold {
                continue;
            }
            let needle: Vec<char> = e.value.chars().flat_map(char::to_lowercase).collect();
            if needle.is_empty() || needle.len() > hay.len() {
                continue;
            }
            let mut i = 0;
            while i + needle.len() <= hay.len() {
                let end = i + needle.len();
                if hay[i..end] == needle[..]
                    && (i == 0 || !hay[i - 1].is_alphanumeric())
                    && (end == hay.len() || !hay[end].is_alphanumeric())
                    && !taken[i..end].iter().any(|&t| t)
                {
                    taken[i..end].iter_mut().for_each(|t| *t = true);
                    spans.push(NerSpan {
                        start: i,
                        end,
                        label: e.label.to_string(),
                        score: e.score,
                    });
                    i = end;
                } else {
                    i += 1;
                }
            }
        }
        spans.sort_by_key(|s| s.start);
        Ok(NerResponse { spans })
    }
}

fn exchange<W: Write, R: BufRead>(
    writer: &mut W,
    reader: &mut R,
    request: &NerRequest,
) -> Result<NerResponse, AdapterError> {
    let mut line = serde_json::to_string(request).map_err(|e| AdapterError::Protocol(e.to_string()))?;
    line.push('\n');
    writer
        .write_all(line.as_bytes())
        .and_then(|_| writer.flush())
        .map_err(|e| AdapterError::Unavailable(e.to_string()))?;
    let mut reply = String::new();
    let n = reader
        .read_line(&mut reply)
        .map_err(|e| AdapterError::Unavailable(e.to_string()))?;
    if n == 0 {
        return Err(AdapterError::Unavailable("adapter closed the stream".into()));
    }
    serde_json::from_str(reply.trim_end()).map_err(|e| AdapterError::Protocol(e.to_string()))
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Adapter speaking the line protocol with a long-lived child process over
/// its stdin/stdout.
pub struct SubprocessAdapter {
    io: Mutex<ChildIo>,
}

impl SubprocessAdapter {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, AdapterError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AdapterError::Unavailable(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            io: Mutex::new(ChildIo {
                child,
                stdin,
                stdout,
            }),
        })
    }
}

impl NerAdapter for SubprocessAdapter {
    fn recognize(&self, request: &NerRequest) -> Result<NerResponse, AdapterError> {
        let mut io = self.io.lock();
        let ChildIo { stdin, stdout, .. } = &mut *io;
        exchange(stdin, stdout, request)
    }
}

impl Drop for SubprocessAdapter {
    fn drop(&mut self) {
        let io = self.io.get_mut();
        let _ = io.child.kill();
        let _ = io.child.wait();
    }
}

/// Adapter speaking the line protocol over a local TCP socket. The
/// connection is opened lazily and reopened after a failure.
pub struct TcpAdapter {
    addr: SocketAddr,
    timeout: Duration,
    conn: Mutex<Option<(TcpStream, BufReader<TcpStream>)>>,
}

impl TcpAdapter {
    pub fn new(addr: SocketAddr) -> Self {
        Self {
            addr,
            timeout: Duration::from_secs(30),
            conn: Mutex::new(None),
        }
    }
}

impl NerAdapter for TcpAdapter {
    fn recognize(&self, request: &NerRequest) -> Result<NerResponse, AdapterError> {
        let mut guard = self.conn.lock();
        if guard.is_none() {
            let stream = TcpStream::connect_timeout(&self.addr, self.timeout)
                .map_err(|e| AdapterError::Unavailable(format!("{}: {e}", self.addr)))?;
            stream
                .set_read_timeout(Some(self.timeout))
                .map_err(|e| AdapterError::Unavailable(e.to_string()))?;
            let reader = BufReader::new(
                stream
                    .try_clone()
                    .map_err(|e| AdapterError::Unavailable(e.to_string()))?,
            );
            *guard = Some((stream, reader));
        }
        let (writer, reader) = guard.as_mut().unwrap();
        let result = exchange(writer, reader, request);
        if result.is_err() {
            *guard = None;
        }
        result
    }
}
