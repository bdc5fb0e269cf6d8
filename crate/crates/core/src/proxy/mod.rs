//! Layer 3: interaction proxy.
//!
//! Agent commands are parsed, validated against the latest Virtual UI and
//! resolved (indices to coordinates, placeholders to raw text) before any
//! device call. [`MediatedAction`] can only be built by [`mediate`], and
//! [`execute`] only accepts a `MediatedAction`, so no path reaches a
//! [`DeviceExecutor`] without validation and resolution.

mod device;
mod parse;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use device::{
    adb_text_arg, swipe_end, AdbStub, Capture, DetachedExecutor, DeviceEvent, DeviceExecutor,
    DeviceScript, ExecutorError, Gesture, ScreenSpec, SimulatedDevice, Transition, TypeMode, Widget,
};
pub use parse::parse_command;

use crate::model::{scan_placeholders, ScreenSize, SessionState};
use crate::transform::VirtualUi;
use crate::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Short,
    Medium,
    Long,
}

impl Distance {
    /// Fraction of the screen dimension, in percent.
    pub fn percent(self) -> u32 {
        match self {
            Distance::Short => 25,
            Distance::Medium => 50,
            Distance::Long => 75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentCommand {
    Tap { index: usize },
    LongPress { index: usize },
    Swipe { index: usize, direction: Direction, distance: Distance },
    Type { text: String },
    Back,
    Home,
    Finish { answer: Option<String> },
}

impl AgentCommand {
    pub fn index(&self) -> Option<usize> {
        match self {
            AgentCommand::Tap { index }
            | AgentCommand::LongPress { index }
            | AgentCommand::Swipe { index, .. } => Some(*index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResolvedAction {
    TapAt { x: u32, y: u32 },
    LongPressAt { x: u32, y: u32 },
    SwipeFrom { x: u32, y: u32, direction: Direction, distance_px: u32 },
    TypeText { raw_text: String },
    Back,
    Home,
    Finish { raw_answer: Option<String> },
}

impl ResolvedAction {
    pub fn kind(&self) -> &'static str {
        match self {
            ResolvedAction::TapAt { .. } => "tap_at",
            ResolvedAction::LongPressAt { .. } => "long_press_at",
            ResolvedAction::SwipeFrom { .. } => "swipe_from",
            ResolvedAction::TypeText { .. } => "type_text",
            ResolvedAction::Back => "back",
            ResolvedAction::Home => "home",
            ResolvedAction::Finish { .. } => "finish",
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProxyError {
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("unknown command {0:?}")]
    UnknownCommand(String),
    #[error("{command} takes {expected} argument(s), got {got}")]
    Arity { command: String, expected: &'static str, got: usize },
    #[error("the current UI has no interactable elements")]
    EmptyElementList,
    #[error("index {index} out of range for {len} element(s)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown placeholder {0}")]
    UnknownPlaceholder(String),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
}

impl ErrorCode for ProxyError {
    fn code(&self) -> &'static str {
        match self {
            ProxyError::Parse { .. } => "parse-error",
            ProxyError::UnknownCommand(_) => "unknown-command",
            ProxyError::Arity { .. } => "arity-error",
            ProxyError::EmptyElementList => "empty-element-list",
            ProxyError::IndexOutOfRange { .. } => "index-out-of-range",
            ProxyError::UnknownPlaceholder(_) => "unknown-placeholder",
            ProxyError::Executor(_) => "executor-failure",
        }
    }
}

/// Structural check of a command against the UI it refers to. A missing UI
/// counts as an empty element list.
pub fn validate(cmd: &AgentCommand, ui: Option<&VirtualUi>) -> Result<(), ProxyError> {
    let Some(index) = cmd.index() else {
        return Ok(());
    };
    let len = ui.map_or(0, |u| u.elements.len());
    if len == 0 {
        return Err(ProxyError::EmptyElementList);
    }
    if index >= len {
        return Err(ProxyError::IndexOutOfRange { index, len });
    }
    Ok(())
}

/// Index-based commands to coordinates. Never touches the mapping table.
/// Returns `None` for non-spatial commands.
pub fn resolve_spatial(cmd: &AgentCommand, ui: &VirtualUi, screen: ScreenSize) -> Result<Option<ResolvedAction>, ProxyError> {
    validate(cmd, Some(ui))?;
    let centroid = |i: usize| ui.elements[i].bbox.centroid();
    Ok(match *cmd {
        AgentCommand::Tap { index } => {
            let (x, y) = centroid(index);
            Some(ResolvedAction::TapAt { x, y })
        }
        AgentCommand::LongPress { index } => {
            let (x, y) = centroid(index);
            Some(ResolvedAction::LongPressAt { x, y })
        }
        AgentCommand::Swipe { index, direction, distance } => {
            let (x, y) = centroid(index);
            let axis = match direction {
                Direction::Up | Direction::Down => screen.height,
                Direction::Left | Direction::Right => screen.width,
            };
            let distance_px = (axis as u64 * distance.percent() as u64 / 100) as u32;
            Some(ResolvedAction::SwipeFrom { x, y, direction, distance_px })
        }
        _ => None,
    })
}

/// Replaces every placeholder in `text` with its raw value in one left-to-right
/// pass. Returns the resolved text and the placeholders used.
pub fn resolve_text(session: &SessionState, text: &str) -> Result<(String, Vec<String>), ProxyError> {
    let mut out = String::with_capacity(text.len());
    let mut used = Vec::new();
    let mut last = 0;
    for m in scan_placeholders(text) {
        let entry = session
            .mapping()
            .resolve(m.text)
            .map_err(|_| ProxyError::UnknownPlaceholder(m.text.to_string()))?;
        out.push_str(&text[last..m.start]);
        out.push_str(&entry.raw);
        used.push(m.text.to_string());
        last = m.end;
    }
    out.push_str(&text[last..]);
    Ok((out, used))
}

/// A validated and resolved action, ready for the device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediatedAction {
    action: ResolvedAction,
    placeholders: Vec<String>,
    step: u64,
}

impl MediatedAction {
    pub fn action(&self) -> &ResolvedAction {
        &self.action
    }

    pub fn placeholders(&self) -> &[String] {
        &self.placeholders
    }
}

/// Validates `cmd` against the session's latest Virtual UI and resolves it.
pub fn mediate(session: &SessionState, cmd: &AgentCommand) -> Result<MediatedAction, ProxyError> {
    let ui = session.latest_ui();
    validate(cmd, ui)?;
    let step = ui.map_or(0, |u| u.step_index);
    let (action, placeholders) = match cmd {
        AgentCommand::Type { text } => {
            let (raw_text, used) = resolve_text(session, text)?;
            (ResolvedAction::TypeText { raw_text }, used)
        }
        AgentCommand::Finish { answer } => match answer {
            Some(a) => {
                let (raw, used) = resolve_text(session, a)?;
                (ResolvedAction::Finish { raw_answer: Some(raw) }, used)
            }
            None => (ResolvedAction::Finish { raw_answer: None }, Vec::new()),
        },
        AgentCommand::Back => (ResolvedAction::Back, Vec::new()),
        AgentCommand::Home => (ResolvedAction::Home, Vec::new()),
        spatial => {
            let ui = ui.ok_or(ProxyError::EmptyElementList)?;
            let action = resolve_spatial(spatial, ui, session.config().screen)?
                .expect("spatial command");
            (action, Vec::new())
        }
    };
    Ok(MediatedAction { action, placeholders, step })
}

/// What the device reports after an action.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Screen(Capture),
    /// The task ended. `raw_answer` is for the end user only.
    Finished { raw_answer: Option<String> },
}

/// Forwards a mediated action to the device and captures the resulting screen.
pub fn execute(action: &MediatedAction, executor: &mut dyn DeviceExecutor) -> Result<Observation, ProxyError> {
    match &action.action {
        ResolvedAction::TapAt { x, y } => executor.tap(*x, *y)?,
        ResolvedAction::LongPressAt { x, y } => executor.long_press(*x, *y)?,
        ResolvedAction::SwipeFrom { x, y, direction, distance_px } => executor.swipe(*x, *y, *direction, *distance_px)?,
        ResolvedAction::TypeText { raw_text } => executor.type_text(raw_text)?,
        ResolvedAction::Back => executor.back()?,
        ResolvedAction::Home => executor.home()?,
        ResolvedAction::Finish { raw_answer } => {
            return Ok(Observation::Finished { raw_answer: raw_answer.clone() })
        }
    }
    Ok(Observation::Screen(executor.capture()?))
}

/// One action-log line. Holds the agent's command and placeholders only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub step: u64,
    pub raw_command: String,
    pub validation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_kind: Option<String>,
    pub placeholders_used: Vec<String>,
    pub outcome: String,
}

/// Result of handling one agent command end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub record: ActionRecord,
    pub observation: Observation,
}

/// Parses, mediates and executes one agent command, appending a record to
/// `log` whatever the outcome.
pub fn handle_command(
    session: &mut SessionState,
    raw: &str,
    executor: &mut dyn DeviceExecutor,
    log: Option<&mut dyn Write>,
) -> Result<StepResult, ProxyError> {
    let step = session.latest_ui().map_or(0, |u| u.step_index);
    let mut record = ActionRecord {
        step,
        raw_command: raw.to_string(),
        validation: "ok".into(),
        resolved_kind: None,
        placeholders_used: Vec::new(),
        outcome: "ok".into(),
    };
    let result = parse_command(raw)
        .and_then(|cmd| mediate(session, &cmd))
        .map_err(|e| {
            record.validation = e.code().to_string();
            record.outcome = "rejected".into();
            e
        })
        .and_then(|m| {
            record.step = m.step;
            record.resolved_kind = Some(m.action.kind().to_string());
            record.placeholders_used = m.placeholders.clone();
            execute(&m, executor).map_err(|e| {
                record.outcome = e.code().to_string();
                e
            })
        });
    if let Ok(Observation::Finished { .. }) = &result {
        record.outcome = "finished".into();
    }
    if result.is_ok() {
        session.stats.actions_resolved += 1;
    }
    if let Some(w) = log {
        let line = serde_json::to_string(&record).expect("record serializes");
        let _ = writeln!(w, "{line}");
    }
    result.map(|observation| StepResult { record, observation })
}
