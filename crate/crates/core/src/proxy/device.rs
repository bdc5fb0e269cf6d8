use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Direction;
use crate::model::BoundingBox;
use crate::transform::OcrToken;

/// Raw screen state as produced by the device: view hierarchy plus OCR.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    pub xml: String,
    #[serde(default)]
    pub ocr_tokens: Vec<OcrToken>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("executor failure: {0}")]
pub struct ExecutorError(pub String);

/// The device side of the proxy. Implementations receive only resolved
/// coordinates and raw text.
pub trait DeviceExecutor: Send {
    fn tap(&mut self, x: u32, y: u32) -> Result<(), ExecutorError>;
    fn long_press(&mut self, x: u32, y: u32) -> Result<(), ExecutorError>;
    fn swipe(&mut self, x: u32, y: u32, direction: Direction, distance_px: u32) -> Result<(), ExecutorError>;
    fn type_text(&mut self, text: &str) -> Result<(), ExecutorError>;
    fn back(&mut self) -> Result<(), ExecutorError>;
    fn home(&mut self) -> Result<(), ExecutorError>;
    fn capture(&mut self) -> Result<Capture, ExecutorError>;
}

/// Executor with nothing attached; every call fails.
#[derive(Debug, Default, Clone, Copy)]
pub struct DetachedExecutor;

impl DeviceExecutor for DetachedExecutor {
    fn tap(&mut self, _: u32, _: u32) -> Result<(), ExecutorError> {
        Err(detached())
    }
    fn long_press(&mut self, _: u32, _: u32) -> Result<(), ExecutorError> {
        Err(detached())
    }
    fn swipe(&mut self, _: u32, _: u32, _: Direction, _: u32) -> Result<(), ExecutorError> {
        Err(detached())
    }
    fn type_text(&mut self, _: &str) -> Result<(), ExecutorError> {
        Err(detached())
    }
    fn back(&mut self) -> Result<(), ExecutorError> {
        Err(detached())
    }
    fn home(&mut self) -> Result<(), ExecutorError> {
        Err(detached())
    }
    fn capture(&mut self) -> Result<Capture, ExecutorError> {
        Err(detached())
    }
}

fn detached() -> ExecutorError {
    ExecutorError("no device attached".into())
}

// ---------------------------------------------------------------------------
// Simulated device

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeMode {
    #[default]
    Replace,
    Append,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gesture {
    Tap,
    LongPress,
    SwipeUp,
    SwipeDown,
    SwipeLeft,
    SwipeRight,
    /// Text entry; screen-level transitions only, the region is ignored.
    Type,
}

impl Gesture {
    fn swipe(direction: Direction) -> Self {
        match direction {
            Direction::Up => Gesture::SwipeUp,
            Direction::Down => Gesture::SwipeDown,
            Direction::Left => Gesture::SwipeLeft,
            Direction::Right => Gesture::SwipeRight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Widget {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default = "default_class")]
    pub class: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub hint: Option<String>,
    #[serde(default)]
    pub content_desc: Option<String>,
    pub bounds: BoundingBox,
    #[serde(default)]
    pub clickable: bool,
    #[serde(default)]
    pub long_clickable: bool,
    #[serde(default)]
    pub scrollable: bool,
    /// Name of the text field this widget edits and displays.
    #[serde(default)]
    pub field: Option<String>,
    /// Gesture → target screen.
    #[serde(default)]
    pub on: BTreeMap<Gesture, String>,
}

fn default_class() -> String {
    "android.widget.TextView".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub gesture: Gesture,
    /// Area the gesture must start in; anywhere when absent.
    #[serde(default)]
    pub region: Option<BoundingBox>,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScreenSpec {
    Static {
        xml: String,
        #[serde(default)]
        ocr: Vec<OcrToken>,
        #[serde(default)]
        transitions: Vec<Transition>,
    },
    Widgets {
        widgets: Vec<Widget>,
        #[serde(default)]
        transitions: Vec<Transition>,
    },
}

/// Declarative scenario script for [`SimulatedDevice`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceScript {
    pub start: String,
    pub screens: BTreeMap<String, ScreenSpec>,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
    #[serde(default)]
    pub type_mode: TypeMode,
}

/// One call received by a simulated device, as the device saw it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DeviceEvent {
    Tap { x: u32, y: u32 },
    LongPress { x: u32, y: u32 },
    Swipe { x: u32, y: u32, direction: Direction, distance_px: u32 },
    TypeText { text: String },
    Back,
    Home,
    Capture,
}

/// Deterministic in-memory device driven by a [`DeviceScript`].
#[derive(Debug, Clone)]
pub struct SimulatedDevice {
    script: DeviceScript,
    current: String,
    history: Vec<String>,
    fields: BTreeMap<String, String>,
    focused: Option<String>,
    events: Vec<DeviceEvent>,
}

impl SimulatedDevice {
    pub fn new(script: DeviceScript) -> Result<Self, ExecutorError> {
        if !script.screens.contains_key(&script.start) {
            return Err(ExecutorError(format!("start screen {:?} not defined", script.start)));
        }
        for (name, spec) in &script.screens {
            let (transitions, widgets) = match spec {
                ScreenSpec::Static { transitions, .. } => (transitions, &[][..]),
                ScreenSpec::Widgets { widgets, transitions } => (transitions, widgets.as_slice()),
            };
            let targets = transitions
                .iter()
                .map(|t| &t.to)
                .chain(widgets.iter().flat_map(|w| w.on.values()));
            for to in targets {
                if !script.screens.contains_key(to) {
                    return Err(ExecutorError(format!("screen {name:?} links to undefined {to:?}")));
                }
            }
        }
        Ok(Self {
            current: script.start.clone(),
            fields: script.fields.clone(),
            script,
            history: Vec::new(),
            focused: None,
            events: Vec::new(),
        })
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ExecutorError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExecutorError(format!("{}: {e}", path.display())))?;
        let script: DeviceScript = serde_json::from_str(&text).map_err(|e| ExecutorError(format!("{}: {e}", path.display())))?;
        Self::new(script)
    }

    pub fn current_screen(&self) -> &str {
        &self.current
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }

    pub fn events(&self) -> &[DeviceEvent] {
        &self.events
    }

    fn spec(&self) -> &ScreenSpec {
        &self.script.screens[&self.current]
    }

    fn go(&mut self, to: String) {
        if to != self.current {
            let prev = std::mem::replace(&mut self.current, to);
            self.history.push(prev);
            self.focused = None;
        }
    }

    fn gesture(&mut self, gesture: Gesture, x: u32, y: u32) {
        let hit = |b: &BoundingBox| x >= b.left && x < b.right && y >= b.top && y < b.bottom;
        let mut target = None;
        let mut focus = None;
        match self.spec() {
            ScreenSpec::Static { transitions, .. } => {
                target = transitions
                    .iter()
                    .find(|t| t.gesture == gesture && t.region.as_ref().is_none_or(hit))
                    .map(|t| t.to.clone());
            }
            ScreenSpec::Widgets { widgets, transitions } => {
                // topmost widget wins: later widgets are drawn over earlier ones
                if let Some(w) = widgets.iter().rev().find(|w| hit(&w.bounds)) {
                    target = w.on.get(&gesture).cloned();
                    if gesture == Gesture::Tap {
                        focus = w.field.clone();
                    }
                }
                if target.is_none() {
                    target = transitions
                        .iter()
                        .find(|t| t.gesture == gesture && t.region.as_ref().is_none_or(hit))
                        .map(|t| t.to.clone());
                }
            }
        }
        if focus.is_some() {
            self.focused = focus;
        }
        if let Some(to) = target {
            self.go(to);
        }
    }

    fn render(&self) -> Capture {
        match self.spec() {
            ScreenSpec::Static { xml, ocr, .. } => Capture {
                xml: xml.clone(),
                ocr_tokens: ocr.clone(),
            },
            ScreenSpec::Widgets { widgets, .. } => {
                let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?><hierarchy rotation=\"0\">");
                let mut ocr = Vec::new();
                for (i, w) in widgets.iter().enumerate() {
                    let text = match &w.field {
                        Some(f) => self.fields.get(f).cloned().unwrap_or_default(),
                        None => w.text.clone(),
                    };
                    let b = &w.bounds;
                    xml.push_str(&format!(
                        "<node index=\"{i}\" text=\"{}\" resource-id=\"{}\" class=\"{}\"",
                        escape(&text),
                        escape(w.id.as_deref().unwrap_or("")),
                        escape(&w.class)
                    ));
                    if let Some(h) = &w.hint {
                        xml.push_str(&format!(" hint=\"{}\"", escape(h)));
                    }
                    xml.push_str(&format!(
                        " content-desc=\"{}\" clickable=\"{}\" long-clickable=\"{}\" scrollable=\"{}\" editable=\"{}\" bounds=\"[{},{}][{},{}]\"/>",
                        escape(w.content_desc.as_deref().unwrap_or("")),
                        w.clickable,
                        w.long_clickable,
                        w.scrollable,
                        w.field.is_some(),
                        b.left,
                        b.top,
                        b.right,
                        b.bottom
                    ));
                    let shown = if text.is_empty() { w.hint.clone().unwrap_or_default() } else { text };
                    ocr.extend(word_tokens(&shown, b));
                }
                xml.push_str("</hierarchy>");
                Capture { xml, ocr_tokens: ocr }
            }
        }
    }
}

fn escape(s: &str) -> String {
    quick_xml::escape::escape(s).into_owned()
}

/// Splits `text` on whitespace into OCR tokens laid out left to right across
/// `bbox`, one glyph cell per char.
fn word_tokens(text: &str, bbox: &BoundingBox) -> Vec<OcrToken> {
    let total = text.chars().count();
    if total == 0 {
        return Vec::new();
    }
    let w = bbox.width() as usize;
    let mut out = Vec::new();
    let mut pos = 0;
    for piece in text.split(' ') {
        let n = piece.chars().count();
        if !piece.trim().is_empty() {
            let l = bbox.left as usize + w * pos / total;
            let r = (bbox.left as usize + w * (pos + n) / total).max(l + 1);
            if let Ok(b) = BoundingBox::new(l as i64, bbox.top as i64, r as i64, bbox.bottom as i64) {
                out.push(OcrToken {
                    text: piece.to_string(),
                    bbox: b,
                    confidence: 0.99,
                });
            }
        }
        pos += n + 1;
    }
    out
}

impl DeviceExecutor for SimulatedDevice {
    fn tap(&mut self, x: u32, y: u32) -> Result<(), ExecutorError> {
        self.events.push(DeviceEvent::Tap { x, y });
        self.gesture(Gesture::Tap, x, y);
        Ok(())
    }

    fn long_press(&mut self, x: u32, y: u32) -> Result<(), ExecutorError> {
        self.events.push(DeviceEvent::LongPress { x, y });
        self.gesture(Gesture::LongPress, x, y);
        Ok(())
    }

    fn swipe(&mut self, x: u32, y: u32, direction: Direction, distance_px: u32) -> Result<(), ExecutorError> {
        self.events.push(DeviceEvent::Swipe { x, y, direction, distance_px });
        self.gesture(Gesture::swipe(direction), x, y);
        Ok(())
    }

    fn type_text(&mut self, text: &str) -> Result<(), ExecutorError> {
        self.events.push(DeviceEvent::TypeText { text: text.to_string() });
        if let Some(f) = &self.focused {
            let slot = self.fields.entry(f.clone()).or_default();
            match self.script.type_mode {
                TypeMode::Replace => *slot = text.to_string(),
                TypeMode::Append => slot.push_str(text),
            }
        }
        let transitions = match self.spec() {
            ScreenSpec::Static { transitions, .. } | ScreenSpec::Widgets { transitions, .. } => transitions,
        };
        if let Some(to) = transitions.iter().find(|t| t.gesture == Gesture::Type).map(|t| t.to.clone()) {
            self.go(to);
        }
        Ok(())
    }

    fn back(&mut self) -> Result<(), ExecutorError> {
        self.events.push(DeviceEvent::Back);
        if let Some(prev) = self.history.pop() {
            self.current = prev;
            self.focused = None;
        }
        Ok(())
    }

    fn home(&mut self) -> Result<(), ExecutorError> {
        self.events.push(DeviceEvent::Home);
        let start = self.script.start.clone();
        self.go(start);
        Ok(())
    }

    fn capture(&mut self) -> Result<Capture, ExecutorError> {
        self.events.push(DeviceEvent::Capture);
        Ok(self.render())
    }
}

// ---------------------------------------------------------------------------
// ADB command stub

/// Writes ADB `input` shell commands instead of driving a device.
pub struct AdbStub<W: Write + Send> {
    out: W,
    screen: (u32, u32),
    capture: Option<Capture>,
}

impl<W: Write + Send> AdbStub<W> {
    pub fn new(out: W, screen_width: u32, screen_height: u32) -> Self {
        Self {
            out,
            screen: (screen_width, screen_height),
            capture: None,
        }
    }

    /// Screen returned by every `capture` call.
    pub fn with_capture(mut self, capture: Capture) -> Self {
        self.capture = Some(capture);
        self
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn emit(&mut self, line: &str) -> Result<(), ExecutorError> {
        writeln!(self.out, "{line}").map_err(|e| ExecutorError(e.to_string()))
    }
}

/// Argument for `input text`: spaces become `%s`, the rest is single-quoted
/// for the shell.
pub fn adb_text_arg(text: &str) -> String {
    let encoded = text.replace('%', "\\%").replace(' ', "%s");
    format!("'{}'", encoded.replace('\'', r"'\''"))
}

/// End point of a swipe, clamped to the screen.
pub fn swipe_end(x: u32, y: u32, direction: Direction, distance_px: u32, screen: (u32, u32)) -> (u32, u32) {
    let max_x = screen.0.saturating_sub(1);
    let max_y = screen.1.saturating_sub(1);
    match direction {
        Direction::Up => (x, y.saturating_sub(distance_px)),
        Direction::Down => (x, y.saturating_add(distance_px).min(max_y)),
        Direction::Left => (x.saturating_sub(distance_px), y),
        Direction::Right => (x.saturating_add(distance_px).min(max_x), y),
    }
}

impl<W: Write + Send> DeviceExecutor for AdbStub<W> {
    fn tap(&mut self, x: u32, y: u32) -> Result<(), ExecutorError> {
        self.emit(&format!("input tap {x} {y}"))
    }

    fn long_press(&mut self, x: u32, y: u32) -> Result<(), ExecutorError> {
        self.emit(&format!("input swipe {x} {y} {x} {y} 800"))
    }

    fn swipe(&mut self, x: u32, y: u32, direction: Direction, distance_px: u32) -> Result<(), ExecutorError> {
        let (x2, y2) = swipe_end(x, y, direction, distance_px, self.screen);
        self.emit(&format!("input swipe {x} {y} {x2} {y2}"))
    }

    fn type_text(&mut self, text: &str) -> Result<(), ExecutorError> {
        self.emit(&format!("input text {}", adb_text_arg(text)))
    }

    fn back(&mut self) -> Result<(), ExecutorError> {
        self.emit("input keyevent KEYCODE_BACK")
    }

    fn home(&mut self) -> Result<(), ExecutorError> {
        self.emit("input keyevent KEYCODE_HOME")
    }

    fn capture(&mut self) -> Result<Capture, ExecutorError> {
        self.capture
            .clone()
            .ok_or_else(|| ExecutorError("the ADB stub cannot capture screens".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(l: i64, t: i64, r: i64, b: i64) -> BoundingBox {
        BoundingBox::new(l, t, r, b).unwrap()
    }

    fn script() -> DeviceScript {
        serde_json::from_value(serde_json::json!({
            "start": "list",
            "screens": {
                "list": {"widgets": [
                    {"text": "New contact", "bounds": [0, 0, 1080, 200], "clickable": true, "on": {"tap": "edit"}}
                ]},
                "edit": {"widgets": [
                    {"class": "android.widget.EditText", "hint": "Name", "bounds": [0, 300, 1080, 400], "field": "name"},
                    {"text": "Save", "bounds": [0, 500, 500, 600], "clickable": true, "on": {"tap": "list"}}
                ]}
            }
        }))
        .unwrap()
    }

    #[test]
    fn transitions_and_typing() {
        let mut d = SimulatedDevice::new(script()).unwrap();
        d.tap(10, 10).unwrap();
        assert_eq!(d.current_screen(), "edit");
        d.tap(10, 350).unwrap();
        d.type_text("Ming Xu").unwrap();
        assert_eq!(d.field("name"), Some("Ming Xu"));
        d.type_text("Li").unwrap();
        assert_eq!(d.field("name"), Some("Li"));
        let cap = d.capture().unwrap();
        assert!(cap.xml.contains("text=\"Li\""));
        assert!(cap.xml.contains("editable=\"true\""));
        d.back().unwrap();
        assert_eq!(d.current_screen(), "list");
    }

    #[test]
    fn append_mode() {
        let mut s = script();
        s.type_mode = TypeMode::Append;
        let mut d = SimulatedDevice::new(s).unwrap();
        d.tap(10, 10).unwrap();
        d.tap(10, 350).unwrap();
        d.type_text("ab").unwrap();
        d.type_text("cd").unwrap();
        assert_eq!(d.field("name"), Some("abcd"));
    }

    #[test]
    fn undefined_target_rejected() {
        let mut s = script();
        s.start = "nowhere".into();
        assert!(SimulatedDevice::new(s).is_err());
    }

    #[test]
    fn ocr_words() {
        let toks = word_tokens("ab cd", &bb(0, 0, 50, 10));
        assert_eq!(toks.len(), 2);
        assert_eq!((toks[0].bbox.left, toks[0].bbox.right), (0, 20));
        assert_eq!((toks[1].bbox.left, toks[1].bbox.right), (30, 50));
    }

    #[test]
    fn adb_dialect() {
        let mut s = AdbStub::new(Vec::new(), 1080, 2400);
        s.tap(540, 1200).unwrap();
        s.swipe(540, 1200, Direction::Up, 1200).unwrap();
        s.type_text("it's 5% off").unwrap();
        s.back().unwrap();
        assert!(s.capture().is_err());
        let out = String::from_utf8(s.into_inner()).unwrap();
        assert_eq!(
            out,
            "input tap 540 1200\ninput swipe 540 1200 540 0\ninput text 'it'\\''s%s5\\%%soff'\ninput keyevent KEYCODE_BACK\n"
        );
    }
}
