use std::collections::BTreeMap;

use anonproxy_core::detect::{GazetteerAdapter, GazetteerEntry};
use anonproxy_core::proxy::{
    handle_command, mediate, parse_command, resolve_spatial, AgentCommand, DetachedExecutor, DeviceEvent, DeviceExecutor,
    DeviceScript, Gesture, Observation, ResolvedAction, ScreenSpec, SimulatedDevice, Widget,
};
use anonproxy_core::transform::{anonymize_instruction, synthesize_virtual_ui};
use anonproxy_core::{BoundingBox, EntityType, ErrorCode, SessionConfig, SessionState};

fn widget(id: &str, class: &str, text: &str, bounds: (i64, i64, i64, i64)) -> Widget {
    Widget {
        id: Some(id.into()),
        class: class.into(),
        text: text.into(),
        hint: None,
        content_desc: None,
        bounds: BoundingBox::new(bounds.0, bounds.1, bounds.2, bounds.3).unwrap(),
        clickable: true,
        long_clickable: false,
        scrollable: false,
        field: None,
        on: BTreeMap::new(),
    }
}

fn device() -> SimulatedDevice {
    let mut phone = widget("phone", "android.widget.EditText", "", (40, 300, 1040, 420));
    phone.field = Some("phone".into());
    let mut save = widget("save", "android.widget.Button", "Save", (700, 1880, 1040, 1990));
    save.on.insert(Gesture::Tap, "done".into());
    let done = widget("ok", "android.widget.TextView", "Saved", (40, 300, 1040, 420));
    let mut screens = BTreeMap::new();
    screens.insert("form".to_string(), ScreenSpec::Widgets { widgets: vec![phone, save], transitions: vec![] });
    screens.insert("done".to_string(), ScreenSpec::Widgets { widgets: vec![done], transitions: vec![] });
    SimulatedDevice::new(DeviceScript { start: "form".into(), screens, fields: BTreeMap::new(), type_mode: Default::default() })
        .unwrap()
}

fn prepared() -> (SessionState, SimulatedDevice, GazetteerAdapter) {
    let mut s = SessionState::new("m", SessionConfig::default()).unwrap();
    let adapter = GazetteerAdapter::new(vec![GazetteerEntry {
        value: "Xu".into(),
        label: EntityType::new("LAST_NAME").unwrap(),
        score: 0.99,
    }]);
    anonymize_instruction(&mut s, "Save Xu with phone number 13912345670", &adapter).unwrap();
    let mut d = device();
    let c = d.capture().unwrap();
    synthesize_virtual_ui(&mut s, &c.xml, &c.ocr_tokens, &adapter).unwrap();
    (s, d, adapter)
}

#[test]
fn typed_placeholder_reaches_device_as_raw() {
    let (mut s, mut d, _) = prepared();
    let phone = s.mapping().entries().find(|(_, e)| e.raw == "13912345670").map(|(k, _)| k.to_string()).unwrap();
    handle_command(&mut s, "tap(0)", &mut d, None).unwrap();
    let mut log = Vec::new();
    let r = handle_command(&mut s, &format!("type(\"{phone}\")"), &mut d, Some(&mut log)).unwrap();
    assert_eq!(d.field("phone"), Some("13912345670"));
    assert!(d.events().contains(&DeviceEvent::TypeText { text: "13912345670".into() }));
    assert_eq!(r.record.placeholders_used, vec![phone.clone()]);
    let line = String::from_utf8(log).unwrap();
    assert!(line.contains(&phone));
    assert!(!line.contains("13912345670"));
}

#[test]
fn spatial_commands_use_centroids_and_never_touch_the_table() {
    let (mut s, mut d, _) = prepared();
    let before = s.mapping().access_count();
    let m = mediate(&s, &parse_command("tap(1)").unwrap()).unwrap();
    assert_eq!(m.action(), &ResolvedAction::TapAt { x: 870, y: 1935 });
    let m = mediate(&s, &parse_command("swipe(0, down, short)").unwrap()).unwrap();
    assert_eq!(
        m.action(),
        &ResolvedAction::SwipeFrom { x: 540, y: 360, direction: anonproxy_core::proxy::Direction::Down, distance_px: 600 }
    );
    assert_eq!(s.mapping().access_count(), before);
    let r = handle_command(&mut s, "tap(1)", &mut d, None).unwrap();
    assert!(matches!(r.observation, Observation::Screen(ref c) if c.xml.contains("Saved")));
    assert_eq!(s.mapping().access_count(), before);
}

#[test]
fn rejections() {
    let (mut s, mut d, _) = prepared();
    let code = |s: &mut SessionState, d: &mut SimulatedDevice, c: &str| handle_command(s, c, d, None).unwrap_err().code();
    assert_eq!(code(&mut s, &mut d, "tap(9)"), "index-out-of-range");
    assert_eq!(code(&mut s, &mut d, "tap(0, 1)"), "arity-error");
    assert_eq!(code(&mut s, &mut d, "tap(0"), "parse-error");
    assert_eq!(code(&mut s, &mut d, "jump(0)"), "unknown-command");
    assert_eq!(code(&mut s, &mut d, "type(\"PHONE_NUMBER#zzzzz\")"), "unknown-placeholder");
    assert!(d.events().iter().all(|e| *e == DeviceEvent::Capture));

    let mut fresh = SessionState::new("e", SessionConfig::default()).unwrap();
    assert_eq!(code(&mut fresh, &mut d, "tap(0)"), "empty-element-list");
}

#[test]
fn executor_failure_surfaces() {
    let (mut s, _, _) = prepared();
    let mut log = Vec::new();
    let err = handle_command(&mut s, "back()", &mut DetachedExecutor, Some(&mut log)).unwrap_err();
    assert_eq!(err.code(), "executor-failure");
    assert!(String::from_utf8(log).unwrap().contains("executor-failure"));
}

#[test]
fn finish_resolves_answer_for_the_user() {
    let (mut s, mut d, _) = prepared();
    let name = s.mapping().entries().find(|(_, e)| e.raw == "Xu").map(|(k, _)| k.to_string()).unwrap();
    let r = handle_command(&mut s, &format!("finish(\"Saved {name}\")"), &mut d, None).unwrap();
    assert_eq!(r.observation, Observation::Finished { raw_answer: Some("Saved Xu".into()) });
    assert_eq!(r.record.outcome, "finished");
    assert_eq!(r.record.raw_command, format!("finish(\"Saved {name}\")"));
}

#[test]
fn resolve_spatial_ignores_text_commands() {
    let (s, _, _) = prepared();
    let ui = s.latest_ui().unwrap();
    let screen = s.config().screen;
    assert_eq!(resolve_spatial(&AgentCommand::Back, ui, screen).unwrap(), None);
}
