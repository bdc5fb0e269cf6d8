use std::path::Path;

use anonproxy_core::model::Ablation;
use anonproxy_core::proxy::Capture;
use anonproxy_core::SessionConfig;
use anonproxy_eval::audit::count;
use anonproxy_eval::{run_scenario, MetricsReport, RunOptions, Scenario, ViolationClass};

fn fixture(name: &str) -> Scenario {
    let path = format!("{}/../../fixtures/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    Scenario::load(Path::new(&path)).unwrap()
}

fn oracle() -> RunOptions {
    RunOptions { oracle_detector: true, config: None }
}

fn with(config: SessionConfig) -> RunOptions {
    RunOptions { oracle_detector: false, config: Some(config) }
}

#[test]
fn consistent_message_scenario() {
    let s = fixture("message_consistent");
    let t = run_scenario(&s, &oracle()).unwrap();
    let r = MetricsReport::from_transcript(&s, &t, 0);
    assert!(r.violations.is_empty());
    assert_eq!(r.lr, 0.0);
    assert_eq!(t.steps.len(), 5);
    assert_eq!(t.user_visible_answer.as_deref(), Some("Message sent to Alice"));
    assert!(!t.corpus().contains("Alice"));
    // one placeholder for the name everywhere
    let ph: std::collections::BTreeSet<_> = t.observations.iter().flat_map(|o| o.placeholders.clone()).collect();
    assert_eq!(ph.into_iter().collect::<Vec<_>>(), ["FIRST_NAME#6b7vr"]);
}

#[test]
fn contacts_scenario_types_raw_values_on_device() {
    let s = fixture("contacts_form");
    let t = run_scenario(&s, &RunOptions::default()).unwrap();
    let r = MetricsReport::from_transcript(&s, &t, 0);
    assert!(r.clean(), "{r:?}");
    assert_eq!(t.user_visible_answer.as_deref(), Some("Saved contact Xu"));
    assert_eq!(
        t.masked_instruction,
        "Add a contacts whose name is LAST_NAME#4v71x, set the working phone number to be PHONE_NUMBER#1lryd and mobile phone number to be PHONE_NUMBER#2f28e"
    );
    for raw in ["12345678", "87654321"] {
        assert!(!t.corpus().contains(raw));
    }
}

#[test]
fn instruction_miss_leaks_without_inconsistency() {
    let s = fixture("message_missed");
    let t = run_scenario(&s, &RunOptions::default()).unwrap();
    let r = MetricsReport::from_transcript(&s, &t, 0);
    assert_eq!(r.lr, 1.0);
    assert!(r.violations.is_empty());
    let t = run_scenario(&s, &oracle()).unwrap();
    assert!(MetricsReport::from_transcript(&s, &t, 0).clean());
}

#[test]
fn planted_leak_is_measured() {
    let s = fixture("planted_leak");
    let t = run_scenario(&s, &RunOptions::default()).unwrap();
    let r = MetricsReport::from_transcript(&s, &t, 0);
    assert_eq!(r.lr, 0.25);
    assert_eq!(count(&r.violations, ViolationClass::A1), 1);
    assert_eq!(r.violations.len(), 1);
    assert_eq!(r.violations[0].second.step, Some(0));

    let mut cfg = s.config.clone().unwrap();
    cfg.final_scan = true;
    let e = run_scenario(&s, &with(cfg)).unwrap_err();
    assert_eq!((e.code.as_str(), e.step), ("leak-detected", Some(0)));

    let t = run_scenario(&s, &oracle()).unwrap();
    assert_eq!(MetricsReport::from_transcript(&s, &t, 0).lr, 0.0);
}

#[test]
fn passthrough_leaks_everything() {
    let mut cfg = SessionConfig::default();
    cfg.ablation = Ablation::RawPassthrough;
    for name in ["message_consistent", "contacts_form", "planted_leak"] {
        let s = fixture(name);
        let t = run_scenario(&s, &RunOptions { oracle_detector: true, config: Some(cfg.clone()) }).unwrap();
        assert_eq!(MetricsReport::from_transcript(&s, &t, 0).lr, 1.0, "{name}");
    }
}

#[test]
fn per_step_salt_shows_split_placeholders() {
    let mut cfg = SessionConfig::default();
    cfg.ablation = Ablation::PerStepSalt;
    let s = fixture("message_consistent");
    let t = run_scenario(&s, &RunOptions { oracle_detector: true, config: Some(cfg) }).unwrap();
    let r = MetricsReport::from_transcript(&s, &t, 0);
    assert_eq!(count(&r.violations, ViolationClass::B), 1);
}

#[test]
fn pii_free_scenario() {
    let xml = |title: &str| {
        format!(
            r#"<hierarchy rotation="0"><node index="0" text="{title}" class="android.widget.TextView" package="com.example.settings" content-desc="" clickable="false" bounds="[0,0][1080,200]" /><node index="1" text="Next" class="android.widget.Button" package="com.example.settings" content-desc="" clickable="true" bounds="[40,1880][1040,1990]" /></hierarchy>"#
        )
    };
    let s = Scenario {
        schema_version: 1,
        name: "settings".into(),
        seed: 0,
        instruction: "Open display settings and enable dark mode".into(),
        planted: vec![],
        screens: ["Settings", "Display", "Dark mode"].iter().map(|t| Capture { xml: xml(t), ocr_tokens: vec![] }).collect(),
        script: vec!["tap(0)".into(), "tap(0)".into(), "finish()".into()],
        expected_final_state: "dark mode screen".into(),
        detector: Default::default(),
        config: None,
        device: None,
    };
    s.validate().unwrap();
    let t = run_scenario(&s, &RunOptions::default()).unwrap();
    assert_eq!(t.masked_instruction, s.instruction);
    assert_eq!(t.steps.len(), 3);
    assert!(t.steps.iter().all(|st| st.ui.mask_plan.is_empty()));
    assert_eq!(t.stats.placeholders_created, 0);
    let r = MetricsReport::from_transcript(&s, &t, 0);
    assert_eq!((r.lr, r.ms, r.violations.len()), (0.0, 0.0, 0));
}

#[test]
fn transcripts_are_reproducible() {
    for name in ["message_consistent", "contacts_form", "planted_leak"] {
        let s = fixture(name);
        let a = serde_json::to_string(&run_scenario(&s, &RunOptions::default()).unwrap()).unwrap();
        let b = serde_json::to_string(&run_scenario(&s, &RunOptions::default()).unwrap()).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut s = fixture("message_consistent");
    s.screens.clear();
    assert!(s.validate().is_err());
    let mut s = fixture("message_consistent");
    s.planted[0].value = "Bartholomew".into();
    assert!(s.validate().is_err());
    let mut s = fixture("message_consistent");
    s.schema_version = 99;
    assert!(s.validate().is_err());
}
