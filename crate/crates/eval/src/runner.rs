use std::collections::BTreeMap;

use anonproxy_core::gatekeeper::{handle_compute, ComputeRequest, PolicyModel, RuleModel};
use anonproxy_core::model::{make_placeholder, normalize, scan_placeholders, SessionStats};
use anonproxy_core::proxy::{
    handle_command, ActionRecord, Capture, DeviceExecutor, DeviceScript, Gesture, Observation,
    ScreenSpec, SimulatedDevice, Transition,
};
use anonproxy_core::transform::{anonymize_instruction, synthesize_detailed, xml_content_strings, LeakScanner};
use anonproxy_core::{ErrorCode, NerAdapter, SessionConfig, SessionState, Source, VirtualUi};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::EntityObservation;
use crate::scenario::{Scenario, COMPUTE_PREFIX};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub oracle_detector: bool,
    /// Replaces the scenario's own configuration.
    pub config: Option<SessionConfig>,
}

/// A gatekeeper exchange as the agent saw it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeExchange {
    pub request: ComputeRequest,
    pub response: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub ui: VirtualUi,
    pub visible_ocr: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compute: Vec<ComputeExchange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<ActionRecord>,
    pub placeholders_observed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub scenario: String,
    pub masked_instruction: String,
    pub steps: Vec<StepRecord>,
    pub observations: Vec<EntityObservation>,
    /// Every string sent toward the agent, in order.
    pub payload: Vec<String>,
    /// Final answer with placeholders resolved; shown to the user only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_visible_answer: Option<String>,
    pub stats: SessionStats,
}

impl Transcript {
    pub fn corpus(&self) -> String {
        self.payload.join("\n")
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[error("{code} at step {step:?}: {message}")]
pub struct RunError {
    /// Step being processed; `None` before the first screen.
    pub step: Option<u64>,
    pub code: String,
    pub message: String,
}

impl RunError {
    fn new(step: Option<u64>, e: &(impl ErrorCode + std::fmt::Display)) -> Self {
        Self { step, code: e.code().to_string(), message: e.to_string() }
    }
}

/// A device that walks `screens` in order: any gesture or text entry moves on
/// to the next screen, the last one stays put.
pub fn linear_device(screens: &[Capture]) -> DeviceScript {
    let name = |i: usize| format!("s{i:03}");
    let gestures = [
        Gesture::Tap,
        Gesture::LongPress,
        Gesture::SwipeUp,
        Gesture::SwipeDown,
        Gesture::SwipeLeft,
        Gesture::SwipeRight,
        Gesture::Type,
    ];
    let mut map = BTreeMap::new();
    for (i, c) in screens.iter().enumerate() {
        let transitions = if i + 1 < screens.len() {
            gestures
                .iter()
                .map(|&g| Transition { gesture: g, region: None, to: name(i + 1) })
                .collect()
        } else {
            Vec::new()
        };
        map.insert(
            name(i),
            ScreenSpec::Static { xml: c.xml.clone(), ocr: c.ocr_tokens.clone(), transitions },
        );
    }
    DeviceScript { start: name(0), screens: map, fields: BTreeMap::new(), type_mode: Default::default() }
}

/// Placeholder the agent would use for planted entity `i`.
fn placeholder_for(session: &SessionState, scenario: &Scenario, i: usize) -> String {
    let p = &scenario.planted[i];
    let v = normalize(&p.value);
    let entries: Vec<_> = session.mapping().entries().collect();
    entries
        .iter()
        .find(|(_, e)| normalize(&e.raw) == v && e.etype == p.etype)
        .or_else(|| entries.iter().find(|(_, e)| normalize(&e.raw) == v))
        .map(|(k, _)| k.to_string())
        .unwrap_or_else(|| make_placeholder(&p.value, &p.etype).to_string())
}

/// Substitutes `{{eN}}` references with placeholders.
pub fn expand_template(session: &SessionState, scenario: &Scenario, text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{e") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 3..];
        let digits: String = after.chars().take_while(char::is_ascii_digit).collect();
        let closes = after[digits.len()..].starts_with("}}");
        match digits.parse::<usize>() {
            Ok(i) if closes && i < scenario.planted.len() => {
                out.push_str(&placeholder_for(session, scenario, i));
                rest = &after[digits.len() + 2..];
            }
            _ => {
                out.push_str("{{e");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

struct Observer<'a> {
    scenario: &'a Scenario,
    scanners: Vec<LeakScanner>,
    out: Vec<EntityObservation>,
}

impl<'a> Observer<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        let scanners = scenario.planted.iter().map(|p| LeakScanner::new([p.value.as_str()])).collect();
        Self { scenario, scanners, out: Vec::new() }
    }

    fn observe(&mut self, session: &SessionState, text: &str, order: u64, step: Option<u64>, modality: Source) {
        let found = scan_placeholders(text);
        for (i, p) in self.scenario.planted.iter().enumerate() {
            let v = normalize(&p.value);
            let raw = self.scanners[i].any_hit(text);
            let mut placeholders: Vec<String> = Vec::new();
            for m in &found {
                let Ok(e) = session.mapping().resolve(m.text) else { continue };
                if normalize(&e.raw) == v && !placeholders.iter().any(|q| q == m.text) {
                    placeholders.push(m.text.to_string());
                }
            }
            if raw || !placeholders.is_empty() {
                self.out.push(EntityObservation {
                    entity: i,
                    order,
                    step,
                    modality,
                    raw,
                    placeholders,
                    whitelisted: session.whitelist().contains(&p.value),
                });
            }
        }
    }
}

/// Script grouped by device command: the gatekeeper entries issued before
/// each command, then the command itself.
fn group_script(script: &[String]) -> Vec<(Vec<&str>, Option<&str>)> {
    let mut out = Vec::new();
    let mut pending: Vec<&str> = Vec::new();
    for s in script {
        if let Some(body) = s.strip_prefix(COMPUTE_PREFIX) {
            pending.push(body);
        } else {
            out.push((std::mem::take(&mut pending), Some(s.as_str())));
        }
    }
    if !pending.is_empty() {
        out.push((pending, None));
    }
    out
}

fn compute_response(session: &mut SessionState, req: &ComputeRequest, model: &dyn PolicyModel) -> serde_json::Value {
    match handle_compute(session, req, model) {
        Ok(r) => serde_json::json!({ "allowed": true, "kind": r.kind, "result": r.value }),
        Err(anonproxy_core::gatekeeper::GateError::PolicyDenied(d)) => serde_json::json!({
            "allowed": false,
            "error": "policy-denied",
            "failed_criterion": d.failed_criterion,
            "rationale": d.rationale,
        }),
        Err(e) => serde_json::json!({ "allowed": false, "error": e.code() }),
    }
}

/// Replays the scenario's script against the full pipeline.
pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<Transcript, RunError> {
    let config = options
        .config
        .clone()
        .or_else(|| scenario.config.clone())
        .unwrap_or_default();
    let mut session = SessionState::new(format!("eval-{}", scenario.name), config).map_err(|e| RunError::new(None, &e))?;
    let adapter: Box<dyn NerAdapter> = if options.oracle_detector {
        Box::new(scenario.oracle_adapter())
    } else {
        Box::new(scenario.detector.adapter())
    };
    let script = scenario.device.clone().unwrap_or_else(|| linear_device(&scenario.screens));
    let mut device = SimulatedDevice::new(script).map_err(|e| RunError {
        step: None,
        code: "scenario-invalid".into(),
        message: e.to_string(),
    })?;
    let model = RuleModel;
    let mut observer = Observer::new(scenario);
    let mut payload = Vec::new();

    let masked = anonymize_instruction(&mut session, &scenario.instruction, adapter.as_ref())
        .map_err(|e| RunError::new(None, &e))?;
    payload.push(masked.clone());
    observer.observe(&session, &masked, 0, None, Source::Instruction);

    let mut capture = device.capture().map_err(|e| RunError {
        step: Some(0),
        code: "executor-failure".into(),
        message: e.to_string(),
    })?;
    let mut steps = Vec::new();
    let mut answer = None;

    for (k, (computes, command)) in group_script(&scenario.script).into_iter().enumerate() {
        let k = k as u64;
        let synth = synthesize_detailed(&mut session, &capture.xml, &capture.ocr_tokens, adapter.as_ref())
            .map_err(|e| RunError::new(Some(k), &e))?;
        let ui_json = serde_json::to_string(&synth.ui).expect("virtual ui serializes");
        let visible = synth.visible_ocr.join(" ");
        let mut ocr_view = visible.clone();
        for m in &synth.ui.mask_plan {
            ocr_view.push(' ');
            ocr_view.push_str(&m.placeholder.to_string());
        }
        observer.observe(&session, &xml_content_strings(&synth.ui.anonymized_xml).join("\n"), 1 + 2 * k, Some(k), Source::Xml);
        observer.observe(&session, &ocr_view, 2 + 2 * k, Some(k), Source::Ocr);
        payload.push(ui_json.clone());
        payload.push(visible);
        let mut record = StepRecord {
            step: synth.ui.step_index,
            placeholders_observed: scan_placeholders(&ui_json).iter().map(|m| m.text.to_string()).collect(),
            ui: synth.ui,
            visible_ocr: synth.visible_ocr,
            compute: Vec::new(),
            command: None,
        };

        for body in computes {
            let expanded = expand_template(&session, scenario, body);
            let exchange = match serde_json::from_str::<ComputeRequest>(&expanded) {
                Ok(req) => {
                    let response = compute_response(&mut session, &req, &model);
                    ComputeExchange { request: req, response }
                }
                Err(e) => {
                    return Err(RunError { step: Some(k), code: "scenario-invalid".into(), message: format!("compute entry: {e}") })
                }
            };
            payload.push(serde_json::to_string(&exchange.request).expect("request serializes"));
            payload.push(exchange.response.to_string());
            record.compute.push(exchange);
        }

        let Some(command) = command else {
            steps.push(record);
            break;
        };
        let raw = expand_template(&session, scenario, command);
        let mut log: Vec<u8> = Vec::new();
        let result = handle_command(&mut session, &raw, &mut device as &mut dyn DeviceExecutor, Some(&mut log));
        let line = String::from_utf8_lossy(&log).trim_end().to_string();
        payload.push(line.clone());
        record.command = serde_json::from_str(&line).ok();
        steps.push(record);
        match result {
            Ok(r) => match r.observation {
                Observation::Screen(c) => capture = c,
                Observation::Finished { raw_answer } => {
                    answer = raw_answer;
                    break;
                }
            },
            Err(e) if e.code() == "executor-failure" => return Err(RunError::new(Some(k), &e)),
            // agent-side mistakes are acknowledged and the screen stays
            Err(_) => {}
        }
    }

    Ok(Transcript {
        scenario: scenario.name.clone(),
        masked_instruction: masked,
        steps,
        observations: observer.out,
        payload,
        user_visible_answer: answer,
        stats: session.stats().clone(),
    })
}
