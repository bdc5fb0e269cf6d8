use std::path::Path;

use anonproxy_core::detect::{
    AdapterError, FixtureAdapter, GazetteerAdapter, GazetteerEntry, NerAdapter, NerRequest,
    NerResponse, NerSpan,
};
use anonproxy_core::model::normalize;
use anonproxy_core::proxy::{Capture, DeviceScript};
use anonproxy_core::transform::xml_content_strings;
use anonproxy_core::{EntityType, SessionConfig, Source};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEntity {
    pub value: String,
    pub etype: EntityType,
    pub modalities: Vec<Source>,
    /// Screen steps the value appears on.
    #[serde(default)]
    pub steps: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureText {
    pub text: String,
    pub spans: Vec<NerSpan>,
}

/// The NER stand-in used when the oracle detector is off. Exact-text
/// fixture responses take precedence over the gazetteer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    #[serde(default)]
    pub gazetteer: Vec<GazetteerEntry>,
    #[serde(default)]
    pub fixture: Vec<FixtureText>,
}

pub struct ScenarioAdapter {
    fixture: FixtureAdapter,
    texts: std::collections::BTreeSet<String>,
    gazetteer: GazetteerAdapter,
}

impl NerAdapter for ScenarioAdapter {
    fn recognize(&self, request: &NerRequest) -> Result<NerResponse, AdapterError> {
        if self.texts.contains(&request.text) {
            self.fixture.recognize(request)
        } else {
            self.gazetteer.recognize(request)
        }
    }
}

impl DetectorSpec {
    pub fn adapter(&self) -> ScenarioAdapter {
        let mut fixture = FixtureAdapter::new();
        let mut texts = std::collections::BTreeSet::new();
        for f in &self.fixture {
            fixture.insert(f.text.clone(), f.spans.clone());
            texts.insert(f.text.clone());
        }
        ScenarioAdapter {
            fixture,
            texts,
            gazetteer: GazetteerAdapter::new(self.gazetteer.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub instruction: String,
    pub planted: Vec<PlantedEntity>,
    /// Screen captured before each step.
    pub screens: Vec<Capture>,
    pub script: Vec<String>,
    pub expected_final_state: String,
    #[serde(default)]
    pub detector: DetectorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SessionConfig>,
    /// Overrides the linear device built from `screens`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceScript>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
}

impl anonproxy_core::ErrorCode for ScenarioError {
    fn code(&self) -> &'static str {
        match self {
            ScenarioError::Io(_) => "io-error",
            _ => "scenario-invalid",
        }
    }
}

pub const COMPUTE_PREFIX: &str = "@compute ";

/// Device commands in the script, i.e. everything but gatekeeper entries.
pub fn device_commands(script: &[String]) -> impl Iterator<Item = &String> {
    script.iter().filter(|s| !s.starts_with(COMPUTE_PREFIX))
}

fn is_finish(cmd: &str) -> bool {
    cmd.trim_start().to_ascii_lowercase().starts_with("finish")
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let bytes = std::fs::read(path)?;
        let s: Scenario = serde_json::from_slice(&bytes)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.screens.is_empty() {
            return bad("no screens".into());
        }
        let commands: Vec<&String> = device_commands(&self.script).collect();
        let n = self.screens.len();
        let m = commands.len();
        let terminal = commands.last().is_some_and(|c| is_finish(c));
        if self.device.is_none() && !(m == n || (terminal && m == n + 1) || m + 1 == n) {
            return bad(format!("{m} commands for {n} screens"));
        }
        let instruction = normalize(&self.instruction);
        for (i, p) in self.planted.iter().enumerate() {
            let v = normalize(&p.value);
            if v.is_empty() {
                return bad(format!("planted entity {i} is empty"));
            }
            for m in &p.modalities {
                match m {
                    Source::Instruction => {
                        if !instruction.contains(&v) {
                            return bad(format!("planted entity {i} not in instruction"));
                        }
                    }
                    Source::Xml | Source::Ocr => {
                        for &s in &p.steps {
                            let Some(screen) = self.screens.get(s as usize) else {
                                return bad(format!("planted entity {i} references step {s}"));
                            };
                            let text = if *m == Source::Xml {
                                xml_content_strings(&screen.xml).join("\n")
                            } else {
                                screen.ocr_tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
                            };
                            if !normalize(&text).contains(&v) {
                                return bad(format!("planted entity {i} not in {m:?} of step {s}"));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// The ground-truth detector: every planted value with its type.
    pub fn oracle_adapter(&self) -> GazetteerAdapter {
        GazetteerAdapter::new(
            self.planted
                .iter()
                .map(|p| GazetteerEntry {
                    value: p.value.clone(),
                    label: p.etype.clone(),
                    score: 1.0,
                })
                .collect(),
        )
    }
}
