use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::entity::{normalize, EntityType};
use super::mapping::MappingTable;
use crate::detect::{DetectorConfig, RegexRuleSpec, Source};
use crate::gatekeeper::GateState;
use crate::transform::VirtualUi;
use crate::ErrorCode;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("label set is empty")]
    EmptyLabels,
    #[error("{name} must lie in (0, 1], got {value}")]
    Threshold { name: &'static str, value: f64 },
    #[error("regex rule label {0} is not in the configured label set")]
    RuleLabel(String),
    #[error("regex rule for {label} does not compile: {message}")]
    Pattern { label: String, message: String },
    #[error("invalid policy setting: {0}")]
    Policy(String),
    #[error("invalid screen size")]
    Screen,
    #[error("snapshot version {0} is not supported")]
    Version(u32),
    #[error("snapshot is inconsistent: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ErrorCode for ConfigError {
    fn code(&self) -> &'static str {
        "invalid-config"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Every occurrence is hashed with a per-step salt and the forward map is
    /// never consulted.
    PerStepSalt,
    /// No anonymization at all; the final leak scan is skipped.
    RawPassthrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateLocale {
    /// `DD/MM/YYYY`
    DayFirst,
    /// `MM/DD/YYYY`
    MonthFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumberLocale {
    /// `1,234.56`
    #[default]
    DotDecimal,
    /// `1.234,56`
    CommaDecimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Gatekeeper calls allowed per operand per session.
    pub call_budget: u32,
    pub date_locale: Option<DateLocale>,
    pub number_locale: NumberLocale,
    /// LENGTH_CLASS: `short` up to this many characters.
    pub short_max: usize,
    /// LENGTH_CLASS: `medium` up to this many characters, `long` above.
    pub medium_max: usize,
    /// Optional JSON-lines audit file inside the trusted boundary.
    pub audit_log: Option<std::path::PathBuf>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            call_budget: 16,
            date_locale: None,
            number_locale: NumberLocale::DotDecimal,
            short_max: 8,
            medium_max: 16,
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenSize {
    pub width: u32,
    pub height: u32,
}

impl Default for ScreenSize {
    fn default() -> Self {
        Self {
            width: 1080,
            height: 2400,
        }
    }
}

fn default_ner_threshold() -> f64 {
    0.5
}

fn default_fuzzy_threshold() -> f64 {
    0.85
}

fn default_true() -> bool {
    true
}

fn default_interactable_classes() -> Vec<String> {
    vec!["android.widget.EditText".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default = "SessionConfig::default_labels")]
    pub labels: Vec<EntityType>,
    #[serde(default = "default_ner_threshold")]
    pub ner_threshold: f64,
    /// Fuzzy alignment threshold; a match needs similarity strictly above it.
    #[serde(default = "default_fuzzy_threshold")]
    pub fuzzy_threshold: f64,
    /// Continue regex-only when the NER adapter is unavailable.
    #[serde(default)]
    pub fail_open: bool,
    /// `None` selects the built-in rules whose label is configured.
    #[serde(default)]
    pub regex_rules: Option<Vec<RegexRuleSpec>>,
    /// Scanned in addition to `text`, `hint` and `content-desc`.
    #[serde(default)]
    pub extra_scanned_attributes: Vec<String>,
    #[serde(default = "default_interactable_classes")]
    pub interactable_classes: Vec<String>,
    /// Additional structural tokens exempt from XML anonymization.
    #[serde(default)]
    pub structural_tokens: Vec<String>,
    /// Refuse to emit a Virtual UI that still contains a mapped raw value.
    #[serde(default = "default_true")]
    pub final_scan: bool,
    /// Include `original_text_length` in mask regions.
    #[serde(default = "default_true")]
    pub emit_text_length: bool,
    #[serde(default)]
    pub screen: ScreenSize,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub ablation: Ablation,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self::new(Self::default_labels())
    }
}

impl SessionConfig {
    pub fn new(labels: Vec<EntityType>) -> Self {
        Self {
            labels,
            ner_threshold: default_ner_threshold(),
            fuzzy_threshold: default_fuzzy_threshold(),
            fail_open: false,
            regex_rules: None,
            extra_scanned_attributes: Vec::new(),
            interactable_classes: default_interactable_classes(),
            structural_tokens: Vec::new(),
            final_scan: true,
            emit_text_length: true,
            screen: ScreenSize::default(),
            policy: PolicyConfig::default(),
            ablation: Ablation::None,
        }
    }

    /// Label set covering every built-in regex rule plus common name types.
    pub fn default_labels() -> Vec<EntityType> {
        [
            "FIRST_NAME",
            "LAST_NAME",
            "PERSON",
            "PHONE_NUMBER",
            "EMAIL",
            "CREDIT_CARD",
            "IBAN",
            "ADDRESS",
            "DATE_OF_BIRTH",
            "DATE",
            "AMOUNT",
            "VERIFICATION_CODE",
        ]
        .into_iter()
        .map(|l| EntityType::new(l).unwrap())
        .collect()
    }

    pub fn validate(&self) -> Result<DetectorConfig, ConfigError> {
        if self.labels.is_empty() {
            return Err(ConfigError::EmptyLabels);
        }
        for (name, value) in [
            ("ner_threshold", self.ner_threshold),
            ("fuzzy_threshold", self.fuzzy_threshold),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(ConfigError::Threshold { name, value });
            }
        }
        if self.policy.short_max == 0 || self.policy.medium_max <= self.policy.short_max {
            return Err(ConfigError::Policy(
                "length classes need 0 < short_max < medium_max".into(),
            ));
        }
        if self.policy.call_budget == 0 {
            return Err(ConfigError::Policy("call_budget must be positive".into()));
        }
        if self.screen.width == 0 || self.screen.height == 0 {
            return Err(ConfigError::Screen);
        }
        DetectorConfig::from_session_config(self)
    }

    pub(crate) fn scanned_attributes(&self) -> impl Iterator<Item = &str> {
        ["text", "hint", "content-desc"]
            .into_iter()
            .chain(self.extra_scanned_attributes.iter().map(String::as_str))
    }
}

/// Instruction-derived tokens exempted from anonymization for the session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Whitelist {
    tokens: BTreeSet<String>,
}

impl Whitelist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: &str) {
        let n = normalize(token);
        if !n.is_empty() {
            self.tokens.insert(n);
        }
    }

    pub fn extend(&mut self, other: Whitelist) {
        self.tokens.extend(other.tokens);
    }

    /// Exact membership on the normalized form.
    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains(&normalize(token))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityCounters {
    pub entities: u64,
    /// Characters replaced by placeholders or covered by masks.
    pub chars_anonymized: u64,
    /// Characters of input seen for this modality.
    pub chars_total: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub instruction: ModalityCounters,
    pub xml: ModalityCounters,
    pub ocr: ModalityCounters,
    pub placeholders_created: u64,
    pub actions_resolved: u64,
    pub gatekeeper_calls: u64,
    pub virtual_uis: u64,
}

impl SessionStats {
    pub fn modality_mut(&mut self, source: Source) -> &mut ModalityCounters {
        match source {
            Source::Instruction => &mut self.instruction,
            Source::Xml => &mut self.xml,
            Source::Ocr => &mut self.ocr,
        }
    }
}

/// Everything one task session keeps inside the trusted boundary.
#[derive(Debug)]
pub struct SessionState {
    id: String,
    config: SessionConfig,
    pub(crate) detector: DetectorConfig,
    pub(crate) mapping: MappingTable,
    pub(crate) whitelist: Whitelist,
    pub(crate) stats: SessionStats,
    pub(crate) raw_instruction: Option<String>,
    pub(crate) masked_instruction: Option<String>,
    /// Placeholders that have been shown to the agent.
    pub(crate) exposed: BTreeSet<String>,
    pub(crate) latest_ui: Option<VirtualUi>,
    pub(crate) next_step: u64,
    pub(crate) gate: GateState,
    pub(crate) captures: BTreeMap<String, crate::proxy::Capture>,
    captures_issued: u64,
    created: Instant,
}

impl SessionState {
    pub fn new(id: impl Into<String>, config: SessionConfig) -> Result<Self, ConfigError> {
        let detector = config.validate()?;
        Ok(Self {
            id: id.into(),
            config,
            detector,
            mapping: MappingTable::new(),
            whitelist: Whitelist::new(),
            stats: SessionStats::default(),
            raw_instruction: None,
            masked_instruction: None,
            exposed: BTreeSet::new(),
            latest_ui: None,
            next_step: 0,
            gate: GateState::default(),
            captures: BTreeMap::new(),
            captures_issued: 0,
            created: Instant::now(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn detector(&self) -> &DetectorConfig {
        &self.detector
    }

    pub fn mapping(&self) -> &MappingTable {
        &self.mapping
    }

    pub fn whitelist(&self) -> &Whitelist {
        &self.whitelist
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    pub fn masked_instruction(&self) -> Option<&str> {
        self.masked_instruction.as_deref()
    }

    pub fn latest_ui(&self) -> Option<&VirtualUi> {
        self.latest_ui.as_ref()
    }

    pub fn exposed_placeholders(&self) -> &BTreeSet<String> {
        &self.exposed
    }

    /// Milliseconds since the session was created (monotonic).
    pub fn elapsed_ms(&self) -> u64 {
        self.created.elapsed().as_millis() as u64
    }

    pub(crate) fn expose_from(&mut self, text: &str) {
        for m in super::placeholder::scan_placeholders(text) {
            self.exposed.insert(m.text.to_string());
        }
    }

    /// Stores a device capture and returns the token the agent exchanges for
    /// the corresponding Virtual UI. Tokens are single-use and numbered per
    /// session.
    pub fn store_capture(&mut self, capture: crate::proxy::Capture) -> String {
        self.captures_issued += 1;
        let token = format!("cap-{:06}", self.captures_issued);
        self.captures.insert(token.clone(), capture);
        token
    }

    pub fn take_capture(&mut self, token: &str) -> Option<crate::proxy::Capture> {
        self.captures.remove(token)
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            version: SNAPSHOT_VERSION,
            session_id: self.id.clone(),
            config: self.config.clone(),
            mapping: self.mapping.clone(),
            whitelist: self.whitelist.clone(),
            stats: self.stats.clone(),
        }
    }

    pub fn restore(snapshot: SessionSnapshot) -> Result<Self, ConfigError> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(ConfigError::Version(snapshot.version));
        }
        let mut s = Self::new(snapshot.session_id, snapshot.config)?;
        s.mapping = snapshot.mapping;
        s.whitelist = snapshot.whitelist;
        s.stats = snapshot.stats;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        fs::write(path, serde_json::to_vec_pretty(&self.snapshot())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let snapshot: SessionSnapshot = serde_json::from_slice(&fs::read(path)?)?;
        Self::restore(snapshot)
    }
}

/// Persisted form of a session (opt-in; sessions are discarded on close by
/// default).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub version: u32,
    pub session_id: String,
    pub config: SessionConfig,
    pub mapping: MappingTable,
    pub whitelist: Whitelist,
    pub stats: SessionStats,
}
