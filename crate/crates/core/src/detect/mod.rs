//! Layer 1: hybrid PII detection.
//!
//! Detection merges spans from an external label-guided NER adapter with a
//! deterministic regex layer, then removes anything the session has licensed
//! to stay raw: instruction-derived whitelist tokens everywhere, and XML
//! structural tokens (tag names, attribute keys, class and resource ids) in
//! the XML modality. Removal happens after merging, so no combination of
//! detector outputs can anonymize an exempt token.

mod adapter;
mod rules;
mod whitelist;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapter::{
    AdapterError, FixtureAdapter, GazetteerAdapter, GazetteerEntry, NerAdapter, NerRequest,
    NerResponse, NerSpan, NullAdapter, SubprocessAdapter, TcpAdapter, UnavailableAdapter,
};
pub use rules::{default_rules, iban_valid, luhn_valid, ContextRule, RegexRule, RegexRuleSpec, Validator};
pub use whitelist::{build_whitelist, default_structural_tokens, functional_tokens, structural_exempt, STOP_TOKENS};

use crate::model::{normalize, ConfigError, EntityType, SessionConfig, SessionState};
use crate::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Instruction,
    Xml,
    Ocr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DetectorKind {
    Ner,
    Regex,
    MappingHit,
}

/// A detected sensitive value. Offsets are character offsets into the
/// scanned text, end exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub value: String,
    pub etype: EntityType,
    pub confidence: f64,
    pub start: usize,
    pub end: usize,
    pub source: Source,
    pub detector: DetectorKind,
}

impl EntitySpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

impl ErrorCode for DetectError {
    fn code(&self) -> &'static str {
        "adapter-unavailable"
    }
}

/// Compiled detector configuration for one session.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub labels: Vec<EntityType>,
    pub ner_threshold: f64,
    pub rules: Vec<RegexRule>,
    pub structural: BTreeSet<String>,
}

impl DetectorConfig {
    pub fn new(
        labels: Vec<EntityType>,
        ner_threshold: f64,
        rules: Vec<RegexRuleSpec>,
        extra_structural: &[String],
    ) -> Result<Self, ConfigError> {
        let mut compiled = Vec::with_capacity(rules.len());
        for spec in rules {
            if !labels.contains(&spec.label) {
                return Err(ConfigError::RuleLabel(spec.label.to_string()));
            }
            compiled.push(RegexRule::compile(spec)?);
        }
        let mut structural = default_structural_tokens();
        structural.extend(extra_structural.iter().map(|t| normalize(t)));
        Ok(Self {
            labels,
            ner_threshold,
            rules: compiled,
            structural,
        })
    }

    pub fn from_session_config(cfg: &SessionConfig) -> Result<Self, ConfigError> {
        let rules = match &cfg.regex_rules {
            Some(r) => r.clone(),
            None => default_rules()
                .into_iter()
                .filter(|r| cfg.labels.contains(&r.label))
                .collect(),
        };
        Self::new(cfg.labels.clone(), cfg.ner_threshold, rules, &cfg.structural_tokens)
    }
}

/// Byte offset of every char boundary, including the end of the string.
pub(crate) fn char_boundaries(text: &str) -> Vec<usize> {
    let mut v: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    v.push(text.len());
    v
}

/// Converts a byte offset on a char boundary into a char offset.
fn byte_to_char(bounds: &[usize], byte: usize) -> usize {
    bounds.binary_search(&byte).expect("char boundary")
}

/// Slices `text` by char offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let b = char_boundaries(text);
    &text[b[start]..b[end]]
}

/// Leftmost-longest, non-overlapping regex matches that pass their
/// validators. Confidence is fixed at 1.0.
pub fn regex_detect(text: &str, config: &DetectorConfig) -> Vec<EntitySpan> {
    if text.is_empty() {
        return Vec::new();
    }
    let bounds = char_boundaries(text);
    // (start, end, rule index) in bytes
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (ri, rule) in config.rules.iter().enumerate() {
        for m in rule.regex.find_iter(text) {
            if m.start() < m.end() && rule.accepts(text, m.start(), m.end()) {
                candidates.push((m.start(), m.end(), ri));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then((b.1 - b.0).cmp(&(a.1 - a.0)))
            .then(a.2.cmp(&b.2))
    });
    let mut out: Vec<EntitySpan> = Vec::new();
    let mut last_end = 0;
    for (s, e, ri) in candidates {
        if s < last_end {
            continue;
        }
        last_end = e;
        out.push(EntitySpan {
            value: text[s..e].to_string(),
            etype: config.rules[ri].spec.label.clone(),
            confidence: 1.0,
            start: byte_to_char(&bounds, s),
            end: byte_to_char(&bounds, e),
            source: Source::Instruction,
            detector: DetectorKind::Regex,
        });
    }
    out
}

/// Forwards the text to the adapter and converts its spans. Spans with a
/// label outside the configured set or a score under the threshold are
/// dropped; out-of-range offsets are a protocol violation.
pub fn ner_detect(
    text: &str,
    config: &DetectorConfig,
    adapter: &dyn NerAdapter,
) -> Result<Vec<EntitySpan>, DetectError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let request = NerRequest {
        text: text.to_string(),
        labels: config.labels.clone(),
        threshold: config.ner_threshold,
    };
    let response = adapter.recognize(&request)?;
    let bounds = char_boundaries(text);
    let n_chars = bounds.len() - 1;
    let mut out = Vec::with_capacity(response.spans.len());
    for s in response.spans {
        if s.start >= s.end || s.end > n_chars {
            return Err(AdapterError::Protocol(format!(
                "span [{}, {}) outside text of {} chars",
                s.start, s.end, n_chars
            ))
            .into());
        }
        if !(s.score >= config.ner_threshold) {
            continue;
        }
        let Ok(etype) = EntityType::new(s.label) else {
            continue;
        };
        if !config.labels.contains(&etype) {
            continue;
        }
        out.push(EntitySpan {
            value: text[bounds[s.start]..bounds[s.end]].to_string(),
            etype,
            confidence: s.score.min(1.0),
            start: s.start,
            end: s.end,
            source: Source::Instruction,
            detector: DetectorKind::Ner,
        });
    }
    Ok(out)
}

/// Union of NER and regex spans. Overlaps keep the longer span; equal
/// lengths prefer the regex span. Output is sorted and non-overlapping.
pub fn merge_detections(ner: Vec<EntitySpan>, regex: Vec<EntitySpan>) -> Vec<EntitySpan> {
    let mut all: Vec<EntitySpan> = regex.into_iter().chain(ner).collect();
    let rank = |d: DetectorKind| match d {
        DetectorKind::Regex => 0,
        DetectorKind::MappingHit => 1,
        DetectorKind::Ner => 2,
    };
    all.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then(rank(a.detector).cmp(&rank(b.detector)))
            .then(a.start.cmp(&b.start))
            .then(a.etype.cmp(&b.etype))
    });
    let mut kept: Vec<EntitySpan> = Vec::new();
    for span in all {
        if span.is_empty() || kept.iter().any(|k| k.overlaps(&span)) {
            continue;
        }
        kept.push(span);
    }
    kept.sort_by_key(|s| s.start);
    kept
}

/// Merged NER + regex detection without any session exemptions.
pub(crate) fn raw_detect(
    text: &str,
    config: &DetectorConfig,
    fail_open: bool,
    adapter: &dyn NerAdapter,
) -> Result<Vec<EntitySpan>, DetectError> {
    let ner = match ner_detect(text, config, adapter) {
        Ok(spans) => spans,
        Err(_) if fail_open => Vec::new(),
        Err(e) => return Err(e),
    };
    Ok(merge_detections(ner, regex_detect(text, config)))
}

/// Full detection for one text of the given modality, with whitelist and
/// structural exemptions applied.
pub fn detect(
    session: &SessionState,
    text: &str,
    source: Source,
    adapter: &dyn NerAdapter,
) -> Result<Vec<EntitySpan>, DetectError> {
    let config = session.detector();
    let mut spans = raw_detect(text, config, session.config().fail_open, adapter)?;
    spans.retain(|s| {
        !session.whitelist().contains(&s.value)
            && !(source == Source::Xml && structural_exempt(&s.value, config))
    });
    for s in &mut spans {
        s.source = source;
    }
    Ok(spans)
}
