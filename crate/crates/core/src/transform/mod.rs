//! Layer 2: deterministic pseudonymization and Virtual UI synthesis.
//!
//! Every sensitive value, whatever modality it arrives through, is routed
//! through [`lookup_or_create`], so one (normalized value, type) pair maps to
//! one placeholder for the whole session.

pub mod fuzzy;
pub mod leak;
mod ocr;
mod render;
mod xml;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fuzzy::{align_against, fuzzy_align, fuzzy_similarity, levenshtein};
pub use leak::{digit_runs, LeakScanner};
pub use render::{render_masks, render_png, MASK_COLOR};
pub use xml::{anonymize_xml, xml_content_strings};

use crate::detect::{
    char_boundaries, functional_tokens, raw_detect, DetectError, NerAdapter, Source,
};
use crate::model::{Ablation, BoundingBox, BoundsError, EntityType, Placeholder, SessionState};
use crate::ErrorCode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrToken {
    pub text: String,
    pub bbox: BoundingBox,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiElement {
    pub index: usize,
    pub bbox: BoundingBox,
    pub attributes: BTreeMap<String, String>,
    pub interactable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRegion {
    pub bbox: BoundingBox,
    pub placeholder: Placeholder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_text_length: Option<usize>,
}

/// The anonymized view of one UI state: the only screen representation the
/// remote agent receives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualUi {
    #[serde(rename = "step")]
    pub step_index: u64,
    pub anonymized_xml: String,
    pub elements: Vec<UiElement>,
    pub mask_plan: Vec<MaskRegion>,
}

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("xml parse error at byte {position}: {message}")]
    XmlParse { position: usize, message: String },
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("final scan found {hits} raw value(s) in outgoing content")]
    Leak { hits: usize },
    #[error("mask region {bbox:?} outside {width}x{height} image")]
    BboxOutOfBounds { bbox: BoundingBox, width: u32, height: u32 },
    #[error("image error: {0}")]
    Image(String),
}

impl ErrorCode for TransformError {
    fn code(&self) -> &'static str {
        match self {
            TransformError::XmlParse { .. } => "xml-parse-error",
            TransformError::Bounds(_) => "bounds-parse-error",
            TransformError::Detect(e) => e.code(),
            TransformError::Leak { .. } => "leak-detected",
            TransformError::BboxOutOfBounds { .. } => "bbox-out-of-bounds",
            TransformError::Image(_) => "image-error",
        }
    }
}

/// Existing placeholder for `(value, etype)` or a freshly generated one.
pub fn lookup_or_create(session: &mut SessionState, value: &str, etype: &EntityType) -> Placeholder {
    let (p, created) = match session.config().ablation {
        Ablation::PerStepSalt => {
            let salt = if session.masked_instruction.is_none() {
                "instruction".to_string()
            } else {
                session.next_step.to_string()
            };
            session.mapping.insert_unkeyed(value, etype, &salt)
        }
        _ => session.mapping.insert(value, etype),
    };
    if created {
        session.stats.placeholders_created += 1;
    }
    p
}

fn substitute(
    session: &mut SessionState,
    text: &str,
    spans: &[crate::detect::EntitySpan],
    source: Source,
) -> String {
    let bounds = char_boundaries(text);
    let mut out = text.to_string();
    for span in spans.iter().rev() {
        let p = lookup_or_create(session, &span.value, &span.etype);
        out.replace_range(bounds[span.start]..bounds[span.end], &p.to_string());
        let counters = session.stats.modality_mut(source);
        counters.entities += 1;
        counters.chars_anonymized += span.len() as u64;
    }
    out
}

/// Replaces every detected span of `text` with its placeholder. Callers
/// account for `chars_total`.
pub(crate) fn anonymize_text(
    session: &mut SessionState,
    text: &str,
    source: Source,
    adapter: &dyn NerAdapter,
) -> Result<String, TransformError> {
    if session.config().ablation == Ablation::RawPassthrough {
        return Ok(text.to_string());
    }
    let spans = crate::detect::detect(session, text, source, adapter)?;
    Ok(substitute(session, text, &spans, source))
}

/// Masks the task instruction and derives the session whitelist from it.
pub fn anonymize_instruction(
    session: &mut SessionState,
    instruction: &str,
    adapter: &dyn NerAdapter,
) -> Result<String, TransformError> {
    let spans = raw_detect(
        instruction,
        session.detector(),
        session.config().fail_open,
        adapter,
    )?;
    for tok in functional_tokens(instruction, &spans) {
        if crate::model::scan_placeholders(&tok).is_empty() {
            session.whitelist.insert(&tok);
        }
    }
    session.stats.instruction.chars_total += instruction.chars().count() as u64;
    let masked = if session.config().ablation == Ablation::RawPassthrough {
        instruction.to_string()
    } else {
        let mut spans = spans;
        for s in &mut spans {
            s.source = Source::Instruction;
        }
        let masked = substitute(session, instruction, &spans, Source::Instruction);
        if session.config().final_scan {
            let scanner = LeakScanner::new(session.mapping.raw_values());
            let hits = scanner.count_hits(&masked);
            if hits > 0 {
                return Err(TransformError::Leak { hits });
            }
        }
        masked
    };
    session.raw_instruction = Some(instruction.to_string());
    session.masked_instruction = Some(masked.clone());
    session.expose_from(&masked);
    Ok(masked)
}

/// Detected spans of the OCR stream turned into mask regions.
pub fn anonymize_ocr(
    session: &mut SessionState,
    tokens: &[OcrToken],
    adapter: &dyn NerAdapter,
) -> Result<Vec<MaskRegion>, TransformError> {
    Ok(ocr::ocr_pass(session, tokens, adapter)?.regions)
}

/// A Virtual UI plus the OCR text left visible after masking, one entry per
/// input token (blanked where masked).
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub ui: VirtualUi,
    pub visible_ocr: Vec<String>,
}

pub fn synthesize_virtual_ui(
    session: &mut SessionState,
    xml: &str,
    ocr_tokens: &[OcrToken],
    adapter: &dyn NerAdapter,
) -> Result<VirtualUi, TransformError> {
    synthesize_detailed(session, xml, ocr_tokens, adapter).map(|s| s.ui)
}

/// Composes the XML and OCR passes and runs the fail-closed final scan. On any
/// error the session's mapping table and counters are left as they were.
pub fn synthesize_detailed(
    session: &mut SessionState,
    xml: &str,
    ocr_tokens: &[OcrToken],
    adapter: &dyn NerAdapter,
) -> Result<Synthesis, TransformError> {
    if session.masked_instruction.is_none() {
        log::warn!("session {}: UI synthesized before the instruction was anonymized", session.id());
    }
    let mapping = session.mapping.clone();
    let stats = session.stats.clone();
    let result = synthesize_inner(session, xml, ocr_tokens, adapter);
    if result.is_err() {
        session.mapping = mapping;
        session.stats = stats;
    }
    result
}

fn synthesize_inner(
    session: &mut SessionState,
    xml: &str,
    ocr_tokens: &[OcrToken],
    adapter: &dyn NerAdapter,
) -> Result<Synthesis, TransformError> {
    let (anonymized_xml, elements) = anonymize_xml(session, xml, adapter)?;
    let pass = ocr::ocr_pass(session, ocr_tokens, adapter)?;
    let ui = VirtualUi {
        step_index: session.next_step,
        anonymized_xml,
        elements,
        mask_plan: pass.regions,
    };

    if session.config().final_scan && session.config().ablation != Ablation::RawPassthrough {
        let scanner = LeakScanner::new(session.mapping.raw_values());
        let mut hits = 0;
        for s in xml_content_strings(&ui.anonymized_xml) {
            hits += scanner.count_hits(&s);
        }
        for e in &ui.elements {
            for v in e.attributes.values() {
                hits += scanner.count_hits(v);
            }
        }
        for m in &ui.mask_plan {
            hits += scanner.count_hits(&m.placeholder.to_string());
        }
        for v in &pass.visible {
            hits += scanner.count_hits(v);
        }
        if hits > 0 {
            return Err(TransformError::Leak { hits });
        }
    }

    session.next_step += 1;
    session.stats.virtual_uis += 1;
    session.expose_from(&ui.anonymized_xml);
    for m in &ui.mask_plan {
        session.exposed.insert(m.placeholder.to_string());
    }
    session.latest_ui = Some(ui.clone());
    Ok(Synthesis {
        ui,
        visible_ocr: pass.visible,
    })
}
