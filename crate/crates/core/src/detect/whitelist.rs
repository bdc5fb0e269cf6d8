use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{raw_detect, DetectError, DetectorConfig, EntitySpan, NerAdapter};
use crate::model::{normalize, Whitelist};

/// Function words never added to the contextual whitelist.
pub const STOP_TOKENS: &[&str] = &[
    "a", "an", "the", "of", "to", "in", "on", "at", "by", "for", "from", "with", "into", "onto",
    "as", "and", "or", "but", "nor", "is", "are", "be", "it", "its", "this", "that", "these",
    "those", "up", "out", "off", "over", "under", "about", "via", "per",
];

const XML_TAGS: &[&str] = &["hierarchy", "node", "xml", "?xml"];

const XML_ATTRIBUTE_KEYS: &[&str] = &[
    "index", "text", "resource-id", "class", "package", "content-desc", "checkable", "checked",
    "clickable", "enabled", "focusable", "focused", "scrollable", "long-clickable", "password",
    "selected", "bounds", "hint", "editable", "rotation", "visible-to-user", "drawing-order",
    "important-for-accessibility", "display-id", "version", "encoding", "standalone",
];

static CLASS_NAME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:android|androidx|com|org|net|io|java|javax|kotlin)(?:\.[a-z0-9_$]+){2,}$").unwrap()
});

static RESOURCE_ID: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[a-z][a-z0-9_.]*:id/[a-z0-9_.]+$").unwrap());

/// Tag names and attribute keys of the Android view-hierarchy dialect.
pub fn default_structural_tokens() -> BTreeSet<String> {
    XML_TAGS
        .iter()
        .chain(XML_ATTRIBUTE_KEYS)
        .map(|t| t.to_string())
        .collect()
}

/// True for XML tag names, attribute keys, widget class names, resource ids
/// and configured schema tokens.
pub fn structural_exempt(token: &str, config: &DetectorConfig) -> bool {
    let n = normalize(token);
    config.structural.contains(&n) || CLASS_NAME.is_match(&n) || RESOURCE_ID.is_match(&n)
}

/// Candidate functional tokens of an instruction: maximal alphanumeric runs of
/// at least two characters plus double-quoted substrings, minus stop tokens
/// and anything overlapping a detected PII span (char offsets).
pub fn functional_tokens(instruction: &str, pii: &[EntitySpan]) -> Vec<String> {
    let chars: Vec<char> = instruction.chars().collect();
    let overlaps = |s: usize, e: usize| pii.iter().any(|p| p.start < e && s < p.end);
    let mut out = Vec::new();

    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            if i - start >= 2 && !overlaps(start, i) {
                let tok: String = chars[start..i].iter().collect();
                if !STOP_TOKENS.contains(&normalize(&tok).as_str()) {
                    out.push(tok);
                }
            }
        } else {
            i += 1;
        }
    }

    let is_open = |c: char| c == '"' || c == '\u{201C}';
    let is_close = |c: char| c == '"' || c == '\u{201D}';
    let mut i = 0;
    while i < chars.len() {
        if is_open(chars[i]) {
            if let Some(len) = chars[i + 1..].iter().position(|&c| is_close(c)) {
                let (s, e) = (i + 1, i + 1 + len);
                let quoted: String = chars[s..e].iter().collect();
                if !quoted.trim().is_empty() && !overlaps(s, e) {
                    out.push(quoted);
                }
                i = e + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Builds the contextual whitelist from the raw instruction: tokens the
/// detector did not classify as PII there stay raw for the whole session.
pub fn build_whitelist(
    instruction: &str,
    config: &DetectorConfig,
    fail_open: bool,
    adapter: &dyn NerAdapter,
) -> Result<Whitelist, DetectError> {
    let pii = raw_detect(instruction, config, fail_open, adapter)?;
    let mut w = Whitelist::new();
    for tok in functional_tokens(instruction, &pii) {
        if crate::model::scan_placeholders(&tok).is_empty() {
            w.insert(&tok);
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{default_rules, DetectorKind, FixtureAdapter, NerSpan, NullAdapter, Source};
    use crate::model::{EntityType, SessionConfig};

    fn config() -> DetectorConfig {
        DetectorConfig::new(SessionConfig::default_labels(), 0.5, default_rules(), &[]).unwrap()
    }

    #[test]
    fn structural_tokens() {
        let c = config();
        assert!(structural_exempt("android.widget.TextView", &c));
        assert!(structural_exempt("content-desc", &c));
        assert!(structural_exempt("com.android.contacts:id/name", &c));
        assert!(!structural_exempt("Alice", &c));
        assert!(!structural_exempt("example.org", &c));
    }

    #[test]
    fn contacts_instruction_whitelist() {
        let text = "Add a contacts whose name is Xu, set the working phone number to be 12345678 and mobile phone number to be 87654321";
        let adapter = FixtureAdapter::new().with(
            text,
            vec![NerSpan { start: 29, end: 31, label: "LAST_NAME".into(), score: 0.9 }],
        );
        let w = build_whitelist(text, &config(), false, &adapter).unwrap();
        assert!(w.contains("contacts"));
        assert!(w.contains("working"));
        assert!(w.contains("mobile"));
        assert!(!w.contains("Xu"));
        assert!(!w.contains("12345678"));
        assert!(!w.contains("87654321"));
        assert!(!w.contains("a"));
        assert!(!w.contains("the"));
    }

    #[test]
    fn no_pii_and_all_pii() {
        let w = build_whitelist("Open settings", &config(), false, &NullAdapter).unwrap();
        assert!(w.contains("open") && w.contains("settings"));
        let w = build_whitelist("12345678", &config(), false, &NullAdapter).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn quoted_substrings() {
        let spans = vec![EntitySpan {
            value: "Bob".into(),
            etype: EntityType::new("FIRST_NAME").unwrap(),
            confidence: 0.9,
            start: 31,
            end: 34,
            source: Source::Instruction,
            detector: DetectorKind::Ner,
        }];
        let toks = functional_tokens("tap \"New contact\" then message Bob", &spans);
        assert!(toks.contains(&"New contact".to_string()));
        assert!(!toks.contains(&"Bob".to_string()));
    }
}
