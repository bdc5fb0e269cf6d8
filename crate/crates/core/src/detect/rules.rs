use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{ConfigError, EntityType};

/// Checksum a regex candidate must pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validator {
    Luhn,
    Iban,
}

/// Keyword context required near a match (e.g. "code" before an OTP).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRule {
    pub keywords: Vec<String>,
    /// Characters inspected on either side of the match.
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegexRuleSpec {
    pub label: EntityType,
    pub pattern: String,
    #[serde(default)]
    pub validator: Option<Validator>,
    #[serde(default)]
    pub context: Option<ContextRule>,
    /// Inclusive digit-count bounds on the matched text.
    #[serde(default)]
    pub digits: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct RegexRule {
    pub spec: RegexRuleSpec,
    pub regex: Regex,
}

impl RegexRule {
    pub fn compile(spec: RegexRuleSpec) -> Result<Self, ConfigError> {
        let regex = Regex::new(&spec.pattern).map_err(|e| ConfigError::Pattern {
            label: spec.label.to_string(),
            message: e.to_string(),
        })?;
        Ok(Self { spec, regex })
    }

    /// Whether a match at byte range `[start, end)` of `text` is accepted.
    pub fn accepts(&self, text: &str, start: usize, end: usize) -> bool {
        let matched = &text[start..end];
        if let Some((lo, hi)) = self.spec.digits {
            let n = matched.chars().filter(char::is_ascii_digit).count();
            if n < lo || n > hi {
                return false;
            }
        }
        match self.spec.validator {
            Some(Validator::Luhn) if !luhn_valid(matched) => return false,
            Some(Validator::Iban) if !iban_valid(matched) => return false,
            _ => {}
        }
        if let Some(ctx) = &self.spec.context {
            let before: String = {
                let mut v: Vec<char> = text[..start].chars().rev().take(ctx.window).collect();
                v.reverse();
                v.into_iter().collect()
            };
            let after: String = text[end..].chars().take(ctx.window).collect();
            let around = format!("{} {}", before, after).to_lowercase();
            if !ctx.keywords.iter().any(|k| around.contains(&k.to_lowercase())) {
                return false;
            }
        }
        true
    }
}

/// Luhn checksum over the ASCII digits of `s`; other characters are ignored.
pub fn luhn_valid(s: &str) -> bool {
    let digits: Vec<u32> = s.chars().filter_map(|c| c.to_digit(10)).collect();
    if digits.len() < 2 {
        return false;
    }
    let sum: u32 = digits
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &d)| {
            if i % 2 == 1 {
                let x = d * 2;
                if x > 9 {
                    x - 9
                } else {
                    x
                }
            } else {
                d
            }
        })
        .sum();
    sum % 10 == 0
}

/// ISO 13616 mod-97 check on an IBAN with spaces removed.
pub fn iban_valid(s: &str) -> bool {
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.len() < 15 || compact.len() > 34 || !compact.is_ascii() {
        return false;
    }
    let (head, tail) = compact.split_at(4);
    let mut rem: u32 = 0;
    for c in tail.chars().chain(head.chars()) {
        let v = match c {
            '0'..='9' => c as u32 - '0' as u32,
            'A'..='Z' => c as u32 - 'A' as u32 + 10,
            _ => return false,
        };
        rem = if v >= 10 {
            (rem * 100 + v) % 97
        } else {
            (rem * 10 + v) % 97
        };
    }
    rem == 1
}

fn spec(label: &str, pattern: &str) -> RegexRuleSpec {
    RegexRuleSpec {
        label: EntityType::new(label).unwrap(),
        pattern: pattern.to_string(),
        validator: None,
        context: None,
        digits: None,
    }
}

/// Built-in rule set. Earlier rules win ties between equally long matches.
pub fn default_rules() -> Vec<RegexRuleSpec> {
    vec![
        spec("EMAIL", r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}"),
        RegexRuleSpec {
            validator: Some(Validator::Luhn),
            digits: Some((13, 19)),
            ..spec("CREDIT_CARD", r"\b\d(?:[ \-]?\d){12,18}\b")
        },
        RegexRuleSpec {
            validator: Some(Validator::Iban),
            ..spec("IBAN", r"\b[A-Z]{2}\d{2}(?: ?[A-Z0-9]){11,30}\b")
        },
        spec("DATE", r"\b(?:\d{4}-\d{2}-\d{2}|\d{1,2}/\d{1,2}/\d{4})\b"),
        spec("AMOUNT", r"[$€£¥]\s?\d{1,3}(?:[,.]?\d{3})*(?:[.,]\d{2})?\b"),
        RegexRuleSpec {
            context: Some(ContextRule {
                keywords: vec!["code".into(), "otp".into()],
                window: 12,
            }),
            ..spec("VERIFICATION_CODE", r"\b\d{4,8}\b")
        },
        RegexRuleSpec {
            digits: Some((7, 15)),
            ..spec("PHONE_NUMBER", r"(?:\+|\b)\d(?:[ \-.]?\d){6,14}\b")
        },
    ]
}
