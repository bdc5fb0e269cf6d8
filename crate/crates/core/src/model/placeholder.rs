use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::entity::{is_label, EntityType};

pub const SUFFIX_LEN: usize = 5;

const BASE36: &[u8; 36] = b"0123456789abcdefghijklmnopqrstuvwxyz";

static PLACEHOLDER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Z][A-Z0-9_]*#[a-z0-9]{5}").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed placeholder {0:?}")]
pub struct PlaceholderError(pub String);

/// Type-preserving anonymized token `TYPE#xxxxx`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Placeholder {
    etype: EntityType,
    suffix: String,
}

impl Placeholder {
    pub fn parse(s: &str) -> Result<Self, PlaceholderError> {
        let err = || PlaceholderError(s.to_string());
        let (label, suffix) = s.split_once('#').ok_or_else(err)?;
        if !is_label(label)
            || suffix.len() != SUFFIX_LEN
            || !suffix.bytes().all(|b| b.is_ascii_digit() || b.is_ascii_lowercase())
        {
            return Err(err());
        }
        Ok(Self {
            etype: EntityType::new(label).map_err(|_| err())?,
            suffix: suffix.to_string(),
        })
    }

    pub fn etype(&self) -> &EntityType {
        &self.etype
    }

    pub fn suffix(&self) -> &str {
        &self.suffix
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.etype, self.suffix)
    }
}

impl FromStr for Placeholder {
    type Err = PlaceholderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for Placeholder {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Placeholder {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// `TYPE#` followed by the leading five base-36 digits of
/// SHA-256(UTF-8(value) ‖ UTF-8(TYPE)).
pub fn make_placeholder(value: &str, etype: &EntityType) -> Placeholder {
    make_salted_placeholder(value, etype, None)
}

/// Same as [`make_placeholder`] with an extra salt string appended to the
/// hashed bytes. Used for collision retries and the per-step ablation.
pub fn make_salted_placeholder(value: &str, etype: &EntityType, salt: Option<&str>) -> Placeholder {
    let mut hasher = Sha256::new();
    hasher.update(value.as_bytes());
    hasher.update(etype.as_str().as_bytes());
    if let Some(salt) = salt {
        hasher.update(salt.as_bytes());
    }
    let digest: [u8; 32] = hasher.finalize().into();
    Placeholder {
        etype: etype.clone(),
        suffix: base36_prefix(&digest, SUFFIX_LEN),
    }
}

/// Leading `n` digits of the big-endian integer `bytes` written in base 36.
fn base36_prefix(bytes: &[u8; 32], n: usize) -> String {
    // eight big-endian u32 limbs, repeatedly divided by 36
    let mut limbs = [0u32; 8];
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        limbs[i] = u32::from_be_bytes(chunk.try_into().unwrap());
    }
    let mut digits = Vec::with_capacity(50);
    while limbs.iter().any(|&l| l != 0) {
        let mut rem = 0u64;
        for limb in limbs.iter_mut() {
            let cur = (rem << 32) | *limb as u64;
            *limb = (cur / 36) as u32;
            rem = cur % 36;
        }
        digits.push(BASE36[rem as usize]);
    }
    while digits.len() < n {
        digits.push(b'0');
    }
    digits.iter().rev().take(n).map(|&b| b as char).collect()
}

/// A placeholder-shaped substring found by [`scan_placeholders`]; offsets are
/// byte offsets into the scanned text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaceholderMatch<'a> {
    pub start: usize,
    pub end: usize,
    pub text: &'a str,
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'#'
}

/// Finds every maximal `TYPE#xxxxx` occurrence that is not glued to
/// surrounding `[A-Za-z0-9_#]` characters.
pub fn scan_placeholders(text: &str) -> Vec<PlaceholderMatch<'_>> {
    let bytes = text.as_bytes();
    PLACEHOLDER_RE
        .find_iter(text)
        .filter(|m| {
            let before_ok = m.start() == 0 || !is_word_byte(bytes[m.start() - 1]);
            let after_ok = m.end() == bytes.len() || !is_word_byte(bytes[m.end()]);
            before_ok && after_ok
        })
        .map(|m| PlaceholderMatch {
            start: m.start(),
            end: m.end(),
            text: m.as_str(),
        })
        .collect()
}
