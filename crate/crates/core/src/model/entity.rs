use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Canonical key form of a raw value: case-folded, surrounding whitespace
/// stripped and internal whitespace runs collapsed to a single space.
pub fn normalize(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for (i, word) in value.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid entity type label {0:?}: expected [A-Z][A-Z0-9_]*")]
pub struct EntityTypeError(pub String);

/// Entity type label such as `PHONE_NUMBER` or `FIRST_NAME`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityType(String);

impl EntityType {
    pub fn new(label: impl Into<String>) -> Result<Self, EntityTypeError> {
        let label = label.into();
        if is_label(&label) {
            Ok(Self(label))
        } else {
            Err(EntityTypeError(label))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub(crate) fn is_label(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('A'..='Z'))
        && chars.all(|c| matches!(c, 'A'..='Z' | '0'..='9' | '_'))
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for EntityType {
    type Err = EntityTypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl Serialize for EntityType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for EntityType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::new(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoundsError {
    #[error("degenerate bounding box [{0},{1}][{2},{3}]")]
    Degenerate(i64, i64, i64, i64),
    #[error("malformed bounds string {0:?}")]
    Malformed(String),
}

/// Pixel rectangle, right/bottom exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl BoundingBox {
    pub fn new(left: i64, top: i64, right: i64, bottom: i64) -> Result<Self, BoundsError> {
        if left < 0 || top < 0 || left >= right || top >= bottom || right > u32::MAX as i64 || bottom > u32::MAX as i64 {
            return Err(BoundsError::Degenerate(left, top, right, bottom));
        }
        Ok(Self {
            left: left as u32,
            top: top as u32,
            right: right as u32,
            bottom: bottom as u32,
        })
    }

    /// Parses the Android `bounds="[l,t][r,b]"` attribute form.
    pub fn parse_android(s: &str) -> Result<Self, BoundsError> {
        let malformed = || BoundsError::Malformed(s.to_string());
        let t = s.trim();
        let inner = t
            .strip_prefix('[')
            .and_then(|t| t.strip_suffix(']'))
            .ok_or_else(malformed)?;
        let (a, b) = inner.split_once("][").ok_or_else(malformed)?;
        let pair = |p: &str| -> Result<(i64, i64), BoundsError> {
            let (x, y) = p.split_once(',').ok_or_else(malformed)?;
            Ok((
                x.trim().parse().map_err(|_| malformed())?,
                y.trim().parse().map_err(|_| malformed())?,
            ))
        };
        let (l, t) = pair(a)?;
        let (r, bm) = pair(b)?;
        Self::new(l, t, r, bm)
    }

    pub fn width(&self) -> u32 {
        self.right - self.left
    }

    pub fn height(&self) -> u32 {
        self.bottom - self.top
    }

    /// Integer centroid, floor-rounded.
    pub fn centroid(&self) -> (u32, u32) {
        (
            ((self.left as u64 + self.right as u64) / 2) as u32,
            ((self.top as u64 + self.bottom as u64) / 2) as u32,
        )
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.left <= other.left
            && self.top <= other.top
            && self.right >= other.right
            && self.bottom >= other.bottom
    }

    pub fn vertical_overlap(&self, other: &BoundingBox) -> u32 {
        self.bottom
            .min(other.bottom)
            .saturating_sub(self.top.max(other.top))
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}][{},{}]", self.left, self.top, self.right, self.bottom)
    }
}

// JSON form is `[l, t, r, b]`.
impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.left, self.top, self.right, self.bottom].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [l, t, r, b] = <[i64; 4]>::deserialize(deserializer)?;
        Self::new(l, t, r, b).map_err(serde::de::Error::custom)
    }
}
