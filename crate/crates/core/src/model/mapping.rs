use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::entity::{normalize, EntityType};
use super::placeholder::{make_placeholder, make_salted_placeholder, Placeholder};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("malformed placeholder {0:?}")]
    Malformed(String),
    #[error("unknown placeholder {0}")]
    Unknown(String),
}

/// Reverse-map record: the first-seen raw form of a value and its type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub raw: String,
    pub etype: EntityType,
}

/// Session-scoped bidirectional store between `(normalized value, type)` and
/// canonical placeholder strings. Append-only.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct MappingTable {
    forward: BTreeMap<(String, EntityType), Placeholder>,
    reverse: BTreeMap<String, MappingEntry>,
    /// Placeholder strings in insertion order.
    order: Vec<String>,
    accesses: AtomicU64,
}

impl Clone for MappingTable {
    fn clone(&self) -> Self {
        Self {
            forward: self.forward.clone(),
            reverse: self.reverse.clone(),
            order: self.order.clone(),
            accesses: AtomicU64::new(self.accesses.load(Ordering::Relaxed)),
        }
    }
}

impl MappingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    /// Number of lookups/resolutions served so far.
    pub fn access_count(&self) -> u64 {
        self.accesses.load(Ordering::Relaxed)
    }

    fn touch(&self) {
        self.accesses.fetch_add(1, Ordering::Relaxed);
    }

    pub fn lookup(&self, value: &str, etype: &EntityType) -> Option<Placeholder> {
        self.touch();
        self.forward
            .get(&(normalize(value), etype.clone()))
            .cloned()
    }

    pub fn resolve(&self, placeholder: &str) -> Result<&MappingEntry, MappingError> {
        self.touch();
        Placeholder::parse(placeholder).map_err(|_| MappingError::Malformed(placeholder.to_string()))?;
        self.reverse
            .get(placeholder)
            .ok_or_else(|| MappingError::Unknown(placeholder.to_string()))
    }

    /// Returns the existing placeholder for `(value, etype)` or creates one.
    /// The boolean is true when a new entry was inserted.
    ///
    /// A canonical placeholder already owned by a different key is re-hashed
    /// with the salts "1", "2", ... until it is free.
    pub fn insert(&mut self, value: &str, etype: &EntityType) -> (Placeholder, bool) {
        if let Some(p) = self.lookup(value, etype) {
            return (p, false);
        }
        let mut candidate = make_placeholder(value, etype);
        let mut salt = 0u32;
        while self.reverse.contains_key(&candidate.to_string()) {
            salt += 1;
            candidate = make_salted_placeholder(value, etype, Some(&salt.to_string()));
        }
        self.forward
            .insert((normalize(value), etype.clone()), candidate.clone());
        self.record_reverse(&candidate, value, etype);
        (candidate, true)
    }

    /// Records a reverse-only entry without keying `forward`. This is the
    /// per-occurrence hashing ablation: resolution still works but nothing
    /// is reused.
    pub fn insert_unkeyed(&mut self, value: &str, etype: &EntityType, salt: &str) -> (Placeholder, bool) {
        let mut candidate = make_salted_placeholder(value, etype, Some(salt));
        let mut retry = 0u32;
        loop {
            match self.reverse.get(&candidate.to_string()) {
                None => break,
                Some(e) if normalize(&e.raw) == normalize(value) && &e.etype == etype => {
                    return (candidate, false)
                }
                Some(_) => {
                    retry += 1;
                    candidate =
                        make_salted_placeholder(value, etype, Some(&format!("{salt}{retry}")));
                }
            }
        }
        self.record_reverse(&candidate, value, etype);
        (candidate, true)
    }

    fn record_reverse(&mut self, p: &Placeholder, raw: &str, etype: &EntityType) {
        let key = p.to_string();
        self.order.push(key.clone());
        self.reverse.insert(
            key,
            MappingEntry {
                raw: raw.to_string(),
                etype: etype.clone(),
            },
        );
    }

    /// `(placeholder, entry)` pairs in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &MappingEntry)> {
        self.order
            .iter()
            .map(move |k| (k.as_str(), &self.reverse[k]))
    }

    pub fn raw_values(&self) -> impl Iterator<Item = &str> {
        self.reverse.values().map(|e| e.raw.as_str())
    }
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    forward: Vec<ForwardRepr>,
    reverse: BTreeMap<String, MappingEntry>,
    order: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ForwardRepr {
    value: String,
    etype: EntityType,
    placeholder: Placeholder,
}

impl From<MappingTable> for TableRepr {
    fn from(t: MappingTable) -> Self {
        TableRepr {
            forward: t
                .forward
                .into_iter()
                .map(|((value, etype), placeholder)| ForwardRepr {
                    value,
                    etype,
                    placeholder,
                })
                .collect(),
            reverse: t.reverse,
            order: t.order,
        }
    }
}

impl TryFrom<TableRepr> for MappingTable {
    type Error = String;

    fn try_from(r: TableRepr) -> Result<Self, Self::Error> {
        if r.order.len() != r.reverse.len() || r.order.iter().any(|k| !r.reverse.contains_key(k)) {
            return Err("mapping table order does not match reverse map".into());
        }
        let mut forward = BTreeMap::new();
        for f in r.forward {
            let key = f.placeholder.to_string();
            match r.reverse.get(&key) {
                Some(e) if e.etype == f.etype && normalize(&e.raw) == f.value => {}
                _ => return Err(format!("forward entry {key} has no matching reverse entry")),
            }
            forward.insert((f.value, f.etype), f.placeholder);
        }
        Ok(MappingTable {
            forward,
            reverse: r.reverse,
            order: r.order,
            accesses: AtomicU64::new(0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ty(s: &str) -> EntityType {
        EntityType::new(s).unwrap()
    }

    #[test]
    fn read_after_write_and_normalization() {
        let mut t = MappingTable::new();
        let (p, created) = t.insert("Alice", &ty("FIRST_NAME"));
        assert!(created);
        assert_eq!(t.lookup("Alice", &ty("FIRST_NAME")), Some(p.clone()));
        assert_eq!(t.lookup("alice ", &ty("FIRST_NAME")), Some(p.clone()));
        assert_eq!(t.lookup("Alice", &ty("LAST_NAME")), None);
        let (again, created) = t.insert("ALICE", &ty("FIRST_NAME"));
        assert_eq!(again, p);
        assert!(!created);
        assert_eq!(t.len(), 1);
        // reverse keeps the first-seen raw form
        assert_eq!(t.resolve(&p.to_string()).unwrap().raw, "Alice");
    }

    #[test]
    fn resolve_errors() {
        let t = MappingTable::new();
        assert_eq!(
            t.resolve("PHONE_NUMBER#zzzzz"),
            Err(MappingError::Unknown("PHONE_NUMBER#zzzzz".into()))
        );
        assert_eq!(
            t.resolve("phone#ab"),
            Err(MappingError::Malformed("phone#ab".into()))
        );
    }

    #[test]
    fn forced_collision_gets_salted_suffix() {
        let mut t = MappingTable::new();
        let etype = ty("PHONE_NUMBER");
        let natural = make_placeholder("222", &etype);
        // plant a foreign owner of the natural placeholder
        t.record_reverse(&natural, "111", &etype);
        let (p, created) = t.insert("222", &etype);
        assert!(created);
        assert_eq!(p, make_salted_placeholder("222", &etype, Some("1")));
        assert_eq!(t.resolve(&p.to_string()).unwrap().raw, "222");
        assert_eq!(t.lookup("222", &etype), Some(p));
    }

    #[test]
    fn json_roundtrip_preserves_table() {
        let mut t = MappingTable::new();
        t.insert("12345678", &ty("PHONE_NUMBER"));
        t.insert("Xu", &ty("LAST_NAME"));
        let json = serde_json::to_string(&t).unwrap();
        let back: MappingTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(
            back.lookup("xu", &ty("LAST_NAME")),
            t.lookup("Xu", &ty("LAST_NAME"))
        );
        let order: Vec<_> = back.entries().map(|(k, _)| k.to_string()).collect();
        let orig: Vec<_> = t.entries().map(|(k, _)| k.to_string()).collect();
        assert_eq!(order, orig);
    }
}
