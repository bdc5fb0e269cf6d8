//! Consistency auditing over entity observations.

use std::collections::BTreeMap;

use anonproxy_core::Source;
use serde::{Deserialize, Serialize};

/// How one planted entity showed up in one agent-visible output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityObservation {
    /// Index into the scenario's planted entities.
    pub entity: usize,
    /// Position in emission order (instruction 0, then XML and OCR per step).
    pub order: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    pub modality: Source,
    /// The raw value was visible.
    pub raw: bool,
    /// Placeholders standing for this entity in the output.
    pub placeholders: Vec<String>,
    /// The value is licensed to stay raw for this session.
    #[serde(default)]
    pub whitelisted: bool,
}

impl EntityObservation {
    fn masked(&self) -> bool {
        !self.raw && !self.placeholders.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationClass {
    /// Masked earlier, raw later.
    #[serde(rename = "A.1")]
    A1,
    /// Raw earlier, masked later.
    #[serde(rename = "A.2")]
    A2,
    /// Two placeholders for one value.
    #[serde(rename = "B")]
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Point {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    pub modality: Source,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub class: ViolationClass,
    pub entity: usize,
    pub first: Point,
    pub second: Point,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub placeholders: Vec<String>,
}

fn point(o: &EntityObservation) -> Point {
    Point { step: o.step, modality: o.modality }
}

/// At most one violation per entity and class: A.1 for the first raw
/// emission after a masked one, A.2 for the first masked emission after a raw
/// one (skipped for whitelisted values), B when an entity collected more than
/// one distinct placeholder of the same type.
pub fn consistency_audit(observations: &[EntityObservation]) -> Vec<Violation> {
    let mut by_entity: BTreeMap<usize, Vec<&EntityObservation>> = BTreeMap::new();
    for o in observations {
        by_entity.entry(o.entity).or_default().push(o);
    }
    let mut out = Vec::new();
    for (entity, mut obs) in by_entity {
        obs.sort_by_key(|o| o.order);

        let first_masked = obs.iter().position(|o| o.masked());
        if let Some(i) = first_masked {
            if let Some(j) = obs[i + 1..].iter().find(|o| o.raw) {
                out.push(Violation {
                    class: ViolationClass::A1,
                    entity,
                    first: point(obs[i]),
                    second: point(j),
                    placeholders: Vec::new(),
                });
            }
        }

        let first_raw = obs.iter().position(|o| o.raw && !o.whitelisted);
        if let Some(i) = first_raw {
            if let Some(j) = obs[i + 1..].iter().find(|o| o.masked()) {
                out.push(Violation {
                    class: ViolationClass::A2,
                    entity,
                    first: point(obs[i]),
                    second: point(j),
                    placeholders: Vec::new(),
                });
            }
        }

        // placeholders grouped by the type they encode
        let mut by_type: BTreeMap<&str, (Vec<&str>, &EntityObservation, Option<&EntityObservation>)> = BTreeMap::new();
        for o in &obs {
            for p in &o.placeholders {
                let ty = p.split('#').next().unwrap_or("");
                let e = by_type.entry(ty).or_insert((Vec::new(), o, None));
                if !e.0.contains(&p.as_str()) {
                    e.0.push(p);
                    if e.0.len() == 2 {
                        e.2 = Some(o);
                    }
                }
            }
        }
        for (_, (seen, a, b)) in by_type {
            if let Some(b) = b {
                let mut placeholders: Vec<String> = seen.into_iter().map(str::to_string).collect();
                placeholders.sort();
                out.push(Violation {
                    class: ViolationClass::B,
                    entity,
                    first: point(a),
                    second: point(b),
                    placeholders,
                });
            }
        }
    }
    out
}

pub fn count(violations: &[Violation], class: ViolationClass) -> usize {
    violations.iter().filter(|v| v.class == class).count()
}
