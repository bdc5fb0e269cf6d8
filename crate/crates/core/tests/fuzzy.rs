use anonproxy_core::model::{make_placeholder, MappingTable};
use anonproxy_core::transform::{align_against, fuzzy_similarity, levenshtein};
use anonproxy_core::EntityType;
use proptest::prelude::*;

fn oracle_r(a: &str, b: &str) -> f64 {
    let (a, b) = (a.to_lowercase(), b.to_lowercase());
    let max = a.chars().count().max(b.chars().count());
    if max == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(&a, &b) as f64 / max as f64
}

#[test]
fn threshold_is_strict() {
    let phone = EntityType::new("PHONE_NUMBER").unwrap();
    let mut t = MappingTable::new();
    t.insert("12345678901234567890", &phone);
    // 3 edits over 20 chars: R = 0.85 exactly, declined
    assert_eq!(fuzzy_similarity("12345678901234567xyz", "12345678901234567890"), 0.85);
    assert!(align_against(&t, "12345678901234567xyz", 0.85).is_none());
    let (p, r) = align_against(&t, "123456789012345678yz", 0.85).unwrap();
    assert_eq!(p, make_placeholder("12345678901234567890", &phone));
    assert!((r - 0.9).abs() < 1e-12);
}

#[test]
fn best_match_wins() {
    let name = EntityType::new("PERSON").unwrap();
    let mut t = MappingTable::new();
    t.insert("Margaret Thompson", &name);
    t.insert("Margaret Thomson", &name);
    let (p, r) = align_against(&t, "Margaret Thompsen", 0.85).unwrap();
    assert_eq!(p, make_placeholder("Margaret Thompson", &name));
    assert!(r > 0.9);
}

proptest! {
    #[test]
    fn similarity_matches_oracle(a in "[a-z0-9]{0,20}", b in "[a-z0-9]{0,20}") {
        prop_assert_eq!(levenshtein(&a, &b), strsim::levenshtein(&a, &b));
        prop_assert!((fuzzy_similarity(&a, &b) - oracle_r(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn alignment_agrees_with_oracle(value in "[a-z]{12,24}", edits in prop::collection::vec((0usize..24, "[0-9]"), 0..8)) {
        let mut chars: Vec<char> = value.chars().collect();
        for (i, c) in &edits {
            let i = i % chars.len();
            chars[i] = c.chars().next().unwrap();
        }
        let noisy: String = chars.into_iter().collect();
        let ty = EntityType::new("PERSON").unwrap();
        let mut t = MappingTable::new();
        t.insert(&value, &ty);
        let r = oracle_r(&noisy, &value);
        match align_against(&t, &noisy, 0.85) {
            Some((p, got)) => {
                prop_assert!(r > 0.85);
                prop_assert_eq!(p, make_placeholder(&value, &ty));
                prop_assert!((got - r).abs() < 1e-12);
            }
            None => prop_assert!(r <= 0.85),
        }
    }
}
