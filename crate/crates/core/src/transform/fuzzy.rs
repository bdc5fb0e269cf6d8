use crate::model::{normalize, MappingTable, Placeholder, SessionState};

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - lev(s1, s2) / max(|s1|, |s2|)` on normalized strings; two empty
/// strings compare as 1.0.
pub fn fuzzy_similarity(s1: &str, s2: &str) -> f64 {
    similarity_normalized(&normalize(s1), &normalize(s2))
}

fn similarity_normalized(a: &str, b: &str) -> f64 {
    let la = a.chars().count();
    let lb = b.chars().count();
    let max = la.max(lb);
    if max == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / max as f64
}

/// Best registered value for `text` if its similarity is strictly above
/// `tau`. Ties go to the higher score, then the longer registered value, then
/// the lexicographically smaller placeholder.
pub fn align_against(table: &MappingTable, text: &str, tau: f64) -> Option<(Placeholder, f64)> {
    let needle = normalize(text);
    let n = needle.chars().count();
    if n == 0 {
        return None;
    }
    let mut best: Option<(f64, usize, &str)> = None;
    for (placeholder, entry) in table.entries() {
        let value = normalize(&entry.raw);
        let m = value.chars().count();
        let max = n.max(m);
        // distance is at least the length difference
        if 1.0 - (n.abs_diff(m) as f64 / max as f64) <= tau {
            continue;
        }
        let r = similarity_normalized(&needle, &value);
        if r <= tau {
            continue;
        }
        let better = match best {
            None => true,
            Some((br, bl, bp)) => {
                r > br || (r == br && (m > bl || (m == bl && placeholder < bp)))
            }
        };
        if better {
            best = Some((r, m, placeholder));
        }
    }
    best.map(|(r, _, p)| (Placeholder::parse(p).expect("table keys are canonical"), r))
}

/// Placeholder of the registered value the OCR string aligns with, if any.
pub fn fuzzy_align(session: &SessionState, ocr_text: &str) -> Option<Placeholder> {
    align_against(session.mapping(), ocr_text, session.config().fuzzy_threshold).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EntityType;

    #[test]
    fn similarity_examples() {
        assert_eq!(fuzzy_similarity("same", "same"), 1.0);
        assert!((fuzzy_similarity("Alice", "Alce") - 0.8).abs() < 1e-12);
        assert_eq!(fuzzy_similarity("abc", "xyz"), 0.0);
        assert_eq!(fuzzy_similarity("", ""), 1.0);
        assert_eq!(fuzzy_similarity("ALICE ", "alice"), 1.0);
    }

    #[test]
    fn levenshtein_agrees_with_reference() {
        for (a, b) in [("kitten", "sitting"), ("", "abc"), ("flaw", "lawn"), ("été", "ete"), ("gumbo", "gambol")] {
            assert_eq!(levenshtein(a, b), strsim::levenshtein(a, b), "{a} {b}");
        }
    }

    #[test]
    fn alignment_threshold_is_strict() {
        let mut t = MappingTable::new();
        let ty = EntityType::new("FIRST_NAME").unwrap();
        let (alice, _) = t.insert("Alice", &ty);
        assert_eq!(align_against(&t, "Alice", 0.85).map(|x| x.0), Some(alice.clone()));
        assert_eq!(align_against(&t, "Alce", 0.85), None);
        // exactly at tau is not enough
        assert_eq!(align_against(&t, "Alce", 0.8), None);
        assert_eq!(align_against(&t, "Alce", 0.79).map(|x| x.0), Some(alice));
    }

    #[test]
    fn whitespace_variant_aligns() {
        let mut t = MappingTable::new();
        let ty = EntityType::new("PHONE_NUMBER").unwrap();
        let (p, _) = t.insert("8765 4321", &ty);
        let (got, r) = align_against(&t, "87654321", 0.85).unwrap();
        assert_eq!(got, p);
        assert!((r - (1.0 - 1.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn tie_break_prefers_longer_value() {
        let mut t = MappingTable::new();
        let ty = EntityType::new("FIRST_NAME").unwrap();
        // both at distance 1 from the 10-char needle, so both score 0.9
        let (_short, _) = t.insert("abcdefghi", &ty);
        let (long, _) = t.insert("abcdefghiz", &ty);
        let (got, r) = align_against(&t, "abcdefghij", 0.85).unwrap();
        assert!((r - 0.9).abs() < 1e-12);
        assert_eq!(got, long);
    }
}
