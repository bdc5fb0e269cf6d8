use crate::model::normalize;

/// Collapses every digit run in `text` into a digit-only string. A single
/// separator (space, `-`, `.`, `/`, parentheses) between digits does not break
/// a run, so "123-456" and "(12) 34" yield "123456" and "1234".
pub fn digit_runs(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let is_sep = |c: char| matches!(c, ' ' | '-' | '.' | '/' | '(' | ')');
    let mut runs = Vec::new();
    let mut cur = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_digit() {
            cur.push(c);
        } else if !cur.is_empty()
            && is_sep(c)
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit() || (is_sep(*n) && *n != c && chars.get(i + 2).is_some_and(char::is_ascii_digit)))
        {
            // separator inside a run
        } else if !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
        i += 1;
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs
}

struct Needle {
    text: Vec<char>,
    digits: Option<String>,
}

/// Finds mapped raw values in outgoing strings.
///
/// A value matches when its normalized form occurs with no alphanumeric
/// character glued to either side, or, for mostly-numeric values with at
/// least four digits, when its digits occur inside a collapsed digit run
/// (exactly, for fewer than seven digits).
pub struct LeakScanner {
    needles: Vec<Needle>,
}

impl LeakScanner {
    pub fn new<'a>(values: impl IntoIterator<Item = &'a str>) -> Self {
        let mut needles = Vec::new();
        for v in values {
            let n = normalize(v);
            if n.is_empty() {
                continue;
            }
            let digits: String = n.chars().filter(char::is_ascii_digit).collect();
            let alnum = n.chars().filter(|c| c.is_alphanumeric()).count();
            let mostly_numeric = digits.len() >= 4 && digits.len() * 10 >= alnum * 6;
            needles.push(Needle {
                text: n.chars().collect(),
                digits: mostly_numeric.then_some(digits),
            });
        }
        Self { needles }
    }

    pub fn is_empty(&self) -> bool {
        self.needles.is_empty()
    }

    /// Number of distinct scanner values found in `text`.
    pub fn count_hits(&self, text: &str) -> usize {
        if self.needles.is_empty() || text.is_empty() {
            return 0;
        }
        let hay: Vec<char> = normalize(text).chars().collect();
        let runs = digit_runs(text);
        self.needles
            .iter()
            .filter(|n| contains_bounded(&hay, &n.text) || n.digits.as_ref().is_some_and(|d| digits_hit(&runs, d)))
            .count()
    }

    pub fn any_hit(&self, text: &str) -> bool {
        self.count_hits(text) > 0
    }
}

fn digits_hit(runs: &[String], digits: &str) -> bool {
    if digits.len() >= 7 {
        runs.iter().any(|r| r.contains(digits))
    } else {
        runs.iter().any(|r| r == digits)
    }
}

fn contains_bounded(hay: &[char], needle: &[char]) -> bool {
    if needle.is_empty() || needle.len() > hay.len() {
        return false;
    }
    let glued = |c: char| c.is_alphanumeric();
    (0..=hay.len() - needle.len()).any(|i| {
        hay[i..i + needle.len()] == *needle
            && (i == 0 || !glued(hay[i - 1]) || !glued(needle[0]))
            && (i + needle.len() == hay.len()
                || !glued(hay[i + needle.len()])
                || !glued(needle[needle.len() - 1]))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs() {
        assert_eq!(digit_runs("call 123-456 now"), vec!["123456"]);
        assert_eq!(digit_runs("[100,200][300,400]"), vec!["100", "200", "300", "400"]);
        assert_eq!(digit_runs("(12) 34 5"), vec!["12345"]);
        assert_eq!(digit_runs("a 1. b"), vec!["1"]);
    }

    #[test]
    fn bounded_matching() {
        let s = LeakScanner::new(["Li", "Alice Smith", "12345678", "4829"]);
        assert!(!s.any_hit("android.widget.LinearLayout"));
        assert!(s.any_hit("name: li"));
        assert!(s.any_hit("ALICE   smith"));
        assert!(s.any_hit("tel 1234-5678"));
        assert!(s.any_hit("tel 0012345678"));
        assert!(!s.any_hit("FIRST_NAME#li3xa"));
        assert!(!s.any_hit("48290"));
        assert!(s.any_hit("code 4829."));
        assert_eq!(s.count_hits("li and 12 34 56 78"), 2);
    }
}
