//! Leakage metrics over the agent-visible payload corpus.
//!
//! All four metrics score planted values against the normalized corpus
//! (lowercase, trimmed, whitespace collapsed) and lie in `[0, 1]`.
//!
//! * **LR**: fraction of planted values found in the corpus, either as a
//!   normalized substring or, for mostly-numeric values with at least four
//!   digits, through their digit string inside a collapsed digit run.
//! * **MS**: mean over values of `lcs_substring(value, corpus) / |value|`.
//! * **BLEU**: character n-gram BLEU of a corpus window against the value.
//!   `N = min(4, |c|, |r|)`, uniform weights `1/N`, clipped precision
//!   `p_n`, brevity penalty `1` if `|c| > |r|` else `exp(1 - |r|/|c|)`.
//!   Any `p_n = 0` gives 0.
//! * **ROUGE-L**: LCS-subsequence F1, `2PR/(P+R)` with `P = lcs/|c|`,
//!   `R = lcs/|r|`.
//!
//! BLEU and ROUGE-L take, per value, the best score over windows (single
//! whitespace tokens and adjacent token pairs) and average over values.

use std::collections::HashMap;

use anonproxy_core::model::normalize;
use anonproxy_core::transform::digit_runs;

fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

/// Length of the longest common substring.
pub fn lcs_substring(a: &str, b: &str) -> usize {
    let a = chars(a);
    let b = chars(b);
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; a.len() + 1];
    let mut cur = vec![0usize; a.len() + 1];
    let mut best = 0;
    for &cb in &b {
        for (i, &ca) in a.iter().enumerate() {
            cur[i + 1] = if ca == cb { prev[i] + 1 } else { 0 };
            best = best.max(cur[i + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Length of the longest common subsequence.
pub fn lcs_subsequence(a: &str, b: &str) -> usize {
    let a = chars(a);
    let b = chars(b);
    let mut prev = vec![0usize; b.len() + 1];
    for &ca in &a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

fn ngram_counts(s: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut m = HashMap::new();
    for w in s.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let c = chars(candidate);
    let r = chars(reference);
    let big_n = 4.min(c.len()).min(r.len());
    if big_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=big_n {
        let cc = ngram_counts(&c, n);
        let rc = ngram_counts(&r, n);
        let matched: usize = cc.iter().map(|(g, &k)| k.min(*rc.get(g).unwrap_or(&0))).sum();
        if matched == 0 {
            return 0.0;
        }
        let total = c.len() - n + 1;
        log_sum += (matched as f64 / total as f64).ln() / big_n as f64;
    }
    let bp = if c.len() > r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    (bp * log_sum.exp()).clamp(0.0, 1.0)
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let lc = candidate.chars().count();
    let lr = reference.chars().count();
    if lc == 0 || lr == 0 {
        return 0.0;
    }
    let l = lcs_subsequence(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / lc as f64;
    let r = l / lr as f64;
    2.0 * p * r / (p + r)
}

fn mostly_numeric_digits(v: &str) -> Option<String> {
    let digits: String = v.chars().filter(char::is_ascii_digit).collect();
    let alnum = v.chars().filter(|c| c.is_alphanumeric()).count();
    (digits.len() >= 4 && digits.len() * 10 >= alnum * 6).then_some(digits)
}

/// Whether `value` is visible in `corpus` under the leak definition.
pub fn leaks(value: &str, corpus: &str) -> bool {
    let v = normalize(value);
    if v.is_empty() {
        return false;
    }
    if normalize(corpus).contains(&v) {
        return true;
    }
    match mostly_numeric_digits(&v) {
        Some(d) => digit_runs(corpus).iter().any(|r| if d.len() >= 7 { r.contains(&d) } else { r == &d }),
        None => false,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn leakage_rate(corpus: &str, values: &[String]) -> f64 {
    let norm = normalize(corpus);
    let runs = digit_runs(corpus);
    mean(values.iter().map(|v| {
        let v = normalize(v);
        let hit = !v.is_empty()
            && (norm.contains(&v)
                || mostly_numeric_digits(&v).is_some_and(|d| {
                    runs.iter().any(|r| if d.len() >= 7 { r.contains(&d) } else { r == &d })
                }));
        if hit {
            1.0
        } else {
            0.0
        }
    }))
}

/// Longest substring of `value` occurring in `hay`, by probing candidate
/// substrings longest first. Same result as [`lcs_substring`].
pub fn longest_shared_substring(value: &str, hay: &str) -> usize {
    let b: Vec<usize> = value.char_indices().map(|(i, _)| i).chain([value.len()]).collect();
    let n = b.len() - 1;
    for len in (1..=n).rev() {
        if (0..=n - len).any(|s| hay.contains(&value[b[s]..b[s + len]])) {
            return len;
        }
    }
    0
}

pub fn match_score(corpus: &str, values: &[String]) -> f64 {
    let c = normalize(corpus);
    mean(values.iter().map(|v| {
        let v = normalize(v);
        let n = v.chars().count();
        if n == 0 {
            0.0
        } else {
            longest_shared_substring(&v, &c) as f64 / n as f64
        }
    }))
}

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || matches!(c, '"' | '\'' | '<' | '>' | '=' | ',' | ';' | ':' | '{' | '}' | '[' | ']' | '(' | ')')
}

/// Corpus tokens (split on whitespace and markup/JSON punctuation) and
/// adjacent token pairs, normalized.
pub fn windows(corpus: &str) -> Vec<String> {
    let norm = normalize(corpus);
    let toks: Vec<&str> = norm.split(is_delimiter).filter(|t| !t.is_empty()).collect();
    let mut out: Vec<String> = toks.iter().map(|t| t.to_string()).collect();
    out.extend(toks.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    out.sort();
    out.dedup();
    out
}

/// Precomputed reference for repeated scoring against many windows.
struct Reference {
    chars: Vec<char>,
    /// n-grams of length 1..=4.
    grams: [std::collections::HashSet<Vec<char>>; 4],
    /// Bit masks per character for the bit-parallel LCS (references up to 64
    /// characters).
    masks: Option<HashMap<char, u64>>,
}

impl Reference {
    fn new(r: &str) -> Self {
        let chars = chars(r);
        let grams = std::array::from_fn(|k| chars.windows(k + 1).map(<[char]>::to_vec).collect());
        let masks = (chars.len() <= 64).then(|| {
            let mut m: HashMap<char, u64> = HashMap::new();
            for (i, &c) in chars.iter().enumerate() {
                *m.entry(c).or_insert(0) |= 1 << i;
            }
            m
        });
        Self { chars, grams, masks }
    }

    /// Whether the window shares an n-gram of the order BLEU needs.
    fn bleu_possible(&self, w: &[char]) -> bool {
        let n = 4.min(w.len()).min(self.chars.len());
        n > 0 && w.windows(n).any(|g| self.grams[n - 1].contains(g))
    }

    fn lcs(&self, w: &str) -> usize {
        match &self.masks {
            Some(m) => {
                let len = self.chars.len();
                let full = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
                let mut v = u64::MAX;
                for c in w.chars() {
                    let u = v & m.get(&c).copied().unwrap_or(0);
                    v = v.wrapping_add(u) | (v - u);
                }
                (!v & full).count_ones() as usize
            }
            None => lcs_subsequence(w, &self.chars.iter().collect::<String>()),
        }
    }
}

/// ROUGE-L against a prepared reference; equal to [`rouge_l`].
fn rouge_l_prepared(w: &str, r: &Reference) -> f64 {
    let lc = w.chars().count();
    let lr = r.chars.len();
    if lc == 0 || lr == 0 {
        return 0.0;
    }
    let l = r.lcs(w) as f64;
    if l == 0.0 {
        return 0.0;
    }
    2.0 * l / (lc + lr) as f64
}

pub fn corpus_bleu(corpus: &str, values: &[String]) -> f64 {
    let ws: Vec<(String, Vec<char>)> = windows(corpus).into_iter().map(|w| { let c = chars(&w); (w, c) }).collect();
    mean(values.iter().map(|v| {
        let v = normalize(v);
        let r = Reference::new(&v);
        ws.iter()
            .filter(|(_, c)| r.bleu_possible(c))
            .map(|(w, _)| bleu(w, &v))
            .fold(0.0, f64::max)
    }))
}

pub fn corpus_rouge_l(corpus: &str, values: &[String]) -> f64 {
    let ws = windows(corpus);
    mean(values.iter().map(|v| {
        let r = Reference::new(&normalize(v));
        ws.iter().map(|w| rouge_l_prepared(w, &r)).fold(0.0, f64::max)
    }))
}
