use super::{lookup_or_create, MaskRegion, OcrToken, TransformError};
use crate::detect::{detect, DetectorKind, NerAdapter, Source};
use crate::model::{Ablation, BoundingBox, Placeholder, SessionState};

use super::fuzzy::fuzzy_align;

/// Result of the OCR pass: mask regions plus, per input token, the char
/// ranges that remain visible.
pub(crate) struct OcrPass {
    pub regions: Vec<MaskRegion>,
    pub visible: Vec<String>,
}

#[derive(Clone)]
struct TokenState {
    chars: Vec<char>,
    /// Masked char ranges; `(0, len)` when the whole box is covered.
    masked: Vec<(usize, usize)>,
}

impl TokenState {
    fn fully_masked(&self) -> bool {
        self.masked.iter().any(|&(s, e)| s == 0 && e >= self.chars.len())
    }

    fn visible_text(&self) -> String {
        let mut covered = vec![false; self.chars.len()];
        for &(s, e) in &self.masked {
            for c in covered.iter_mut().take(e).skip(s) {
                *c = true;
            }
        }
        let mut out = String::new();
        for (c, hidden) in self.chars.iter().zip(covered) {
            out.push(if hidden { ' ' } else { *c });
        }
        out.trim().to_string()
    }
}

/// Slice of `bbox` covering chars `[start, end)` of a `len`-char token,
/// assuming uniform glyph width.
fn char_slice_box(bbox: &BoundingBox, start: usize, end: usize, len: usize) -> BoundingBox {
    let w = bbox.width() as u64;
    let len = len.max(1) as u64;
    let l = bbox.left as u64 + w * start as u64 / len;
    let r = (bbox.left as u64 + (w * end as u64).div_ceil(len)).max(l + 1);
    BoundingBox {
        left: l as u32,
        top: bbox.top,
        right: (r as u32).min(bbox.right),
        bottom: bbox.bottom,
    }
}

/// Groups token indices into text lines: a token joins a line when its
/// vertical overlap with the line's first token is at least half the smaller
/// height. Members are ordered left to right.
fn group_lines(tokens: &[OcrToken], eligible: &[usize]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = eligible.to_vec();
    order.sort_by_key(|&i| (tokens[i].bbox.top, tokens[i].bbox.left, i));
    let mut lines: Vec<Vec<usize>> = Vec::new();
    for i in order {
        let b = &tokens[i].bbox;
        let joined = lines.iter_mut().find(|line| {
            let a = &tokens[line[0]].bbox;
            let min_h = a.height().min(b.height());
            a.vertical_overlap(b) * 2 >= min_h
        });
        match joined {
            Some(line) => line.push(i),
            None => lines.push(vec![i]),
        }
    }
    for line in &mut lines {
        line.sort_by_key(|&i| (tokens[i].bbox.left, i));
    }
    lines
}

pub(crate) fn ocr_pass(
    session: &mut SessionState,
    tokens: &[OcrToken],
    adapter: &dyn NerAdapter,
) -> Result<OcrPass, TransformError> {
    let passthrough = session.config().ablation == Ablation::RawPassthrough;
    let align = session.config().ablation == Ablation::None;
    let emit_len = session.config().emit_text_length;
    let mut state: Vec<TokenState> = tokens
        .iter()
        .map(|t| TokenState {
            chars: t.text.chars().collect(),
            masked: Vec::new(),
        })
        .collect();
    let mut regions = Vec::new();
    let region = |bbox: BoundingBox, placeholder: Placeholder, len: usize| MaskRegion {
        bbox,
        placeholder,
        original_text_length: emit_len.then_some(len),
    };

    let eligible: Vec<usize> = (0..tokens.len())
        .filter(|&i| !tokens[i].text.trim().is_empty())
        .collect();
    for &i in &eligible {
        session.stats.ocr.chars_total += state[i].chars.len() as u64;
    }
    if passthrough {
        let visible = state.iter().map(TokenState::visible_text).collect();
        return Ok(OcrPass { regions, visible });
    }

    for &i in &eligible {
        let token = &tokens[i];
        if session.whitelist().contains(&token.text) {
            continue;
        }
        if align {
            if let Some(p) = fuzzy_align(session, &token.text) {
                let n = state[i].chars.len();
                regions.push(region(token.bbox, p, n));
                state[i].masked.push((0, n));
                session.stats.ocr.entities += 1;
                continue;
            }
        }
        let spans = detect(session, &token.text, Source::Ocr, adapter)?;
        let n = state[i].chars.len();
        let single = spans.len() == 1;
        for span in spans {
            let p = lookup_or_create(session, &span.value, &span.etype);
            if single {
                regions.push(region(token.bbox, p, n));
                state[i].masked.push((0, n));
            } else {
                regions.push(region(char_slice_box(&token.bbox, span.start, span.end, n), p, span.len()));
                state[i].masked.push((span.start, span.end));
            }
            session.stats.ocr.entities += 1;
        }
    }

    // Line chunks catch entities split across several OCR tokens.
    for line in group_lines(tokens, &eligible) {
        let open: Vec<usize> = line
            .iter()
            .copied()
            .filter(|&i| !state[i].fully_masked())
            .collect();
        if line.len() < 2 || open.is_empty() {
            continue;
        }
        let mut text = String::new();
        let mut offsets = Vec::with_capacity(line.len());
        for (k, &i) in line.iter().enumerate() {
            if k > 0 {
                text.push(' ');
            }
            let start = text.chars().count();
            text.push_str(&tokens[i].text);
            offsets.push((i, start, start + state[i].chars.len()));
        }
        let mut hits: Vec<(usize, usize, Placeholder, DetectorKind)> = Vec::new();
        let aligned = if align { fuzzy_align(session, &text) } else { None };
        if let Some(p) = aligned {
            if !session.whitelist().contains(&text) {
                hits.push((0, text.chars().count(), p, DetectorKind::MappingHit));
            }
        } else {
            for span in detect(session, &text, Source::Ocr, adapter)? {
                // a span inside one token only counts if the line context
                // found something the per-token pass did not
                if let Some(&(i, ts, _)) = offsets.iter().find(|&&(_, s, e)| span.start >= s && span.end <= e) {
                    let (a, b) = (span.start - ts, span.end - ts);
                    if state[i].masked.iter().any(|&(ms, me)| ms < b && a < me) {
                        continue;
                    }
                    let n = state[i].chars.len();
                    let p = lookup_or_create(session, &span.value, &span.etype);
                    if a == 0 && b == n {
                        regions.push(region(tokens[i].bbox, p, n));
                    } else {
                        regions.push(region(char_slice_box(&tokens[i].bbox, a, b, n), p, b - a));
                    }
                    state[i].masked.push((a, b));
                    session.stats.ocr.entities += 1;
                    continue;
                }
                let p = lookup_or_create(session, &span.value, &span.etype);
                hits.push((span.start, span.end, p, span.detector));
            }
        }
        for (s, e, p, _) in hits {
            let mut touched = false;
            for &(i, ts, te) in &offsets {
                if ts < e && s < te && !state[i].fully_masked() {
                    let n = state[i].chars.len();
                    regions.push(region(tokens[i].bbox, p.clone(), n));
                    state[i].masked.push((0, n));
                    touched = true;
                }
            }
            if touched {
                session.stats.ocr.entities += 1;
            }
        }
    }

    for (i, s) in state.iter().enumerate() {
        if eligible.contains(&i) {
            let covered: usize = if s.fully_masked() {
                s.chars.len()
            } else {
                s.masked.iter().map(|(a, b)| b - a).sum()
            };
            session.stats.ocr.chars_anonymized += covered as u64;
        }
    }
    let visible = state.iter().map(TokenState::visible_text).collect();
    Ok(OcrPass { regions, visible })
}
