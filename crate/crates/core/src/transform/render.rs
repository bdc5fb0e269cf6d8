use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{ImageFormat, Rgb, RgbImage};

use super::{MaskRegion, TransformError};

pub const MASK_COLOR: Rgb<u8> = Rgb([255, 0, 255]);
const TEXT_COLOR: Rgb<u8> = Rgb([0, 0, 0]);
const PADDING: u32 = 2;
const GLYPH: u32 = 8;
const ELLIPSIS: [u8; 8] = [0, 0, 0, 0, 0, 0, 0x92, 0];

fn glyph(c: char) -> [u8; 8] {
    if c == '…' {
        return ELLIPSIS;
    }
    BASIC_FONTS.get(c).or_else(|| BASIC_FONTS.get('?')).unwrap_or([0; 8])
}

/// Largest integer glyph scale at which `chars` characters fit in the box,
/// or `None` if even scale 1 does not.
fn fit_scale(chars: u32, inner_w: u32, inner_h: u32) -> Option<u32> {
    let fits = |s: u32| GLYPH * s * chars <= inner_w && GLYPH * s <= inner_h;
    if chars == 0 || !fits(1) {
        return None;
    }
    let (mut lo, mut hi) = (1u32, inner_h / GLYPH + 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Text drawn for a region: the placeholder at the largest fitting scale, or
/// a truncated prefix ending in an ellipsis at scale 1.
fn layout(label: &str, inner_w: u32, inner_h: u32) -> Option<(Vec<char>, u32)> {
    let chars: Vec<char> = label.chars().collect();
    if let Some(s) = fit_scale(chars.len() as u32, inner_w, inner_h) {
        return Some((chars, s));
    }
    if inner_h < GLYPH {
        return None;
    }
    let room = (inner_w / GLYPH) as usize;
    if room < 2 {
        return None;
    }
    let mut out: Vec<char> = chars[..room - 1].to_vec();
    out.push('…');
    Some((out, 1))
}

fn draw_text(img: &mut RgbImage, text: &[char], scale: u32, x0: u32, y0: u32) {
    for (k, &c) in text.iter().enumerate() {
        let rows = glyph(c);
        let cx = x0 + k as u32 * GLYPH * scale;
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..GLYPH {
                if bits & (1 << rx) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        img.put_pixel(cx + rx * scale + dx, y0 + ry as u32 * scale + dy, TEXT_COLOR);
                    }
                }
            }
        }
    }
}

/// Paints every region opaque and writes its placeholder on top.
pub fn render_masks(image: &RgbImage, plan: &[MaskRegion]) -> Result<RgbImage, TransformError> {
    let (w, h) = image.dimensions();
    for m in plan {
        if m.bbox.right > w || m.bbox.bottom > h {
            return Err(TransformError::BboxOutOfBounds { bbox: m.bbox, width: w, height: h });
        }
    }
    let mut out = image.clone();
    for m in plan {
        let b = &m.bbox;
        for y in b.top..b.bottom {
            for x in b.left..b.right {
                out.put_pixel(x, y, MASK_COLOR);
            }
        }
        let inner_w = b.width().saturating_sub(2 * PADDING);
        let inner_h = b.height().saturating_sub(2 * PADDING);
        if let Some((text, scale)) = layout(&m.placeholder.to_string(), inner_w, inner_h) {
            let tw = GLYPH * scale * text.len() as u32;
            let th = GLYPH * scale;
            let x0 = b.left + PADDING + (inner_w - tw) / 2;
            let y0 = b.top + PADDING + (inner_h - th) / 2;
            draw_text(&mut out, &text, scale, x0, y0);
        }
    }
    Ok(out)
}

/// PNG in, PNG out.
pub fn render_png(png: &[u8], plan: &[MaskRegion]) -> Result<Vec<u8>, TransformError> {
    let img = image::load_from_memory_with_format(png, ImageFormat::Png)
        .map_err(|e| TransformError::Image(e.to_string()))?
        .to_rgb8();
    let masked = render_masks(&img, plan)?;
    let mut buf = std::io::Cursor::new(Vec::new());
    masked
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| TransformError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}
