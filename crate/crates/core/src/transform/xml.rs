use std::collections::BTreeMap;

use quick_xml::events::attributes::Attribute;
use quick_xml::events::{BytesCData, BytesStart, BytesText, Event};
use quick_xml::{Reader, Writer};

use super::{anonymize_text, TransformError, UiElement};
use crate::detect::{NerAdapter, Source};
use crate::model::{BoundingBox, BoundsError, SessionState};

/// Attributes copied into the element list handed to the agent.
const ELEMENT_ATTRIBUTES: &[&str] = &["text", "hint", "content-desc", "resource-id", "class"];

const INTERACTION_FLAGS: &[&str] = &["clickable", "long-clickable", "scrollable", "editable"];

fn xml_err(reader: &Reader<&[u8]>, e: impl std::fmt::Display) -> TransformError {
    TransformError::XmlParse {
        position: reader.buffer_position() as usize,
        message: e.to_string(),
    }
}

/// Anonymizes scanned text attributes and text nodes of a view hierarchy and
/// extracts the indexed interactable elements (document order).
pub fn anonymize_xml(
    session: &mut SessionState,
    xml: &str,
    adapter: &dyn NerAdapter,
) -> Result<(String, Vec<UiElement>), TransformError> {
    let scanned: Vec<String> = session.config().scanned_attributes().map(str::to_string).collect();
    let interactable_classes = session.config().interactable_classes.clone();
    session.stats.xml.chars_total += xml.chars().count() as u64;

    let mut reader = Reader::from_str(xml);
    reader.config_mut().check_end_names = true;
    let mut writer = Writer::new(Vec::with_capacity(xml.len()));
    let mut elements = Vec::new();
    let mut depth: usize = 0;
    let mut roots = 0;

    loop {
        let event = reader.read_event().map_err(|e| xml_err(&reader, e))?;
        match event {
            Event::Start(start) => {
                if depth == 0 {
                    roots += 1;
                }
                depth += 1;
                let out = rewrite_element(session, &reader, &start, &scanned, &interactable_classes, &mut elements, adapter)?;
                writer.write_event(Event::Start(out)).map_err(|e| xml_err(&reader, e))?;
            }
            Event::Empty(start) => {
                if depth == 0 {
                    roots += 1;
                }
                let out = rewrite_element(session, &reader, &start, &scanned, &interactable_classes, &mut elements, adapter)?;
                writer.write_event(Event::Empty(out)).map_err(|e| xml_err(&reader, e))?;
            }
            Event::End(end) => {
                depth = depth.saturating_sub(1);
                writer.write_event(Event::End(end)).map_err(|e| xml_err(&reader, e))?;
            }
            Event::Text(text) => {
                let raw = text.unescape().map_err(|e| xml_err(&reader, e))?;
                if raw.trim().is_empty() {
                    writer.write_event(Event::Text(text)).map_err(|e| xml_err(&reader, e))?;
                } else {
                    let masked = anonymize_text(session, &raw, Source::Xml, adapter)?;
                    writer
                        .write_event(Event::Text(BytesText::new(&masked)))
                        .map_err(|e| xml_err(&reader, e))?;
                }
            }
            Event::CData(data) => {
                let raw = String::from_utf8_lossy(&data).into_owned();
                let masked = anonymize_text(session, &raw, Source::Xml, adapter)?;
                writer
                    .write_event(Event::CData(BytesCData::new(masked)))
                    .map_err(|e| xml_err(&reader, e))?;
            }
            Event::Eof => break,
            other => writer.write_event(other).map_err(|e| xml_err(&reader, e))?,
        }
    }
    if depth != 0 {
        return Err(xml_err(&reader, "unclosed element at end of document"));
    }
    if roots == 0 {
        return Err(xml_err(&reader, "document has no root element"));
    }
    let out = String::from_utf8(writer.into_inner()).map_err(|e| xml_err(&reader, e))?;
    Ok((out, elements))
}

fn rewrite_element(
    session: &mut SessionState,
    reader: &Reader<&[u8]>,
    start: &BytesStart<'_>,
    scanned: &[String],
    interactable_classes: &[String],
    elements: &mut Vec<UiElement>,
    adapter: &dyn NerAdapter,
) -> Result<BytesStart<'static>, TransformError> {
    let name = std::str::from_utf8(start.name().as_ref())
        .map_err(|e| xml_err(reader, e))?
        .to_string();
    let mut out = BytesStart::new(name);
    let mut kept: BTreeMap<String, String> = BTreeMap::new();
    let mut flagged = false;
    let mut bounds: Option<String> = None;

    for attr in start.attributes() {
        let attr = attr.map_err(|e| xml_err(reader, e))?;
        let key = std::str::from_utf8(attr.key.as_ref())
            .map_err(|e| xml_err(reader, e))?
            .to_string();
        let value = attr.unescape_value().map_err(|e| xml_err(reader, e))?.into_owned();
        if scanned.iter().any(|s| s == &key) {
            let masked = anonymize_text(session, &value, Source::Xml, adapter)?;
            out.push_attribute((key.as_str(), masked.as_str()));
            if ELEMENT_ATTRIBUTES.contains(&key.as_str()) || scanned.contains(&key) {
                kept.insert(key, masked);
            }
        } else {
            out.push_attribute(Attribute {
                key: quick_xml::name::QName(key.as_bytes()),
                value: attr.value.clone(),
            });
            if INTERACTION_FLAGS.contains(&key.as_str()) && value == "true" {
                flagged = true;
            }
            if key == "bounds" {
                bounds = Some(value.clone());
            }
            if key == "class" && interactable_classes.iter().any(|c| c == &value) {
                flagged = true;
            }
            if ELEMENT_ATTRIBUTES.contains(&key.as_str()) {
                kept.insert(key, value);
            }
        }
    }

    if flagged {
        let Some(b) = bounds else {
            return Err(TransformError::Bounds(BoundsError::Malformed("<missing>".into())));
        };
        match BoundingBox::parse_android(&b) {
            Ok(bbox) => elements.push(UiElement {
                index: elements.len(),
                bbox,
                attributes: kept,
                interactable: true,
            }),
            // zero-area nodes cannot be targeted; they are left out of the index
            Err(BoundsError::Degenerate(..)) => {}
            Err(e) => return Err(TransformError::Bounds(e)),
        }
    }
    Ok(out.into_owned())
}

/// Attribute values (except `bounds` and `index`) and text nodes of an XML
/// document: the content-bearing strings a leak scan must inspect. Unparsable
/// input is returned whole.
pub fn xml_content_strings(xml: &str) -> Vec<String> {
    let mut reader = Reader::from_str(xml);
    let mut out = Vec::new();
    loop {
        match reader.read_event() {
            Ok(Event::Start(e)) | Ok(Event::Empty(e)) => {
                for attr in e.attributes().flatten() {
                    let key = attr.key.as_ref();
                    if key == b"bounds" || key == b"index" {
                        continue;
                    }
                    match attr.unescape_value() {
                        Ok(v) => out.push(v.into_owned()),
                        Err(_) => out.push(String::from_utf8_lossy(&attr.value).into_owned()),
                    }
                }
            }
            Ok(Event::Text(t)) => {
                if let Ok(s) = t.unescape() {
                    if !s.trim().is_empty() {
                        out.push(s.into_owned());
                    }
                }
            }
            Ok(Event::CData(c)) => out.push(String::from_utf8_lossy(&c).into_owned()),
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(_) => return vec![xml.to_string()],
        }
    }
    out
}
