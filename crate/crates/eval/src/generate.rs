//! Seeded synthetic scenarios. Every value is generated from templates; no
//! real personal data is involved.

use std::collections::BTreeSet;

use anonproxy_core::model::normalize;
use anonproxy_core::proxy::Capture;
use anonproxy_core::{BoundingBox, EntityType, OcrToken, Source};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{PlantedEntity, Scenario, COMPUTE_PREFIX, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModalitySkew {
    /// Entities in the instruction and on screen.
    #[default]
    Balanced,
    /// Entities named in the instruction and shown restyled on screen.
    InstructionOnly,
    /// Entities only ever on screen.
    ScreenOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub n_steps: usize,
    pub n_entities: usize,
    pub ocr_noise_rate: f64,
    pub modality_skew: ModalitySkew,
}

impl Default for GenParams {
    fn default() -> Self {
        Self { n_steps: 10, n_entities: 4, ocr_noise_rate: 0.02, modality_skew: ModalitySkew::Balanced }
    }
}

pub const MAX_STEPS: usize = 50;
pub const MAX_ENTITIES: usize = 8;
pub const MAX_NOISE: f64 = 0.3;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GenError {
    #[error("invalid params: {0}")]
    InvalidParams(String),
}

impl anonproxy_core::ErrorCode for GenError {
    fn code(&self) -> &'static str {
        "invalid-params"
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.n_steps == 0 || self.n_steps > MAX_STEPS {
            return Err(GenError::InvalidParams(format!("n_steps must be in 1..={MAX_STEPS}")));
        }
        if self.n_entities == 0 || self.n_entities > MAX_ENTITIES {
            return Err(GenError::InvalidParams(format!("n_entities must be in 1..={MAX_ENTITIES}")));
        }
        if !(0.0..=MAX_NOISE).contains(&self.ocr_noise_rate) {
            return Err(GenError::InvalidParams(format!("ocr_noise_rate must be in [0, {MAX_NOISE}]")));
        }
        Ok(())
    }
}

const SCREEN_W: u32 = 1080;
const SCREEN_H: u32 = 2400;

const APPS: &[&str] = &["contacts", "calendar", "wallet", "messages", "notes"];
const TITLES: &[&str] = &["Contacts", "Details", "Messages", "Calendar", "Payments", "Settings", "Profile", "Search"];
const FILLER_ROWS: &[&str] = &[
    "Recent activity",
    "No new notifications",
    "Favorites",
    "Synced just now",
    "Show more",
    "Frequently used",
    "Shared with you",
];
const BUTTONS: &[&str] = &["Save", "Next", "Cancel", "Edit", "Share", "Delete", "Done"];
const KINDS: &[&str] = &["FIRST_NAME", "LAST_NAME", "PHONE_NUMBER", "EMAIL", "DATE", "AMOUNT", "VERIFICATION_CODE"];

fn label_text(kind: &str) -> &'static str {
    match kind {
        "FIRST_NAME" => "First name",
        "LAST_NAME" => "Family name",
        "PHONE_NUMBER" => "Mobile",
        "EMAIL" => "Email",
        "DATE" => "Appointment",
        "AMOUNT" => "Total",
        _ => "One-time code",
    }
}

fn clause(kind: &str, v: &str) -> String {
    match kind {
        "FIRST_NAME" => format!("find the contact whose first name is {v}"),
        "LAST_NAME" => format!("confirm that the family name on the card reads {v}"),
        "PHONE_NUMBER" => format!("set the mobile number field to {v}"),
        "EMAIL" => format!("change the email address to {v}"),
        "DATE" => format!("move the appointment to {v}"),
        "AMOUNT" => format!("check whether the invoice total of {v} is correct"),
        _ => format!("enter the verification code {v} when the app asks for it"),
    }
}

const INTRO: &str = "Open the {app} app on the phone and wait until the main screen has finished loading.";
const OUTRO: &str = "Keep every other setting exactly as it is, do not share anything with other apps, and go back to the home screen once everything has been saved.";
const SCREEN_ONLY_BODY: &str = "Review the entries shown on each screen, update whatever looks out of date, and make sure the changes are kept.";

/// Every fixed word the generator writes, used to keep generated values from
/// colliding with filler text.
fn vocabulary() -> String {
    let mut v: Vec<String> = Vec::new();
    v.extend(APPS.iter().map(|s| s.to_string()));
    v.extend(TITLES.iter().map(|s| s.to_string()));
    v.extend(FILLER_ROWS.iter().map(|s| s.to_string()));
    v.extend(BUTTONS.iter().map(|s| s.to_string()));
    v.extend(KINDS.iter().map(|k| k.to_string()));
    v.extend(KINDS.iter().map(|k| label_text(k).to_string()));
    v.extend(KINDS.iter().map(|k| clause(k, "")));
    v.extend([INTRO, OUTRO, SCREEN_ONLY_BODY].iter().map(|s| s.to_string()));
    v.push("android widget textview edittext button framelayout linearlayout hierarchy node com example search resource-id".into());
    normalize(&v.join(" "))
}

const CONSONANTS: &[u8] = b"bdgkmpvz";
const VOWELS: &[u8] = b"aiou";

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut s = String::new();
    for _ in 0..syllables {
        s.push(*CONSONANTS.choose(rng).unwrap() as char);
        s.push(*VOWELS.choose(rng).unwrap() as char);
    }
    s.push(*CONSONANTS.choose(rng).unwrap() as char);
    s
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn digits(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect()
}

fn value_for(rng: &mut ChaCha8Rng, kind: &str) -> String {
    match kind {
        "FIRST_NAME" | "LAST_NAME" => capitalized(&word(rng, 4)),
        "PHONE_NUMBER" => format!("1{}{}", rng.random_range(3..10u8), digits(rng, 9)),
        "EMAIL" => format!("{}.{}@{}.test", word(rng, 2), word(rng, 2), word(rng, 2)),
        "DATE" => format!("20{}-{:02}-{:02}", rng.random_range(20..30u8), rng.random_range(1..13u8), rng.random_range(1..29u8)),
        "AMOUNT" => format!("${}.{}", rng.random_range(1000..100000u32), digits(rng, 2)),
        _ => format!("{}{}", rng.random_range(1..10u8), digits(rng, 5)),
    }
}

fn collides(v: &str, taken: &[String], vocab: &str) -> bool {
    let n = normalize(v);
    let d: String = n.chars().filter(char::is_ascii_digit).collect();
    vocab.contains(&n)
        || taken.iter().any(|t| {
            let m = normalize(t);
            let e: String = m.chars().filter(char::is_ascii_digit).collect();
            m.contains(&n) || n.contains(&m) || (d.len() >= 4 && e.len() >= 4 && (e.contains(&d) || d.contains(&e)))
        })
}

fn styled(kind: &str, v: &str, skew: ModalitySkew) -> String {
    if skew == ModalitySkew::InstructionOnly && matches!(kind, "FIRST_NAME" | "LAST_NAME" | "EMAIL") {
        v.to_uppercase()
    } else {
        v.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('"', "&quot;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Node {
    class: &'static str,
    text: String,
    hint: Option<&'static str>,
    id: String,
    clickable: bool,
    bbox: BoundingBox,
}

fn bbox(l: u32, t: u32, r: u32, b: u32) -> BoundingBox {
    BoundingBox::new(l as i64, t as i64, r as i64, b as i64).expect("generator boxes are valid")
}

fn render_xml(app: &str, nodes: &[Node]) -> String {
    let pkg = format!("com.example.{app}");
    let mut x = String::from("<?xml version='1.0' encoding='UTF-8' standalone='yes' ?><hierarchy rotation=\"0\">");
    x.push_str(&format!(
        "<node index=\"0\" text=\"\" resource-id=\"\" class=\"android.widget.FrameLayout\" package=\"{pkg}\" content-desc=\"\" clickable=\"false\" bounds=\"[0,0][{SCREEN_W},{SCREEN_H}]\">"
    ));
    for (i, n) in nodes.iter().enumerate() {
        let hint = n.hint.map(|h| format!(" hint=\"{h}\"")).unwrap_or_default();
        x.push_str(&format!(
            "<node index=\"{}\" text=\"{}\"{} resource-id=\"{pkg}:id/{}\" class=\"{}\" package=\"{pkg}\" content-desc=\"\" clickable=\"{}\" bounds=\"{}\" />",
            i + 1,
            xml_escape(&n.text),
            hint,
            n.id,
            n.class,
            n.clickable,
            n.bbox
        ));
    }
    x.push_str("</node></hierarchy>");
    x
}

/// One OCR token per whitespace-separated word, boxes split by character
/// offset.
fn ocr_words(nodes: &[Node]) -> Vec<OcrToken> {
    let mut out = Vec::new();
    for n in nodes {
        let chars: Vec<char> = n.text.chars().collect();
        if chars.is_empty() {
            continue;
        }
        let total = chars.len() as u32;
        let w = n.bbox.width();
        let mut i = 0usize;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            let s = i;
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            let l = n.bbox.left + w * s as u32 / total;
            let r = (n.bbox.left + w * i as u32 / total).max(l + 1);
            out.push(OcrToken {
                text: chars[s..i].iter().collect(),
                bbox: bbox(l, n.bbox.top + 20, r, n.bbox.bottom - 20),
                confidence: 0.95,
            });
        }
    }
    out
}

fn perturb(rng: &mut ChaCha8Rng, text: &str, rate: f64) -> String {
    if rate <= 0.0 {
        return text.to_string();
    }
    text.chars()
        .map(|c| {
            if !rng.random_bool(rate) {
                return c;
            }
            if c.is_ascii_digit() {
                let d = c as u8 - b'0';
                char::from(b'0' + (d + rng.random_range(1..10u8)) % 10)
            } else if c.is_ascii_alphabetic() {
                let base = if c.is_ascii_uppercase() { b'A' } else { b'a' };
                let k = c.to_ascii_lowercase() as u8 - b'a';
                char::from(base + (k + rng.random_range(1..26u8)) % 26)
            } else {
                c
            }
        })
        .collect()
}

struct Planned {
    kind: &'static str,
    value: String,
    in_instruction: bool,
    steps: BTreeSet<usize>,
}

pub fn generate_scenario(seed: u64, params: &GenParams) -> Result<Scenario, GenError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary();
    let n = params.n_steps;
    let skew = params.modality_skew;
    let app = *APPS.choose(&mut rng).unwrap();

    let mut taken: Vec<String> = Vec::new();
    let mut planned: Vec<Planned> = Vec::new();
    for i in 0..params.n_entities {
        let kind = if i == 0 { "FIRST_NAME" } else { *KINDS.choose(&mut rng).unwrap() };
        let value = loop {
            let v = value_for(&mut rng, kind);
            if !collides(&v, &taken, &vocab) {
                break v;
            }
        };
        taken.push(value.clone());
        let k = match skew {
            ModalitySkew::InstructionOnly => rng.random_range(1..=3usize),
            _ => rng.random_range(2..=4usize),
        }
        .min(n);
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        planned.push(Planned {
            kind,
            value,
            in_instruction: skew != ModalitySkew::ScreenOnly,
            steps: all[..k].iter().copied().collect(),
        });
    }

    let mut instruction = INTRO.replace("{app}", app);
    instruction.push(' ');
    if skew == ModalitySkew::ScreenOnly {
        instruction.push_str(SCREEN_ONLY_BODY);
    } else {
        let clauses: Vec<String> = planned.iter().map(|p| clause(p.kind, &p.value)).collect();
        let body = match clauses.len() {
            1 => clauses[0].clone(),
            k => format!("{}, and {}", clauses[..k - 1].join(", "), clauses[k - 1]),
        };
        instruction.push_str(&capitalized(&format!("then {body}.")));
    }
    instruction.push(' ');
    instruction.push_str(OUTRO);

    // typed values: (step typed at, entity); they show on the next screen
    let mut typed: Vec<Option<usize>> = vec![None; n];
    let mut screens = Vec::with_capacity(n);
    let mut script = Vec::new();
    let mut exposed: BTreeSet<usize> = planned.iter().enumerate().filter(|(_, p)| p.in_instruction).map(|(i, _)| i).collect();

    for k in 0..n {
        let title = *TITLES.choose(&mut rng).unwrap();
        let mut nodes = vec![Node {
            class: "android.widget.TextView",
            text: title.to_string(),
            hint: None,
            id: "title".into(),
            clickable: false,
            bbox: bbox(40, 40, 1040, 160),
        }];
        let mut y = 200;
        let mut row = |nodes: &mut Vec<Node>, label: &str, value: Option<String>, clickable: bool| {
            nodes.push(Node {
                class: "android.widget.TextView",
                text: label.to_string(),
                hint: None,
                id: format!("label_{}", nodes.len()),
                clickable: false,
                bbox: bbox(40, y, 400, y + 110),
            });
            if let Some(v) = value {
                nodes.push(Node {
                    class: "android.widget.TextView",
                    text: v,
                    hint: None,
                    id: format!("value_{}", nodes.len()),
                    clickable,
                    bbox: bbox(420, y, 1040, y + 110),
                });
            }
            y += 140;
        };
        for p in planned.iter().filter(|p| p.steps.contains(&k)) {
            row(&mut nodes, label_text(p.kind), Some(styled(p.kind, &p.value, skew)), true);
        }
        let mut fillers: Vec<&str> = FILLER_ROWS.to_vec();
        fillers.shuffle(&mut rng);
        for f in fillers.iter().take(rng.random_range(1..=3usize)) {
            row(&mut nodes, f, None, false);
        }
        let field_text = match k.checked_sub(1).and_then(|j| typed[j]) {
            Some(e) => styled(planned[e].kind, &planned[e].value, skew),
            None => String::new(),
        };
        nodes.push(Node {
            class: "android.widget.EditText",
            text: field_text,
            hint: Some("Search"),
            id: "input".into(),
            clickable: true,
            bbox: bbox(40, 1700, 1040, 1820),
        });
        let mut buttons: Vec<&str> = BUTTONS.to_vec();
        buttons.shuffle(&mut rng);
        let nb = rng.random_range(2..=3usize);
        for (b, label) in buttons.iter().take(nb).enumerate() {
            let w = 1000 / nb as u32;
            let l = 40 + b as u32 * w;
            nodes.push(Node {
                class: "android.widget.Button",
                text: label.to_string(),
                hint: None,
                id: format!("button_{b}"),
                clickable: true,
                bbox: bbox(l, 1880, l + w - 20, 1990),
            });
        }
        let interactable = nodes.iter().filter(|n| n.clickable).count();

        let xml = render_xml(app, &nodes);
        let ocr_tokens: Vec<OcrToken> = ocr_words(&nodes)
            .into_iter()
            .map(|mut t| {
                t.text = perturb(&mut rng, &t.text, params.ocr_noise_rate);
                t
            })
            .collect();
        screens.push(Capture { xml, ocr_tokens });

        for (i, p) in planned.iter().enumerate() {
            if p.steps.contains(&k) {
                exposed.insert(i);
            }
        }

        if k + 1 == n {
            script.push("finish(\"Done for {{e0}}\")".to_string());
            break;
        }

        if k > 0 && rng.random_bool(0.35) && !exposed.is_empty() {
            script.push(format!("{COMPUTE_PREFIX}{}", compute_entry(&mut rng, &planned, &exposed)));
        }

        let choice = rng.random_range(0..10u8);
        let cmd = if choice < 3 && !exposed.is_empty() {
            let e = *exposed.iter().copied().collect::<Vec<_>>().choose(&mut rng).unwrap();
            typed[k] = Some(e);
            format!("type(\"{{{{e{e}}}}}\")")
        } else if choice < 6 {
            format!("tap({})", rng.random_range(0..interactable))
        } else if choice < 8 {
            let dir = *["up", "down", "left", "right"].choose(&mut rng).unwrap();
            let dist = *["short", "medium", "long"].choose(&mut rng).unwrap();
            format!("swipe({}, {dir}, {dist})", rng.random_range(0..interactable))
        } else {
            format!("long_press({})", rng.random_range(0..interactable))
        };
        script.push(cmd);
    }

    for (k, t) in typed.iter().enumerate() {
        if let Some(e) = t {
            planned[*e].steps.insert(k + 1);
        }
    }

    let planted = planned
        .iter()
        .map(|p| {
            let steps: Vec<u64> = p.steps.iter().map(|&s| s as u64).collect();
            let mut modalities = Vec::new();
            if p.in_instruction {
                modalities.push(Source::Instruction);
            }
            modalities.push(Source::Xml);
            let v = normalize(&p.value);
            let ocr_exact = p.steps.iter().all(|&s| {
                let joined: Vec<&str> = screens[s].ocr_tokens.iter().map(|t| t.text.as_str()).collect();
                normalize(&joined.join(" ")).contains(&v)
            });
            if ocr_exact {
                modalities.push(Source::Ocr);
            }
            PlantedEntity { value: p.value.clone(), etype: EntityType::new(p.kind).unwrap(), modalities, steps }
        })
        .collect();

    Ok(Scenario {
        schema_version: SCHEMA_VERSION,
        name: format!("synthetic-{seed}"),
        seed,
        instruction,
        planted,
        screens,
        script,
        expected_final_state: format!("finished on screen s{:03}", n - 1),
        detector: Default::default(),
        config: None,
        device: None,
    })
}

fn compute_entry(rng: &mut ChaCha8Rng, planned: &[Planned], exposed: &BTreeSet<usize>) -> String {
    let of_kind = |k: &str| -> Vec<usize> { exposed.iter().copied().filter(|&i| planned[i].kind == k).collect() };
    let amounts = of_kind("AMOUNT");
    let dates = of_kind("DATE");
    let all: Vec<usize> = exposed.iter().copied().collect();
    let req = |tokens: &[usize], instruction: &str| {
        let toks: Vec<String> = tokens.iter().map(|i| format!("{{{{e{i}}}}}")).collect();
        serde_json::json!({ "tokens": toks, "instruction": instruction, "reason": "needed to decide the next action" }).to_string()
    };
    match rng.random_range(0..5u8) {
        0 if amounts.len() >= 2 => req(&amounts[..2], "Is the first amount larger than the second?"),
        1 if dates.len() >= 2 => req(&dates[..2], "Which date is earlier?"),
        2 if all.len() >= 2 => req(&all[..2], "Are these two values the same?"),
        3 => req(&all[..1], "Repeat the placeholder back to me"),
        _ => req(&all[..1], "How long is this value, short or long?"),
    }
}
