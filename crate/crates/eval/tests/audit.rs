use anonproxy_core::Source;
use anonproxy_eval::audit::count;
use anonproxy_eval::{consistency_audit, EntityObservation, ViolationClass};

fn load(name: &str) -> Vec<EntityObservation> {
    let path = format!("{}/../../fixtures/transcripts/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn obs(entity: usize, order: u64, raw: bool, placeholders: &[&str]) -> EntityObservation {
    let (step, modality) = match order {
        0 => (None, Source::Instruction),
        o if o % 2 == 1 => (Some((o - 1) / 2), Source::Xml),
        o => (Some((o - 2) / 2), Source::Ocr),
    };
    EntityObservation {
        entity,
        order,
        step,
        modality,
        raw,
        placeholders: placeholders.iter().map(|s| s.to_string()).collect(),
        whitelisted: false,
    }
}

#[test]
fn raw_instruction_then_masked_screen() {
    let v = consistency_audit(&load("missed_instruction_observations.json"));
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].class, ViolationClass::A2);
    assert_eq!(v[0].first.modality, Source::Instruction);
    assert_eq!(v[0].second.modality, Source::Ocr);
}

#[test]
fn two_placeholders_for_one_name() {
    let v = consistency_audit(&load("split_placeholder_observations.json"));
    assert_eq!(count(&v, ViolationClass::B), 1);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].placeholders, ["FIRST_NAME#8dfa9", "FIRST_NAME#g7wef"]);
    assert_eq!(v[0].second.step, Some(0));
}

#[test]
fn masked_then_raw() {
    let v = consistency_audit(&[obs(0, 0, false, &["PHONE_NUMBER#1lryd"]), obs(0, 1, true, &[]), obs(0, 3, true, &[])]);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].class, ViolationClass::A1);
    assert_eq!(v[0].second.step, Some(0));
}

#[test]
fn one_violation_per_class_and_entity() {
    let v = consistency_audit(&[
        obs(0, 0, false, &["FIRST_NAME#aaaaa"]),
        obs(0, 1, false, &["FIRST_NAME#bbbbb"]),
        obs(0, 2, false, &["FIRST_NAME#ccccc"]),
        obs(0, 3, true, &[]),
        obs(0, 5, true, &[]),
        obs(1, 0, false, &["EMAIL#aaaaa"]),
        obs(1, 1, false, &["EMAIL#aaaaa"]),
    ]);
    assert_eq!(count(&v, ViolationClass::B), 1);
    assert_eq!(count(&v, ViolationClass::A1), 1);
    assert_eq!(count(&v, ViolationClass::A2), 0);
    assert_eq!(v.iter().filter(|x| x.entity == 1).count(), 0);
}

#[test]
fn consistent_and_whitelisted_runs_are_clean() {
    let same = [obs(0, 0, false, &["LAST_NAME#4v71x"]), obs(0, 1, false, &["LAST_NAME#4v71x"]), obs(0, 2, false, &["LAST_NAME#4v71x"])];
    assert!(consistency_audit(&same).is_empty());

    let mut raw = obs(0, 0, true, &[]);
    raw.whitelisted = true;
    let mut later = obs(0, 1, false, &["FIRST_NAME#6b7vr"]);
    later.whitelisted = true;
    assert!(consistency_audit(&[raw, later]).is_empty());

    // distinct types for one value are not a B violation
    let typed = [obs(0, 0, false, &["PHONE_NUMBER#1lryd"]), obs(0, 1, false, &["VERIFICATION_CODE#00000"])];
    assert!(consistency_audit(&typed).is_empty());
}

#[test]
fn order_not_input_position_decides() {
    let v = consistency_audit(&[obs(0, 3, true, &[]), obs(0, 0, false, &["PHONE_NUMBER#1lryd"])]);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].class, ViolationClass::A1);
}
