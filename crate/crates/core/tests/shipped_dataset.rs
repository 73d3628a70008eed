use std::collections::HashMap;
use std::fs;

use taskpilot_core::dataset::{generate, read_records, split, write_records, Split, DEFAULT_FRACTIONS};
use taskpilot_core::gateway::{match_response, parse_reply, PromptGroup};
use taskpilot_core::assistant::{Vocabulary, DONE_TEXT};
use taskpilot_core::dataset::enumerate_states;
use taskpilot_core::Catalog;

#[test]
fn kitchen_fruit_shape_and_split() {
    let c = Catalog::builtin();
    let (task, scenario) = c.task_with_scenario("kitchen_fruit").unwrap();
    let mut records = generate(scenario, task).unwrap();
    assert_eq!(records.len(), 7 * 4 * 3);
    split(&mut records, 42, DEFAULT_FRACTIONS).unwrap();
    let mut counts: HashMap<Split, usize> = HashMap::new();
    for r in &records {
        *counts.entry(r.split.unwrap()).or_default() += 1;
    }
    // floor(84*0.8) = 67, floor(84*0.1) = 8, remainder 9
    assert_eq!((counts[&Split::Train], counts[&Split::Val], counts[&Split::Test]), (67, 8, 9));

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write_records(&records, &a).unwrap();
    let mut again = generate(scenario, task).unwrap();
    split(&mut again, 42, DEFAULT_FRACTIONS).unwrap();
    write_records(&again, &b).unwrap();
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(bytes.iter().filter(|&&c| c == b'\n').count(), 84);
    assert_eq!(read_records(&a).unwrap(), records);

    let mut other = generate(scenario, task).unwrap();
    split(&mut other, 43, DEFAULT_FRACTIONS).unwrap();
    assert_ne!(
        other.iter().map(|r| r.split).collect::<Vec<_>>(),
        records.iter().map(|r| r.split).collect::<Vec<_>>()
    );
}

#[test]
fn every_suggestion_target_is_a_valid_action() {
    let c = Catalog::builtin();
    for task in c.tasks() {
        let scenario = c.scenario(&task.environment).unwrap();
        let states = enumerate_states(scenario, task).unwrap();
        let records = generate(scenario, task).unwrap();
        assert_eq!(records.len(), (task.actions.len() + 1) * 12, "{}", task.id);
        let mut checked = 0;
        for r in records.iter().filter(|r| r.group != PromptGroup::Locate) {
            let state = &states[r.step_index];
            if task.is_complete(&state.progress) {
                assert_eq!(r.target_text, DONE_TEXT);
                continue;
            }
            let reply = parse_reply(&r.target_text, &Vocabulary::from_scene(&state.scene));
            let valid = task.valid_next_actions(&state.progress);
            assert!(match_response(&reply, &valid, &state.scene), "{}: {}", r.record_id, r.target_text);
            checked += 1;
        }
        assert_eq!(checked, task.actions.len() * 4 * 2);
    }
}

#[test]
fn locate_targets_use_world_coordinates() {
    let c = Catalog::builtin();
    let (task, scenario) = c.task_with_scenario("medlab_vitamins_pills").unwrap();
    let records = generate(scenario, task).unwrap();
    let first = records.iter().find(|r| r.group == PromptGroup::Locate).unwrap();
    assert_eq!(first.target_text, "the red pill bottle is at (-1.80, 0.90, 0.80)");
    assert!(first.input_text.ends_with("Where is the red pill bottle?"));
}
