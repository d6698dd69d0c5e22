use std::collections::BTreeSet;

use hier_admm::scenario::{example_case, from_json, generate, load, save, to_json, GeneratorParams};
use hier_admm::tree::NodeId;
use hier_admm::Error;
use proptest::prelude::*;
use serde_json::Value;

fn small(seed: u64, levels: usize) -> GeneratorParams {
    GeneratorParams {
        seed,
        levels,
        horizon: 12,
        dt: 2.0,
        ..GeneratorParams::default()
    }
}

fn schema() -> jsonschema::Validator {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/scenario.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn error_path(e: Error) -> (String, String) {
    match e {
        Error::Validation { path, message } => (path, message),
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for levels in 2..=5 {
        let s = generate(&small(levels as u64, levels)).unwrap();
        let path = dir.path().join(format!("s{levels}.json"));
        save(&s, &path).unwrap();
        assert_eq!(load(&path).unwrap(), s);
    }
}

#[test]
fn same_seed_same_bytes() {
    let a = to_json(&generate(&small(42, 3)).unwrap());
    let b = to_json(&generate(&small(42, 3)).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, to_json(&generate(&small(43, 3)).unwrap()));
}

#[test]
fn saved_files_match_the_schema() {
    let validator = schema();
    for seed in 0..40 {
        let s = generate(&small(seed, 2 + seed as usize % 4)).unwrap();
        let doc: Value = serde_json::from_str(&to_json(&s)).unwrap();
        let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "seed {seed}: {errors:?}");
    }
    let doc: Value = serde_json::from_str(&to_json(&example_case(1, 24, 1.0).unwrap())).unwrap();
    assert!(validator.is_valid(&doc));
}

#[test]
fn schema_rejects_what_the_loader_rejects() {
    let validator = schema();
    let text = to_json(&generate(&small(1, 3)).unwrap());
    let mut doc: Value = serde_json::from_str(&text).unwrap();
    doc["prosumers"][0]["colour"] = Value::from("red");
    assert!(!validator.is_valid(&doc));
    assert!(from_json(&doc.to_string()).is_err());

    let mut doc: Value = serde_json::from_str(&text).unwrap();
    doc["tree"][1]["id"] = serde_json::json!([2, 1]);
    assert!(!validator.is_valid(&doc));
    assert!(from_json(&doc.to_string()).is_err());
}

#[test]
fn missing_prosumer_names_the_leaf() {
    let s = generate(&small(7, 3)).unwrap();
    let mut doc: Value = serde_json::from_str(&to_json(&s)).unwrap();
    let removed = doc["prosumers"].as_array_mut().unwrap().remove(1);
    let leaf: NodeId = serde_json::from_value(removed["id"].clone()).unwrap();
    let (path, message) = error_path(from_json(&doc.to_string()).unwrap_err());
    assert_eq!(path, "prosumers");
    assert!(message.contains(&leaf.to_string()), "{message}");
}

#[test]
fn constraint_on_a_leaf_is_rejected() {
    let s = generate(&small(7, 3)).unwrap();
    let mut doc: Value = serde_json::from_str(&to_json(&s)).unwrap();
    let leaf = doc["prosumers"][0]["id"].clone();
    doc["constraints"][0]["branch"] = leaf;
    let (path, message) = error_path(from_json(&doc.to_string()).unwrap_err());
    assert_eq!(path, "constraints[0].branch");
    assert!(message.contains("leaf"), "{message}");
}

#[test]
fn type_errors_carry_the_json_path() {
    let s = generate(&small(7, 2)).unwrap();
    let mut doc: Value = serde_json::from_str(&to_json(&s)).unwrap();
    doc["prosumers"][1]["p_uncontrolled"][3] = Value::from("high");
    let (path, _) = error_path(from_json(&doc.to_string()).unwrap_err());
    assert_eq!(path, "prosumers[1].p_uncontrolled[3]");

    let mut doc: Value = serde_json::from_str(&to_json(&s)).unwrap();
    doc["prosumers"][0]["p_uncontrolled"].as_array_mut().unwrap().pop();
    assert!(from_json(&doc.to_string()).is_err());
}

#[test]
fn hand_written_voltage_block() {
    let text = r#"{
        "version": 1, "horizon": 2, "dt_hours": 1.0,
        "tree": [{"id": [], "parent": null}, {"id": [1, 1], "parent": []}, {"id": [1, 2], "parent": []}],
        "prosumers": [
            {"id": [1, 1], "capacity_kwh": 4, "soc0_kwh": 2, "p_charge_max_kw": 1, "p_discharge_max_kw": 1,
             "price_buy": 0.2, "price_sell": 0.1, "p_uncontrolled": [1, 2]},
            {"id": [1, 2], "capacity_kwh": 4, "soc0_kwh": 2, "p_charge_max_kw": 1, "p_discharge_max_kw": 1,
             "price_buy": 0.2, "price_sell": 0.1, "p_uncontrolled": [0, -1]}
        ],
        "constraints": [
            {"branch": [], "kind": "voltage",
             "sensitivity": {"v0": 1.0, "vmax": 1.05, "vmin": 0.95,
                             "grad_p": [{"leaf": [1, 1], "value": 0.01}, {"leaf": [1, 2], "value": 0.02}]}},
            {"branch": [], "kind": "power", "upper": [3, null]}
        ],
        "root_objective": {"target": "peak_shaving", "weight": 1}
    }"#;
    assert!(schema().is_valid(&serde_json::from_str::<Value>(text).unwrap()));
    let s = from_json(text).unwrap();
    assert_eq!(s.constraints.len(), 2);
    assert_eq!(s.constraints[0].weights.values().copied().collect::<Vec<_>>(), vec![0.01, 0.02]);
    assert!((s.constraints[0].lower[0] + 0.05).abs() < 1e-12);
    assert_eq!(s.constraints[1].upper, vec![3.0, f64::INFINITY]);
    // a reload of the saved form is the same scenario
    assert_eq!(from_json(&to_json(&s)).unwrap(), s);
}

#[test]
fn caps_hold_over_a_thousand_seeds() {
    let defaults = GeneratorParams::default();
    for seed in 0..1000u64 {
        let levels = 2 + (seed % 4) as usize;
        let params = GeneratorParams {
            seed,
            levels,
            horizon: 4,
            dt: 6.0,
            ..GeneratorParams::default()
        };
        let s = generate(&params).unwrap();
        let t = &s.tree;
        assert_eq!(t.depth(), levels, "seed {seed}");
        let branches = t.branching_nodes();
        assert!(branches.len() <= 15, "seed {seed}: {} branching nodes", branches.len());
        for b in &branches {
            let children = t.children(b).unwrap();
            let branch_children = children.iter().filter(|c| !t.is_leaf(c).unwrap()).count();
            let leaf_children = children.len() - branch_children;
            assert!(branch_children as u32 <= defaults.max_branch_children, "seed {seed}");
            assert!(leaf_children as u32 <= defaults.max_leaves_per_branch, "seed {seed}");
        }
        if levels == 2 {
            assert_eq!(branches, vec![NodeId::root()]);
        }
        // one constraint at least on every branch, and the no-action point
        // need not be feasible but a feasible one exists by construction
        let constrained: BTreeSet<NodeId> = s.constraints.iter().map(|c| c.branch.clone()).collect();
        assert_eq!(constrained, branches.iter().cloned().collect(), "seed {seed}");
        s.validate().unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generation_is_pure(seed in any::<u64>(), levels in 2usize..=5) {
        let a = generate(&small(seed, levels)).unwrap();
        let b = generate(&small(seed, levels)).unwrap();
        prop_assert_eq!(to_json(&a), to_json(&b));
        prop_assert_eq!(from_json(&to_json(&a)).unwrap(), a);
    }
}

#[test]
fn rejects_out_of_range_levels() {
    assert!(generate(&small(0, 6)).is_err());
    assert!(generate(&small(0, 1)).is_err());
}
