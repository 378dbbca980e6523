//! Keeps docs/config.schema.json in step with the config structs.

use serde_json::Value;

use onoma::sim::{presets, ScenarioConfig};

fn schema() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn resolve<'a>(root: &'a Value, node: &'a Value) -> &'a Value {
    match node.get("$ref").and_then(Value::as_str) {
        Some(r) => {
            let name = r.trim_start_matches("#/$defs/");
            &root["$defs"][name]
        }
        None => node,
    }
}

fn check(root: &Value, node: &Value, value: &Value, path: &str, errors: &mut Vec<String>) {
    let node = resolve(root, node);
    if let Some(branches) = node.get("oneOf").and_then(Value::as_array) {
        let fits = branches.iter().find(|b| {
            let keys = b["required"].as_array().cloned().unwrap_or_default();
            let consts_ok = b["properties"]
                .as_object()
                .map(|props| {
                    props.iter().all(|(k, p)| match p.get("const") {
                        Some(c) => value.get(k) == Some(c),
                        None => true,
                    })
                })
                .unwrap_or(true);
            consts_ok && keys.iter().all(|k| value.get(k.as_str().unwrap()).is_some())
        });
        match fits {
            Some(b) => check(root, b, value, path, errors),
            None => errors.push(format!("{path}: no schema branch matches {value}")),
        }
        return;
    }
    match value {
        Value::Object(map) => {
            let Some(props) = node.get("properties").and_then(Value::as_object) else {
                errors.push(format!("{path}: schema has no properties"));
                return;
            };
            for (k, v) in map {
                if v.is_null() {
                    continue;
                }
                match props.get(k) {
                    Some(p) => check(root, p, v, &format!("{path}.{k}"), errors),
                    None => errors.push(format!("{path}.{k}: missing from schema")),
                }
            }
        }
        Value::Array(items) => {
            if let Some(item) = node.get("items") {
                for (i, v) in items.iter().enumerate() {
                    check(root, item, v, &format!("{path}[{i}]"), errors);
                }
            }
        }
        _ => {
            if let Some(options) = node.get("enum").and_then(Value::as_array) {
                if !options.contains(value) {
                    errors.push(format!("{path}: {value} not in {options:?}"));
                }
            }
        }
    }
}

#[test]
fn presets_fit_the_published_schema() {
    let root = schema();
    let mut errors = Vec::new();
    for p in presets::PRESETS {
        let cfg = ScenarioConfig::from_toml(p.toml).unwrap();
        let value = serde_json::to_value(&cfg).unwrap();
        check(&root, &root, &value, p.name, &mut errors);
    }
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn schema_rejects_unknown_top_level_keys() {
    let root = schema();
    assert_eq!(root["additionalProperties"], Value::Bool(false));
    assert_eq!(root["required"], serde_json::json!(["room"]));
}
