//! Layered run configuration: defaults, then a TOML/JSON file with dotted
//! keys, then `--set key=value` pairs and dedicated flags.

use std::path::Path;

use e2mc_core::eval::{ExperimentConfig, StreamSource};
use e2mc_core::stream::GeneratorSpec;
use e2mc_core::{Error, Result};
use serde_json::{Map, Value};

/// Parses a config file. `.json` files may hold either a config object or a
/// run manifest (whose `config` entry is used); anything else is TOML.
pub fn read_layer(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else {
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table)?
    };
    Ok(match value {
        Value::Object(mut m) if m.get("tool").and_then(Value::as_str) == Some(crate::TOOL) => {
            m.remove("config").unwrap_or(Value::Object(Map::new()))
        }
        v => v,
    })
}

/// Recursively overlays `top` onto `base`. A `source` of a different kind
/// (synthetic vs file) replaces the base source wholesale.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && (k != "source" || same_keys(slot, &v)) => {
                        merge(slot, v)
                    }
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn same_keys(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Object(a), Value::Object(b)) => a.keys().eq(b.keys()),
        _ => false,
    }
}

/// Parses a scalar as TOML (numbers, booleans, arrays, quoted strings),
/// falling back to a bare string.
pub fn parse_scalar(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets a dotted key such as `train.alpha` inside `root`.
pub fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut nested = value;
    for p in parts.iter().rev() {
        let mut m = Map::new();
        m.insert((*p).to_string(), nested);
        nested = Value::Object(m);
    }
    merge(root, nested);
    Ok(())
}

/// Parses `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{s}`")))?;
    Ok((k.trim().to_string(), parse_scalar(v.trim())))
}

pub fn default_config() -> ExperimentConfig {
    ExperimentConfig::new(
        StreamSource::Synthetic(GeneratorSpec::default()),
        e2mc_core::baselines::Strategy::E2mc,
        vec![0],
    )
}

/// Deserialises the merged layers into a validated config.
pub fn finish(value: Value) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Value {
        serde_json::to_value(default_config()).unwrap()
    }

    #[test]
    fn dotted_keys_override() {
        let mut v = base();
        set_dotted(&mut v, "train.alpha", parse_scalar("0.5")).unwrap();
        set_dotted(&mut v, "model.agg", parse_scalar("max-pool")).unwrap();
        set_dotted(&mut v, "seeds", parse_scalar("[1, 2]")).unwrap();
        let c = finish(v).unwrap();
        assert_eq!(c.train.alpha, 0.5);
        assert_eq!(c.train.beta, 1.0);
        assert_eq!(c.model.agg, e2mc_core::model::AggMode::MaxPool);
        assert_eq!(c.seeds, vec![1, 2]);
    }

    #[test]
    fn toml_layer_with_dotted_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "strategy = \"ewc\"\ntrain.budget = 8\nbaseline.ewc_lambda = 5.0\nsource.file = \"s.jsonl\"\n").unwrap();
        let mut v = base();
        merge(&mut v, read_layer(&p).unwrap());
        let c = finish(v).unwrap();
        assert_eq!(c.strategy, e2mc_core::baselines::Strategy::Ewc);
        assert_eq!(c.train.budget, 8);
        assert_eq!(c.baseline.ewc_lambda, 5.0);
        assert_eq!(c.source, StreamSource::File("s.jsonl".into()));
    }

    #[test]
    fn source_fields_merge_within_a_kind() {
        let mut v = base();
        set_dotted(&mut v, "source.synthetic.num_tasks", parse_scalar("5")).unwrap();
        let c = finish(v.clone()).unwrap();
        let StreamSource::Synthetic(spec) = &c.source else { panic!("source kind changed") };
        assert_eq!((spec.num_tasks, spec.num_classes), (5, 40));
        set_dotted(&mut v, "source.file", parse_scalar("\"x.json\"")).unwrap();
        assert_eq!(finish(v).unwrap().source, StreamSource::File("x.json".into()));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = base();
        set_dotted(&mut v, "train.alpah", parse_scalar("1")).unwrap();
        assert!(matches!(finish(v), Err(Error::Config(_))));
        assert!(parse_assignment("novalue").is_err());
        assert!(set_dotted(&mut base(), "a..b", Value::Null).is_err());
    }

    #[test]
    fn bare_words_become_strings() {
        assert_eq!(parse_scalar("finetune"), Value::String("finetune".into()));
        assert_eq!(parse_scalar("3"), serde_json::json!(3));
        assert_eq!(parse_scalar("true"), Value::Bool(true));
    }
}
