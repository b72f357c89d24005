//! Run configuration files and `key=value` overrides.
//!
//! A config file is JSON (`.json`) or TOML (anything else) whose keys mirror
//! [`PipelineConfig`] field names; omitted keys take their defaults. Overrides
//! address nested fields with dotted paths such as `wls.sigma=0.7`.

use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;

fn parse_document(text: &str, is_json: bool) -> Result<Value> {
    if text.trim().is_empty() {
        return Ok(Value::Object(Map::new()));
    }
    if is_json {
        serde_json::from_str(text).map_err(|e| Error::config("<file>", e.to_string()))
    } else {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::config("<file>", e.to_string()))?;
        serde_json::to_value(table).map_err(|e| Error::config("<file>", e.to_string()))
    }
}

/// Interprets an override value as JSON when it parses, else as a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(key, "malformed override key"));
    }
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Map::new());
            } else {
                return Err(Error::config(
                    parts[..depth].join("."),
                    "is not a table and cannot hold nested keys",
                ));
            }
        }
        let map = node.as_object_mut().expect("object ensured above");
        if depth == parts.len() - 1 {
            map.insert(part.to_string(), parse_value(raw.trim()));
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last key")
}

/// Builds a config from a document and overrides, naming the offending field on error.
pub fn from_value(mut doc: Value, overrides: &[String]) -> Result<PipelineConfig> {
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: PipelineConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<root>".to_string() } else { path };
        Error::config(field, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str, is_json: bool, overrides: &[String]) -> Result<PipelineConfig> {
    from_value(parse_document(text, is_json)?, overrides)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    parse_config(&text, is_json, overrides)
}

/// Default configuration rendered as TOML.
pub fn default_config_toml() -> String {
    let value = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
    let table: toml::Table = serde_json::from_value(strip_nulls(value)).expect("config is a table");
    toml::to_string_pretty(&table).expect("config renders as TOML")
}

fn strip_nulls(v: Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k, strip_nulls(v)))
                .collect(),
        ),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusterer::GammaMode;
    use crate::pipeline::Variant;

    fn field_of(e: Error) -> String {
        match e {
            Error::Config { field, .. } => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(parse_config("", false, &[]).unwrap(), PipelineConfig::default());
        assert_eq!(parse_config("{}", true, &[]).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn default_toml_round_trips() {
        let text = default_config_toml();
        assert_eq!(parse_config(&text, false, &[]).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn shipped_default_config_matches_code_defaults() {
        let text = include_str!("../../../configs/default.toml");
        assert_eq!(text, default_config_toml());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = parse_config(
            "iterations = 2\n[wls]\nm = 2\n",
            false,
            &[
                "wls.sigma=0.7".into(),
                "variant=CEL".into(),
                r#"cluster.gamma={"Absolute":1.5}"#.into(),
                "benchmark.seed=99".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.iterations, 2);
        assert_eq!(cfg.wls.m, 2);
        assert_eq!(cfg.wls.sigma, 0.7);
        assert_eq!(cfg.variant, Variant::Cel);
        assert_eq!(cfg.cluster.gamma, GammaMode::Absolute(1.5));
        assert_eq!(cfg.benchmark.seed, 99);
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(parse_config("[wls]\nsigma = \"high\"\n", false, &[]).unwrap_err()), "wls.sigma");
        assert_eq!(field_of(parse_config("[wls]\nsigma = 3.0\n", false, &[]).unwrap_err()), "wls.sigma");
        assert_eq!(field_of(parse_config("", false, &["train.batch_size=0".into()]).unwrap_err()), "train.batch_size");
        assert!(field_of(parse_config("[train]\nbogus = 1\n", false, &[]).unwrap_err()).starts_with("train"));
        assert_eq!(field_of(parse_config("", false, &["nonsense".into()]).unwrap_err()), "nonsense");
        assert_eq!(field_of(parse_config("not toml = = 1", false, &[]).unwrap_err()), "<file>");
    }
}
