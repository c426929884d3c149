//! Flat `key = value` run configuration.
//!
//! Keys are the [`TrainConfig`] field names. The transport keys `alpha`,
//! `epsilon`, `lambda`, `outer_iters`, `inner_iters` and `tol` set all three
//! stages at once; `stage1.alpha` and friends override a single stage.
//! Missing keys keep their defaults and unknown keys are rejected.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::error::{ClotError, Result};
use crate::pipeline::TrainConfig;

const STAGES: [&str; 3] = ["stage1", "stage2", "stage3"];

fn config_err<T>(line: usize, msg: impl std::fmt::Display) -> Result<T> {
    Err(ClotError::Config(format!("line {line}: {msg}")))
}

/// Converts `raw` into a JSON value of the same kind as `like`.
fn typed(raw: &str, like: &Value) -> std::result::Result<Value, String> {
    let bad = |kind: &str| format!("expected {kind}, found {raw:?}");
    match like {
        Value::Bool(_) => match raw {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(bad("true or false")),
        },
        Value::String(_) => Ok(Value::String(raw.to_string())),
        // Field types decide the sign; serde rejects a negative count later.
        Value::Number(n) if !n.is_f64() => raw
            .parse::<u64>()
            .map(Value::from)
            .or_else(|_| raw.parse::<i64>().map(Value::from))
            .map_err(|_| bad("an integer")),
        Value::Number(_) => raw
            .parse::<f64>()
            .ok()
            .and_then(Number::from_f64)
            .map(Value::Number)
            .ok_or_else(|| bad("a finite number")),
        _ => Err(format!("key cannot be set from text: {raw:?}")),
    }
}

pub fn parse_run_config(text: &str) -> Result<TrainConfig> {
    let mut tree = serde_json::to_value(TrainConfig::default())?;
    let root = tree.as_object_mut().expect("config serializes to an object");
    let mut seen = BTreeSet::new();
    let mut stage_overrides = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, raw)) = line.split_once('=') else {
            return config_err(n, format!("expected key = value, found {line:?}"));
        };
        let (key, raw) = (key.trim(), raw.trim());
        if !seen.insert(key.to_string()) {
            return config_err(n, format!("duplicate key {key}"));
        }
        if let Some((stage, field)) = key.split_once('.') {
            if !STAGES.contains(&stage) {
                return config_err(n, format!("unknown key {key}"));
            }
            stage_overrides.push((n, stage.to_string(), field.to_string(), raw.to_string()));
            continue;
        }
        if let Some(like) = root.get(key).filter(|v| !v.is_object()) {
            let v = typed(raw, like).or_else(|e| config_err(n, format!("{key}: {e}")))?;
            root.insert(key.to_string(), v);
            continue;
        }
        let stage_field = root[STAGES[0]].as_object().and_then(|o| o.get(key)).cloned();
        let Some(like) = stage_field else {
            return config_err(n, format!("unknown key {key}"));
        };
        let v = typed(raw, &like).or_else(|e| config_err(n, format!("{key}: {e}")))?;
        for s in STAGES {
            stage_obj(root, s).insert(key.to_string(), v.clone());
        }
    }
    for (n, stage, field, raw) in stage_overrides {
        let obj = stage_obj(root, &stage);
        let Some(like) = obj.get(&field) else {
            return config_err(n, format!("unknown key {stage}.{field}"));
        };
        let v = typed(&raw, like).or_else(|e| config_err(n, format!("{stage}.{field}: {e}")))?;
        obj.insert(field, v);
    }
    let cfg: TrainConfig = serde_json::from_value(tree).map_err(|e| ClotError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn stage_obj<'a>(root: &'a mut Map<String, Value>, stage: &str) -> &'a mut Map<String, Value> {
    root.get_mut(stage).and_then(Value::as_object_mut).expect("stage sections are objects")
}

/// Writes every setting, stage values spelled out per stage.
pub fn run_config_to_string(cfg: &TrainConfig) -> Result<String> {
    let tree = serde_json::to_value(cfg)?;
    let mut out = String::new();
    let text = |v: &Value| match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    for (k, v) in tree.as_object().expect("config serializes to an object") {
        match v.as_object() {
            Some(stage) => {
                for (f, sv) in stage {
                    out.push_str(&format!("{k}.{f} = {}\n", text(sv)));
                }
            }
            None => out.push_str(&format!("{k} = {}\n", text(v))),
        }
    }
    Ok(out)
}

pub fn read_run_config(path: &Path) -> Result<TrainConfig> {
    parse_run_config(&fs::read_to_string(path)?)
}
