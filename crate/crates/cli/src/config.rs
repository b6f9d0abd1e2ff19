//! Run configuration: TOML files layered over built-in defaults.
//!
//! A file may name a parent with `inherit = "<preset or path>"`; tables are
//! merged key by key, arrays and scalars replace. Distribution fields hold
//! literals such as `gaussian(1.5,0.5)` or `kde(betas.csv, auto)`; relative
//! KDE paths resolve against the directory of the file that states them.
//! Built-in presets resolve against the run's `inputs/` directory, where
//! their companion files are written.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use tmerge_core::distributions::parse_literal;
use tmerge_core::pipeline::PipelineConfig;

use crate::error::{CliError, Result};

pub const PRESETS: &[(&str, &str)] = &[
    ("synthetic.preset", include_str!("../presets/synthetic.preset")),
    ("naturalistic.preset", include_str!("../presets/naturalistic.preset")),
];

/// Data files referenced by the built-in presets.
pub const COMPANIONS: &[(&str, &str)] = &[("naturalistic_betas.csv", include_str!("../presets/naturalistic_betas.csv"))];

const DISTRIBUTION_KEYS: [&str; 2] = ["p_naturalistic", "p0"];
const MAX_INHERIT_DEPTH: usize = 8;

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    /// Files and presets that contributed, root first.
    pub sources: Vec<String>,
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Loads `spec` (a file path or built-in preset name), applies `overrides`
/// (`dotted.key=value`, value in TOML syntax) and validates the result.
pub fn load(spec: &str, inputs_dir: &Path, overrides: &[String]) -> Result<LoadedConfig> {
    let mut sources = Vec::new();
    let mut merged = load_layer(spec, None, inputs_dir, 0, &mut sources)?;
    for o in overrides {
        merge(&mut merged, override_value(o)?, "")?;
    }
    let config = finish(merged)?;
    Ok(LoadedConfig { config, sources })
}

/// The built-in defaults with distributions written as literals.
pub fn defaults() -> Value {
    let mut v = serde_json::to_value(PipelineConfig::synthetic()).expect("defaults serialize");
    let d = PipelineConfig::synthetic();
    v["p_naturalistic"] = Value::String(d.p_naturalistic.to_string());
    v["p0"] = Value::String(d.p0.to_string());
    v
}

fn load_layer(
    spec: &str,
    relative_to: Option<&Path>,
    inputs_dir: &Path,
    depth: usize,
    sources: &mut Vec<String>,
) -> Result<Value> {
    if depth > MAX_INHERIT_DEPTH {
        return Err(CliError::Config(format!("inherit chain deeper than {MAX_INHERIT_DEPTH} at `{spec}`")));
    }
    let candidate = match relative_to {
        Some(dir) if Path::new(spec).is_relative() => dir.join(spec),
        _ => PathBuf::from(spec),
    };
    let (mut layer, base_dir, label) = if candidate.is_file() {
        let text = fs::read_to_string(&candidate)?;
        let base = candidate.parent().map(Path::to_path_buf).unwrap_or_default();
        let label = candidate.display().to_string();
        let layer = if candidate.extension().is_some_and(|e| e == "json") {
            manifest_layer(&text, &label)?
        } else {
            toml_layer(&text, &label)?
        };
        (layer, base, label)
    } else if let Some(text) = preset_text(spec) {
        materialize_companions(text, inputs_dir)?;
        (toml_layer(text, spec)?, inputs_dir.to_path_buf(), spec.to_string())
    } else {
        return Err(CliError::Missing(candidate));
    };

    resolve_kde_paths(&mut layer, &base_dir);
    let parent = match layer.as_object_mut().and_then(|m| m.remove("inherit")) {
        None => None,
        Some(Value::String(p)) => Some(p),
        Some(_) => return Err(CliError::Config(format!("{label}: `inherit` must be a string"))),
    };
    let mut base = match parent {
        Some(p) => load_layer(&p, Some(&base_dir), inputs_dir, depth + 1, sources)?,
        None => defaults(),
    };
    sources.push(label);
    merge(&mut base, layer, "")?;
    Ok(base)
}

fn toml_layer(text: &str, label: &str) -> Result<Value> {
    let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("{label}: {e}")))?;
    serde_json::to_value(table).map_err(|e| CliError::Config(format!("{label}: {e}")))
}

/// A `manifest.json` from an earlier run: its `config` snapshot.
fn manifest_layer(text: &str, label: &str) -> Result<Value> {
    let v: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("{label}: {e}")))?;
    v.get("config")
        .cloned()
        .filter(Value::is_object)
        .ok_or_else(|| CliError::Config(format!("{label}: no `config` object")))
}

/// Writes the companion files that `preset` mentions, unless present.
fn materialize_companions(preset: &str, inputs_dir: &Path) -> Result<()> {
    for (name, text) in COMPANIONS.iter().filter(|(n, _)| preset.contains(n)) {
        fs::create_dir_all(inputs_dir)?;
        let path = inputs_dir.join(name);
        if !path.exists() {
            fs::write(path, text)?;
        }
    }
    Ok(())
}

fn resolve_kde_paths(layer: &mut Value, base: &Path) {
    for key in DISTRIBUTION_KEYS {
        let Some(Value::String(lit)) = layer.get_mut(key) else { continue };
        let trimmed = lit.trim();
        let Some(inner) = trimmed
            .strip_prefix("kde(")
            .and_then(|r| r.strip_suffix(')'))
        else {
            continue;
        };
        let Some((path, rest)) = inner.split_once(',') else { continue };
        let path = path.trim();
        if path.starts_with('[') || Path::new(path).is_absolute() {
            continue;
        }
        *lit = format!("kde({},{})", base.join(path).display(), rest.trim());
    }
}

/// Overlays `over` onto `base`. Keys unknown to `base` are rejected so that
/// typos surface as config errors.
fn merge(base: &mut Value, over: Value, path: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => return Err(CliError::Config(format!("unknown key `{here}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// `a.b.c=value` as a nested object. The value is parsed as TOML and falls
/// back to a plain string.
pub fn override_value(text: &str) -> Result<Value> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{text}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override `{text}` has an empty key")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("parsed key"))?,
        Err(_) => Value::String(raw.trim().to_string()),
    };
    Ok(key.rsplit('.').fold(value, |acc, part| {
        let mut m = Map::new();
        m.insert(part.to_string(), acc);
        Value::Object(m)
    }))
}

fn finish(mut merged: Value) -> Result<PipelineConfig> {
    for key in DISTRIBUTION_KEYS {
        if let Some(Value::String(lit)) = merged.get(key) {
            let dist = parse_literal(lit, None)?;
            merged[key] = serde_json::to_value(dist)?;
        }
    }
    let config: PipelineConfig =
        serde_json::from_value(merged).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}
