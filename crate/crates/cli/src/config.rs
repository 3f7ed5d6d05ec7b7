//! `--config FILE` support: a JSON object whose keys are long flag names.
//!
//! Top-level scalar and array values apply to whichever subcommand runs; an
//! object under a subcommand's name applies only to that subcommand. Values
//! for flags that also appear on the command line are dropped, so explicit
//! flags always win.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{Map, Value};

pub const COMMANDS: [&str; 7] = ["mine", "index", "retrieve", "targets", "synth", "refresh", "eval"];

fn config_path(argv: &[String]) -> Option<&str> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().map(String::as_str);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p);
        }
    }
    None
}

fn flag_given(argv: &[String], flag: &str) -> bool {
    argv.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")))
}

fn push_value(args: &mut Vec<String>, flag: &str, value: &Value) -> Result<()> {
    match value {
        Value::Bool(true) => args.push(flag.to_string()),
        Value::Bool(false) | Value::Null => {}
        Value::String(s) => {
            args.push(flag.to_string());
            args.push(s.clone());
        }
        Value::Number(n) => {
            args.push(flag.to_string());
            args.push(n.to_string());
        }
        Value::Array(items) => {
            for item in items {
                if matches!(item, Value::Array(_) | Value::Object(_)) {
                    bail!("config key `{flag}`: nested arrays and objects are not flag values");
                }
                push_value(args, flag, item)?;
            }
        }
        Value::Object(_) => bail!("config key `{flag}`: objects are only allowed as subcommand sections"),
    }
    Ok(())
}

/// Flags from `config` for `command`, minus those already on the command line.
pub fn config_args(config: &Map<String, Value>, command: Option<&str>, argv: &[String]) -> Result<Vec<String>> {
    let mut entries: Vec<(&String, &Value)> = config
        .iter()
        .filter(|(k, v)| !(v.is_object() && COMMANDS.contains(&k.as_str())))
        .collect();
    if let Some(Value::Object(section)) = command.and_then(|c| config.get(c)) {
        entries.retain(|(k, _)| !section.contains_key(*k));
        entries.extend(section.iter());
    }
    let mut args = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        if flag_given(argv, &flag) {
            continue;
        }
        push_value(&mut args, &flag, value)?;
    }
    Ok(args)
}

/// `argv` with the config file's flags appended.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(path)).with_context(|| format!("reading config {path}"))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {path}"))?;
    let Value::Object(map) = value else {
        bail!("config {path} must be a JSON object");
    };
    let command = argv.iter().skip(1).find(|a| COMMANDS.contains(&a.as_str())).cloned();
    let extra = config_args(&map, command.as_deref(), &argv)?;
    let mut out = argv;
    out.extend(extra);
    Ok(out)
}
