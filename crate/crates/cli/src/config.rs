//! Flat JSON config files. `--config FILE` is expanded into ordinary flags
//! placed directly after the subcommand, so anything given on the command
//! line (which comes later) wins, and unknown keys fail like unknown flags.

use std::ffi::OsString;

use crate::error::CliError;

fn scalar(key: &str, v: &serde_json::Value) -> Result<Option<String>, CliError> {
    use serde_json::Value;
    Ok(match v {
        Value::Null | Value::Bool(false) => None,
        Value::Bool(true) => Some(String::new()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => {
            let parts = items
                .iter()
                .map(|x| match x {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    _ => Err(CliError::config(format!("{key}: lists may hold only strings and numbers"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(parts.join(","))
        }
        Value::Object(_) => return Err(CliError::config(format!("{key}: config file must be flat"))),
    })
}

fn config_flags(text: &str) -> Result<Vec<OsString>, CliError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config file: {e}")))?;
    let serde_json::Value::Object(map) = value else {
        return Err(CliError::config("config file must hold a JSON object".into()));
    };
    let mut out = Vec::new();
    for (key, v) in &map {
        let flag = format!("--{}", key.replace('_', "-"));
        match scalar(key, v)? {
            None => {}
            Some(s) if s.is_empty() && v.is_boolean() => out.push(flag.into()),
            Some(s) => out.push(format!("{flag}={s}").into()),
        }
    }
    Ok(out)
}

/// Replace `--config FILE` in `args` by the flags the file holds.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path: Option<OsString> = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or_else(|| CliError::config("--config needs a file".into()))?);
        } else if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            path = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::config(format!("config file {}: {e}", path.to_string_lossy())))?;
    let flags = config_flags(&text)?;
    let depth = if rest.get(1).is_some_and(|a| a == "eval") { 3 } else { 2 };
    let at = depth.min(rest.len());
    rest.splice(at..at, flags);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[OsString]) -> Vec<String> {
        v.iter().map(|s| s.to_string_lossy().into_owned()).collect()
    }

    #[test]
    fn flags_from_flat_object() {
        let f = config_flags(r#"{"seed": 7, "normalize": true, "quiet": false, "dev_relations": ["a", "b"], "out": "x"}"#)
            .unwrap();
        assert_eq!(strs(&f), ["--dev-relations=a,b", "--normalize", "--out=x", "--seed=7"]);
    }

    #[test]
    fn nested_rejected() {
        assert!(config_flags(r#"{"a": {"b": 1}}"#).is_err());
        assert!(config_flags("[1]").is_err());
    }

    #[test]
    fn inserted_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"k": 5}"#).unwrap();
        let args: Vec<OsString> =
            ["nes", "eval", "compare", "--config", p.to_str().unwrap(), "--k", "9"].iter().map(OsString::from).collect();
        assert_eq!(strs(&expand(args).unwrap()), ["nes", "eval", "compare", "--k=5", "--k", "9"]);
    }
}
