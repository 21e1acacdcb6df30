//! `--config` files: one `key = value` per line, `#` starts a comment, keys
//! are long flag names without the dashes. Switches take `true` or `false`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Command;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn parse(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError(format!("line {}: expected key = value", n + 1)));
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(ConfigError(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError(format!("line {}: duplicate key {key:?}", n + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Path given to `--config`, if any.
pub fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1).map(|a| a.to_string_lossy());
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().map(|p| PathBuf::from(p.as_ref()));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Command-line arguments extended by the config entries whose flags were
/// not given on the command line. Keys must name a flag of the chosen
/// subcommand.
pub fn merge(argv: &[OsString], path: &Path, root: &Command) -> Result<Vec<OsString>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let entries = parse(&text)?;

    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let mut sub = None;
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--config" {
            i += 2;
            continue;
        }
        if !args[i].starts_with('-') {
            sub = root.find_subcommand(&args[i]);
            break;
        }
        i += 1;
    }
    let sub = sub.ok_or_else(|| ConfigError("a subcommand must precede config entries".into()))?;
    let given: Vec<&str> = args
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();

    let mut out = argv.to_vec();
    for (key, value) in entries {
        if key == "config" {
            return Err(ConfigError("config files cannot include other config files".into()));
        }
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| ConfigError(format!("unknown config key {key:?} for {}", sub.get_name())))?;
        if given.contains(&key.as_str()) {
            continue;
        }
        if arg.get_action().takes_values() {
            out.push(format!("--{key}").into());
            out.push(value.into());
        } else {
            match value.as_str() {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(ConfigError(format!("{key} takes true or false, got {value:?}"))),
            }
        }
    }
    Ok(out)
}
