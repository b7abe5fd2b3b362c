//! Plain-text `key = value` config files merged under command-line flags.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::Command;

use crate::failure::Failure;

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// keys are flag names without the leading dashes.
pub fn parse(text: &str, path: &Path) -> Result<Vec<(String, String)>, Failure> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Failure::usage(format!("{}:{}: expected key = value, got {line:?}", path.display(), n + 1))
        })?;
        pairs.push((key.trim().replace('_', "-"), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Path given to `--config`, if any.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn given_on_command_line(args: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&prefix)
    })
}

/// Inserts the flags from a `--config` file right after the subcommand name,
/// skipping every flag the command line already sets.
pub fn merge(args: Vec<OsString>, cli: &Command) -> Result<Vec<OsString>, Failure> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(sub_name) = args.get(1).map(|a| a.to_string_lossy().into_owned()) else {
        return Ok(args);
    };
    let Some(sub) = cli.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, &e))?;
    let mut extra: Vec<OsString> = Vec::new();
    for (key, value) in parse(&text, path)? {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && !a.is_hide_set() && key != "config")
            .ok_or_else(|| {
                Failure::usage(format!("{}: unknown key {key:?} for {sub_name}", path.display()))
            })?;
        if given_on_command_line(&args, &key) {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}").into());
            extra.push(value.into());
        } else {
            match value.as_str() {
                "true" | "1" | "yes" => extra.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                _ => {
                    return Err(Failure::usage(format!(
                        "{}: {key} expects true or false, got {value:?}",
                        path.display()
                    )))
                }
            }
        }
    }
    let mut merged = args[..2].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&args[2..]);
    Ok(merged)
}
