//! `--config` files: `key=value` lines whose keys are long flag names of the
//! chosen subcommand. Keys already given on the command line are skipped, so
//! flags win over the file and the file wins over defaults.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::{ArgAction, Command};

use crate::UsageError;

pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>, UsageError> {
    let text = fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        pairs.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(pairs)
}

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

fn given(args: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag.as_str() || s.starts_with(&prefix)
    })
}

/// Appends config-file entries to `args` as flags. Returns `args` unchanged
/// when no subcommand or no `--config` is present.
pub fn merge(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>, UsageError> {
    let Some(name) = args.iter().skip(1).find(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(args);
    };
    let Some(sub) = cmd.find_subcommand(name) else {
        return Ok(args);
    };
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let mut out = args.clone();
    for (key, value) in parse_file(Path::new(&path))? {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| UsageError(format!("unknown config key `{key}` for `{}`", sub.get_name())))?;
        if given(&args, &key) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(UsageError(format!("config key `{key}` expects true or false, got `{value}`"))),
            },
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}
