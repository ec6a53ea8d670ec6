//! Optional `key = value` config files.
//!
//! Each entry becomes `--key value` (or a bare `--key` for `true`; `false`
//! drops it) inserted directly after the subcommand, so flags given on the
//! command line override the file.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", i + 1);
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("config line {}: invalid key `{}`", i + 1, k.trim());
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn config_to_args(entries: &[(String, String)]) -> Vec<OsString> {
    let mut args = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => args.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                args.push(format!("--{k}").into());
                args.push(v.into());
            }
        }
    }
    args
}

/// Removes `--config PATH` / `--config=PATH` from `argv` and splices the file's
/// entries in after the subcommand (`argv[1]`).
pub fn expand_config_args(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path: Option<OsString> = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = Some(it.next().context("--config needs a path")?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let p = Path::new(&path);
    let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
    let extra = config_to_args(&parse_config(&text)?);
    if rest.len() < 2 {
        bail!("--config must follow a subcommand");
    }
    let tail = rest.split_off(2);
    rest.extend(extra);
    rest.extend(tail);
    Ok(rest)
}
