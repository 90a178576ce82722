//! `--config` files: one `key = value` per line, `#` starts a comment. Keys
//! are long flag names of the chosen subcommand. Boolean flags take `true`
//! or `false`. The file's flags are placed before the command-line flags so
//! the latter win.

use std::path::Path;

use crate::CliError;

/// Expands a `--config FILE` argument into flags after the subcommand name.
pub fn merge(mut args: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some((at, len, path)) = find(&args) else {
        return Ok(args);
    };
    args.drain(at..at + len);
    let flags = read(Path::new(&path))?;
    let Some(sub) = subcommand_index(&args) else {
        return Ok(args);
    };
    args.splice(sub + 1..sub + 1, flags);
    Ok(args)
}

fn find(args: &[String]) -> Option<(usize, usize, String)> {
    for (i, a) in args.iter().enumerate().skip(1) {
        if a == "--" {
            return None;
        }
        if a == "--config" {
            return args.get(i + 1).map(|p| (i, 2, p.clone()));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some((i, 1, p.to_string()));
        }
    }
    None
}

fn subcommand_index(args: &[String]) -> Option<usize> {
    (1..args.len()).find(|&i| !args[i].starts_with('-'))
}

fn read(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|m| CliError::Input(format!("{}: {m}", path.display())))
}

fn parse(text: &str) -> Result<Vec<String>, String> {
    let mut flags = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        let key = key.trim().trim_start_matches('-').replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(format!("line {}: invalid key '{}'", n + 1, key));
        }
        match value.trim() {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            v => flags.push(format!("--{key}={v}")),
        }
    }
    Ok(flags)
}
