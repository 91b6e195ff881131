//! Line-based `key = value` config files. Keys are long flag names of the
//! chosen command; a value given on the command line wins over the file.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};

use crate::CliError;

/// `(line, key, value)` triples in file order.
pub fn parse(text: &str) -> Result<Vec<(usize, String, String)>, CliError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!("config line {}: expected `key = value`", i + 1)));
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Config(format!("config line {}: empty key", i + 1)));
        }
        if !seen.insert(key.clone()) {
            return Err(CliError::Config(format!("config line {}: `{key}` set twice", i + 1)));
        }
        let value = value.trim().trim_matches('"').to_string();
        out.push((i + 1, key, value));
    }
    Ok(out)
}

/// Appends the file's settings to `argv` for every flag the command line
/// left unset.
pub fn merge(
    mut argv: Vec<OsString>,
    root: &Command,
    matches: &ArgMatches,
    path: &Path,
) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let Some((name, sub)) = matches.subcommand() else {
        return Ok(argv);
    };
    let mut root = root.clone();
    root.build();
    let cmd = root
        .find_subcommand(name)
        .ok_or_else(|| CliError::Config(format!("unknown command {name}")))?;
    for (line, key, value) in parse(&text)? {
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && !matches!(key.as_str(), "config" | "help" | "version"))
            .ok_or_else(|| CliError::Config(format!("config line {line}: unknown key `{key}` for `{name}`")))?;
        if sub.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = OsString::from(format!("--{key}"));
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => argv.push(flag),
                "false" => {}
                other => {
                    return Err(CliError::Config(format!(
                        "config line {line}: `{key}` expects true or false, got `{other}`"
                    )))
                }
            },
            _ => {
                argv.push(flag);
                argv.push(value.into());
            }
        }
    }
    Ok(argv)
}
