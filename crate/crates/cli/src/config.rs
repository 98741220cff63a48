//! key=value config files merged into the argument list ahead of the
//! command-line flags, so explicit flags override them.

use std::ffi::OsString;

use clap::{ArgAction, Command};

use crate::UsageError;

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key=value, got {line:?}", i + 1)))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn find_long<'a>(cmd: &'a Command, long: &str) -> Option<&'a clap::Arg> {
    cmd.get_arguments().find(|a| a.get_long() == Some(long))
}

/// Inserts the config entries that apply to `sub` right after the
/// subcommand token. Keys no command knows are an error; keys belonging
/// only to other subcommands are ignored.
pub fn merge(argv: &[OsString], root: &Command, sub: &str, entries: &[(String, String)]) -> Result<Vec<OsString>, UsageError> {
    let subcmd = root.find_subcommand(sub).expect("parsed subcommand exists");
    let mut inserted: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        let arg = match find_long(subcmd, key).or_else(|| find_long(root, key)) {
            Some(a) => a,
            None if root.get_subcommands().any(|c| find_long(c, key).is_some()) => continue,
            None => return Err(UsageError(format!("unknown config key {key:?}"))),
        };
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" | "1" | "yes" => inserted.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                other => return Err(UsageError(format!("config key {key:?}: expected a boolean, got {other:?}"))),
            }
        } else {
            inserted.push(format!("--{key}").into());
            inserted.push(value.into());
        }
    }
    let at = argv.iter().skip(1).position(|a| a == sub).map(|i| i + 2).expect("subcommand token present");
    let mut out = argv[..at].to_vec();
    out.extend(inserted);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn parses_lines() {
        let e = parse("# c\nseed = 7\n\nbatch_size=4\n--mode=3d\n").unwrap();
        assert_eq!(e, vec![("seed".into(), "7".into()), ("batch-size".into(), "4".into()), ("mode".into(), "3d".into())]);
        assert!(parse("seed 7").is_err());
    }

    #[test]
    fn inserts_after_subcommand() {
        let root = crate::args::Cli::command();
        let argv: Vec<OsString> = ["csg", "--mode", "2d", "train-sup", "--epochs", "3"].iter().map(Into::into).collect();
        let entries = vec![("epochs".to_string(), "9".to_string()), ("no-dropout".into(), "true".into()), ("ckpt".into(), "x".into())];
        let out = merge(&argv, &root, "train-sup", &entries).unwrap();
        let want: Vec<OsString> = ["csg", "--mode", "2d", "train-sup", "--epochs", "9", "--no-dropout", "--epochs", "3"]
            .iter()
            .map(Into::into)
            .collect();
        assert_eq!(out, want);
        assert!(merge(&argv, &root, "train-sup", &[("bogus".into(), "1".into())]).is_err());
    }
}
