//! Plain-text configuration files.
//!
//! Each non-blank, non-`#` line is `key = value`, where `key` is a long flag
//! name without the dashes. Values become flags inserted ahead of those typed
//! on the command line, so typed flags override them. `true` turns on a
//! switch and `false` leaves it off.

use std::ffi::OsString;
use std::path::Path;

use crate::error::{fail, Category};

const SUBCOMMANDS: &[&str] = &["gen", "synthetic", "toylm-corpus", "train", "eval", "ablate", "states", "layers", "loss", "bound", "verify", "regimes"];

pub fn parse(text: &str, origin: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(fail(Category::Config, format!("{}:{}: expected key = value", origin.display(), i + 1)));
        };
        let key = k.trim().trim_start_matches("--");
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(fail(Category::Config, format!("{}:{}: bad key {key:?}", origin.display(), i + 1)));
        }
        pairs.push((key.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub fn to_flags(pairs: &[(String, String)]) -> Vec<OsString> {
    let mut out = Vec::new();
    for (k, v) in pairs {
        match v.as_str() {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    out
}

/// Rewrites `args` with the flags of any `--config FILE` inserted directly
/// after the subcommand path.
pub fn expand(args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let mut path = None;
    let mut kept = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            match it.next() {
                Some(p) => path = Some(p),
                None => return Err(fail(Category::Usage, "--config needs a file path")),
            }
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        } else {
            kept.push(a);
        }
    }
    let Some(path) = path else { return Ok(kept) };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| fail(Category::Io, format!("reading config {}: {e}", path.display())))?;
    let flags = to_flags(&parse(&text, path)?);
    let insert_at = 1 + kept.iter().skip(1).take_while(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())).count();
    kept.splice(insert_at..insert_at, flags);
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_pairs_and_switches() {
        let pairs = parse("# c\nepochs = 5\n--include-positive=true\nshuffle = false\n\n", Path::new("f")).unwrap();
        assert_eq!(to_flags(&pairs), os(&["--epochs", "5", "--include-positive"]));
        assert!(parse("nonsense", Path::new("f")).is_err());
    }

    #[test]
    fn inserts_after_subcommands() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        std::fs::write(&file, "epochs = 5\nseed = 2\n").unwrap();
        let f = file.to_str().unwrap();
        let out = expand(os(&["bin", "ablate", "states", "--config", f, "--seed", "9"])).unwrap();
        assert_eq!(out, os(&["bin", "ablate", "states", "--epochs", "5", "--seed", "2", "--seed", "9"]));
        let out = expand(os(&["bin", &format!("--config={f}"), "train", "--data", "x"])).unwrap();
        assert_eq!(out, os(&["bin", "train", "--epochs", "5", "--seed", "2", "--data", "x"]));
    }
}
