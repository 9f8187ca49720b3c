use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// One settable key. The same name is used in config files; the flag is the
/// name with underscores turned into dashes.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    /// `None` marks a required key.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: Some(default),
        help,
    }
}

const fn required(name: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: None,
        help,
    }
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// Keys shared by every command that reads a dataset.
pub const DATA_KEYS: [Key; 5] = [
    key("data", "synthetic:cells", "synthetic:blobs, synthetic:cells, or a manifest.tsv path"),
    key("size", "64", "image size, `N` or `HxW`; both multiples of 16"),
    key("train_count", "24", "synthetic training images"),
    key("test_count", "5", "synthetic test images"),
    key("data_seed", "0", "seed of the synthetic generator"),
];

pub fn train_keys() -> Vec<Key> {
    let mut keys = vec![
        key(
            "arch",
            "unet",
            "unet, attention_unet, advanced_attention_unet, full_attention_unet",
        ),
        key("disc", "none", "none, d4, d6, d4v, d5v"),
        key("base_channels", "8", "channels at the top encoder level"),
        key("upsample", "transposed", "decoder upsampling: transposed or nearest"),
    ];
    keys.extend(DATA_KEYS);
    keys.extend([
        key("lr", "0.0001", "learning rate"),
        key("beta1", "0.9", "first-moment decay"),
        key("beta2", "0.999", "second-moment decay"),
        key("eps", "1e-8", "denominator epsilon"),
        key("epochs", "50", "training epochs"),
        key("batch_size", "2", "samples per optimizer step"),
        key("dropout", "0.5", "discriminator dropout rate"),
        key("lambda_adv", "0.1", "weight of the adversarial loss term"),
        key("d_steps", "1", "discriminator steps per epoch"),
        key("seed", "0", "initialisation, shuffle and dropout seed"),
        key("shuffle", "true", "shuffle the training set every epoch"),
        key("name", "", "model name in reports (default: derived from the architecture)"),
        required("out", "output directory"),
    ]);
    keys
}

fn eval_keys(extra: &[Key]) -> Vec<Key> {
    let mut keys = vec![required("checkpoints", "comma-separated checkpoint paths")];
    keys.extend(DATA_KEYS);
    keys.extend([
        key("split", "test", "dataset split to score: train or test"),
        key("best_k", "3", "images in the best-k summary"),
        key("baseline", "", "model the deltas are taken against (default: U-net if present, else the first)"),
        key("empty_class", "one", "class absent from prediction and target: one or exclude"),
    ]);
    keys.extend_from_slice(extra);
    keys.push(required("out", "output directory"));
    keys
}

pub fn evaluate_keys() -> Vec<Key> {
    eval_keys(&[key("dump", "false", "write predicted masks as PGM under out/pred")])
}

pub fn compare_keys() -> Vec<Key> {
    eval_keys(&[key("scope", "all", "table scope: all or best")])
}

pub fn gradcheck_keys() -> Vec<Key> {
    vec![
        key("seeds", "5", "number of seeds, starting at 0"),
        key("components", "", "comma-separated component names (default: all)"),
        key("out", "", "optional report file"),
    ]
}

pub fn synth_keys() -> Vec<Key> {
    vec![
        key("style", "cells", "blobs or cells"),
        key("size", "64", "image size, `N` or `HxW`"),
        key("train_count", "24", "training images"),
        key("test_count", "5", "test images"),
        key("data_seed", "0", "generator seed"),
        required("out", "output directory"),
    ]
}

/// Where a value came from; later sources override earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    Inherited,
    File,
    Flag,
}

#[derive(Debug, Clone)]
pub struct Settings {
    command: &'static str,
    values: BTreeMap<&'static str, (String, Source)>,
}

/// Parses `key = value` lines. `#` starts a comment.
pub fn parse_config_file(text: &str, origin: &str, keys: &[Key], command: &str) -> Result<Vec<(&'static str, String)>, CliError> {
    let mut out: Vec<(&'static str, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = || format!("{origin}:{}", n + 1);
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}: expected `key = value`, got `{line}`", at())))?;
        let (k, v) = (k.trim(), v.trim());
        let spec = keys.iter().find(|key| key.name == k).ok_or_else(|| {
            let valid: Vec<_> = keys.iter().map(|key| key.name).collect();
            CliError::Usage(format!(
                "{}: unknown key `{k}` for `{command}`; valid keys: {}",
                at(),
                valid.join(", ")
            ))
        })?;
        if out.iter().any(|(seen, _)| *seen == spec.name) {
            return Err(CliError::Usage(format!("{}: key `{k}` set twice", at())));
        }
        out.push((spec.name, v.to_string()));
    }
    Ok(out)
}

impl Settings {
    /// Merges defaults, an optional config file and flags, in that order.
    pub fn resolve(
        command: &'static str,
        keys: &[Key],
        config: Option<&Path>,
        flags: &[(&'static str, String)],
    ) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for k in keys {
            if let Some(d) = k.default {
                values.insert(k.name, (d.to_string(), Source::Default));
            }
        }
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config_file(&text, &path.display().to_string(), keys, command)? {
                values.insert(k, (v, Source::File));
            }
        }
        for (k, v) in flags {
            values.insert(k, (v.clone(), Source::Flag));
        }
        for k in keys {
            if !values.contains_key(k.name) {
                return Err(CliError::Usage(format!(
                    "missing required key `{}` (flag --{} or config file)",
                    k.name,
                    flag_name(k.name)
                )));
            }
        }
        Ok(Self { command, values })
    }

    /// Fills `key` from a lower-priority source than the file, unless it was set explicitly.
    pub fn inherit(&mut self, key: &'static str, value: &str) {
        if let Some(entry) = self.values.get_mut(key) {
            if entry.1 == Source::Default {
                *entry = (value.to_string(), Source::Inherited);
            }
        }
    }

    pub fn get(&self, key: &str) -> &str {
        match self.values.get(key) {
            Some((v, _)) => v,
            None => panic!("`{key}` is not a key of `{}`", self.command),
        }
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        self.values.get(key).map(|(_, s)| *s)
    }

    pub fn parse<T>(&self, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let v = self.get(key);
        v.parse()
            .map_err(|e| CliError::Usage(format!("invalid value `{v}` for `{key}`: {e}")))
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(CliError::Usage(format!("invalid value `{v}` for `{key}`: expected true or false"))),
        }
    }

    /// Comma-separated list with empty items dropped.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }

    /// Sorted `key=value` lines of the effective configuration. The output
    /// directory is left out so runs into different directories compare equal.
    pub fn echo(&self) -> Vec<String> {
        let mut lines = vec![format!("command={}", self.command)];
        lines.extend(
            self.values
                .iter()
                .filter(|(k, _)| **k != "out")
                .map(|(k, (v, _))| format!("{k}={v}")),
        );
        lines
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# comment\nepochs = 7\nlr=0.01  # inline\nout = x\n").unwrap();
        let s = Settings::resolve("train", &train_keys(), Some(&cfg), &[("lr", "0.5".into())]).unwrap();
        assert_eq!(s.get("epochs"), "7");
        assert_eq!(s.get("lr"), "0.5");
        assert_eq!(s.get("batch_size"), "2");
        assert_eq!(s.source("epochs"), Some(Source::File));
    }

    #[test]
    fn unknown_key_names_line() {
        let err = parse_config_file("epochs=1\n\nlearning_rate=3\n", "a.cfg", &train_keys(), "train").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a.cfg:3") && msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn malformed_and_duplicate_lines() {
        assert!(parse_config_file("epochs 3", "f", &train_keys(), "train").is_err());
        assert!(parse_config_file("epochs=3\nepochs=4", "f", &train_keys(), "train").is_err());
    }

    #[test]
    fn missing_required_key() {
        let err = Settings::resolve("train", &train_keys(), None, &[]).unwrap_err();
        assert!(err.to_string().contains("out"));
    }

    #[test]
    fn echo_is_sorted_and_skips_out() {
        let s = Settings::resolve("synth", &synth_keys(), None, &[("out", "/tmp/x".into())]).unwrap();
        let echo = s.echo();
        assert_eq!(echo[0], "command=synth");
        let rest = &echo[1..];
        let mut sorted = rest.to_vec();
        sorted.sort();
        assert_eq!(rest, sorted.as_slice());
        assert!(!echo.iter().any(|l| l.starts_with("out=")));
    }

    #[test]
    fn inherit_only_replaces_defaults() {
        let mut s = Settings::resolve("compare", &compare_keys(), None, &[("checkpoints", "a,b".into()), ("out", "o".into()), ("size", "32".into())]).unwrap();
        s.inherit("size", "64");
        s.inherit("data_seed", "9");
        assert_eq!(s.get("size"), "32");
        assert_eq!(s.get("data_seed"), "9");
        assert_eq!(s.list("checkpoints"), ["a", "b"]);
    }

    #[test]
    fn typed_parse_errors_are_usage() {
        let s = Settings::resolve("train", &train_keys(), None, &[("out", "o".into()), ("epochs", "many".into())]).unwrap();
        assert!(matches!(s.parse::<usize>("epochs"), Err(CliError::Usage(_))));
        assert!(s.bool("shuffle").unwrap());
    }
}
