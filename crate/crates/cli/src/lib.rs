//! Front end for the segattn engine.
//!
//! Every command takes its settings from built-in defaults, an optional
//! `--config` file of `key = value` lines, and flags, with later sources
//! winning. Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, Command};

pub mod commands;
pub mod config;
pub mod dataset;

use config::{flag_name, Key, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<segattn::Error> for CliError {
    fn from(e: segattn::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

struct CommandSpec {
    name: &'static str,
    about: &'static str,
    keys: fn() -> Vec<Key>,
    run: fn(Settings) -> Result<(), CliError>,
}

const COMMANDS: [CommandSpec; 5] = [
    CommandSpec {
        name: "train",
        about: "Train a generator, optionally against a discriminator",
        keys: config::train_keys,
        run: commands::train,
    },
    CommandSpec {
        name: "evaluate",
        about: "Score checkpoints on a dataset split",
        keys: config::evaluate_keys,
        run: commands::evaluate,
    },
    CommandSpec {
        name: "compare",
        about: "Comparison table (PA, dPA, mIoU, dmIoU) over two or more checkpoints",
        keys: config::compare_keys,
        run: commands::compare,
    },
    CommandSpec {
        name: "gradcheck",
        about: "Finite-difference check of every differentiable component",
        keys: config::gradcheck_keys,
        run: commands::gradcheck,
    },
    CommandSpec {
        name: "synth",
        about: "Write a synthetic dataset as PGM files plus manifest.tsv",
        keys: config::synth_keys,
        run: commands::synth,
    },
];

fn cli() -> Command {
    let mut root = Command::new("segattn")
        .about("Attention U-net segmentation and GAN training engine")
        .version(clap::crate_version!())
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in &COMMANDS {
        let mut sub = Command::new(spec.name).about(spec.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("file of `key = value` lines; flags take precedence"),
        );
        for k in (spec.keys)() {
            let mut help = k.help.to_string();
            match k.default {
                Some("") | None => {}
                Some(d) => help.push_str(&format!(" [default: {d}]")),
            }
            sub = sub.arg(
                Arg::new(k.name)
                    .long(flag_name(k.name))
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .allow_negative_numbers(true)
                    .help(help),
            );
        }
        root = root.subcommand(sub);
    }
    root
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let spec = COMMANDS.iter().find(|c| c.name == name).expect("registered command");
    let keys = (spec.keys)();
    let flags: Vec<(&'static str, String)> = keys
        .iter()
        .filter_map(|k| sub.get_one::<String>(k.name).map(|v| (k.name, v.clone())))
        .collect();
    let config = sub.get_one::<PathBuf>("config");
    let result = Settings::resolve(spec.name, &keys, config.map(PathBuf::as_path), &flags).and_then(spec.run);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let kind = match e {
                CliError::Usage(_) => "usage error",
                CliError::Runtime(_) => "error",
            };
            eprintln!("segattn {name}: {kind}: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_tree_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn bad_flag_is_usage_error() {
        assert_eq!(run(["segattn", "train", "--no-such-flag", "1"]), 1);
        assert_eq!(run(["segattn"]), 1);
        assert_eq!(run(["segattn", "--help"]), 0);
    }
}
