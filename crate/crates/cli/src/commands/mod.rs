//! Subcommand registry and dispatch.

use crate::args::{parse_flags, usage_text, ArgMap, Flag};

mod attack_eval;
mod corrupt;
mod eval_corruption;
mod fourier;
mod gradviz;
mod mixed_test;
mod report;
mod theory_check;
mod train;

pub enum CmdError {
    Usage(String),
    Runtime(String),
}

impl CmdError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        Self::Runtime(e.to_string())
    }

    pub fn usage(e: impl std::fmt::Display) -> Self {
        Self::Usage(e.to_string())
    }
}

pub type CmdResult = Result<(), CmdError>;

pub struct CommandSpec {
    pub name: &'static str,
    pub about: &'static str,
    pub flags: &'static [Flag],
    pub run: fn(&ArgMap) -> CmdResult,
}

pub fn registry() -> &'static [CommandSpec] {
    &[
        train::SPEC,
        attack_eval::SPEC,
        corrupt::SPEC,
        eval_corruption::SPEC,
        mixed_test::SPEC,
        fourier::SPEC,
        gradviz::SPEC,
        theory_check::SPEC,
        report::SPEC,
    ]
}

const BINARY: &str = "pdalab";

fn top_level_usage() -> String {
    let mut out = format!("usage: {BINARY} <command> [flags]\n\ncommands:\n");
    for cmd in registry() {
        out.push_str(&format!("  {:<16} {}\n", cmd.name, cmd.about));
    }
    out.push_str(&format!(
        "\nrun '{BINARY} <command> --help' for the command's flags\n"
    ));
    out
}

/// Run one invocation. Exit codes: 0 success, 1 runtime error, 2 usage error.
pub fn dispatch(args: Vec<String>) -> i32 {
    let Some(command_name) = args.first() else {
        eprint!("{}", top_level_usage());
        return 2;
    };
    if command_name == "--help" || command_name == "help" {
        print!("{}", top_level_usage());
        return 0;
    }
    let Some(cmd) = registry().iter().find(|c| c.name == *command_name) else {
        eprintln!("unknown command '{command_name}'\n");
        eprint!("{}", top_level_usage());
        return 2;
    };
    let rest = &args[1..];
    if rest.iter().any(|a| a == "--help") {
        print!("{}", usage_text(BINARY, cmd.name, cmd.about, cmd.flags));
        return 0;
    }
    let parsed = match parse_flags(rest, cmd.flags) {
        Ok(parsed) => parsed,
        Err(msg) => {
            eprintln!("{command_name}: {msg}\n");
            eprint!("{}", usage_text(BINARY, cmd.name, cmd.about, cmd.flags));
            return 2;
        }
    };
    match (cmd.run)(&parsed) {
        Ok(()) => 0,
        Err(CmdError::Usage(msg)) => {
            eprintln!("{command_name}: {msg}\n");
            eprint!("{}", usage_text(BINARY, cmd.name, cmd.about, cmd.flags));
            2
        }
        Err(CmdError::Runtime(msg)) => {
            eprintln!("{command_name}: {msg}");
            1
        }
    }
}

// shared helpers for command implementations

pub(crate) fn load_model(path: &str) -> Result<pdalab_core::nn::Model, CmdError> {
    pdalab_core::nn::load_checkpoint(path)
        .map(|(model, _)| model)
        .map_err(CmdError::runtime)
}

pub(crate) fn load_data(spec: &str) -> Result<pdalab_core::data::Dataset, CmdError> {
    pdalab_core::data::resolve_dataset(spec).map_err(CmdError::runtime)
}

/// Resolve a corruption kind list: `all`, group names, or comma-separated
/// kind names.
pub(crate) fn resolve_kinds(value: &str) -> Result<Vec<&'static str>, CmdError> {
    use pdalab_core::corruptions::{corruption_names, kinds_in_group, CorruptionGroup};
    if value == "all" {
        return Ok(corruption_names());
    }
    let mut out: Vec<&'static str> = Vec::new();
    for token in value.split(',').filter(|t| !t.is_empty()) {
        if let Some(group) = CorruptionGroup::parse(token) {
            for kind in kinds_in_group(group) {
                if !out.contains(&kind) {
                    out.push(kind);
                }
            }
            continue;
        }
        match corruption_names().iter().find(|k| **k == token) {
            Some(kind) => {
                if !out.contains(kind) {
                    out.push(kind);
                }
            }
            None => {
                return Err(CmdError::usage(format!(
                    "unknown corruption or group '{token}'"
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(CmdError::usage("no corruption kinds selected"));
    }
    Ok(out)
}
