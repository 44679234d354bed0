//! `eval-corruption`: CE/mCE/RmCE of a model against a baseline on a suite.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pdalab_core::corruptions::load_suite_manifest;
use pdalab_core::metrics::{build_error_table, build_report, write_report_csv};

use crate::args::{ArgMap, Flag};
use crate::commands::{load_data, load_model, CmdError, CmdResult, CommandSpec};

pub const SPEC: CommandSpec = CommandSpec {
    name: "eval-corruption",
    about: "score a model's corruption robustness (CE, mCE, relative mCE)",
    flags: &[
        Flag { name: "model", metavar: "ckpt", required: true, default: None, help: "model checkpoint" },
        Flag { name: "baseline", metavar: "ckpt", required: true, default: None, help: "baseline checkpoint (the 100% row)" },
        Flag { name: "suite", metavar: "dir", required: true, default: None, help: "corruption suite directory" },
        Flag { name: "data", metavar: "dataset", required: true, default: None, help: "clean test set" },
        Flag { name: "out", metavar: "report.csv", required: true, default: None, help: "output report" },
    ],
    run,
};

fn run(args: &ArgMap) -> CmdResult {
    let model = load_model(args.get("model"))?;
    let baseline = load_model(args.get("baseline"))?;
    let clean = load_data(args.get("data"))?;
    let suite_dir = Path::new(args.get("suite"));
    let manifest = load_suite_manifest(suite_dir).map_err(CmdError::runtime)?;

    let model_table = build_error_table(&model, args.get("model"), &clean, suite_dir, &manifest)
        .map_err(CmdError::runtime)?;
    let base_table =
        build_error_table(&baseline, args.get("baseline"), &clean, suite_dir, &manifest)
            .map_err(CmdError::runtime)?;
    let report = build_report(model_table, base_table).map_err(CmdError::runtime)?;

    let mut w = BufWriter::new(File::create(args.get("out")).map_err(CmdError::runtime)?);
    write_report_csv(&report, &mut w).map_err(CmdError::runtime)?;
    w.flush().map_err(CmdError::runtime)?;

    println!(
        "mCE={:.4} relative_mCE={:.4} clean_error={:.4} (baseline clean_error={:.4})",
        report.mce, report.relative_mce, report.model.clean_error, report.baseline.clean_error
    );
    Ok(())
}
